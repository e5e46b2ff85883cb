//! L1-penalized Poisson regression along a decreasing lambda grid.
//!
//! For each lambda the solver maximizes
//!
//! ```text
//! (1/n) * sum(y_i * eta_i - exp(eta_i)) - lambda * sum_j |beta_j|
//! ```
//!
//! with an unpenalized intercept, by IRLS quadratic approximation (outer
//! loop) and cyclic coordinate descent with soft-thresholding (inner loop).
//! Solutions are warm-started down the grid. Coefficients are exactly zero
//! when inactive.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::poisson::{PoissonModel, ETA_CLAMP};

pub const DEFAULT_GRID_SIZE: usize = 100;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;
/// Outer-loop convergence: max absolute coefficient change.
pub const PATH_TOLERANCE: f64 = 1e-7;
const INNER_TOLERANCE: f64 = 1e-9;
const MAX_OUTER: usize = 100;
const MAX_PASSES: usize = 2_000;
const MAX_HALVINGS: usize = 20;

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

/// `max_j |x_j^T (y - mean(y))| / n`: the smallest lambda at which the
/// penalized optimum is the intercept-only model.
pub fn compute_lambda_max(x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    let ybar = mean(y);
    if ybar <= 0.0 {
        return Err(Error::DegenerateResponse);
    }
    let centred: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let nf = n as f64;
    Ok((0..x.ncols())
        .map(|j| {
            x.column(j)
                .iter()
                .zip(&centred)
                .map(|(a, r)| a * r)
                .sum::<f64>()
                .abs()
                / nf
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaGrid {
    pub lambda_max: f64,
    pub values: Vec<f64>,
    pub ratio: f64,
}

/// `size` log-equispaced values from `lambda_max` down to `ratio * lambda_max`.
pub fn make_grid(lambda_max: f64, size: usize, ratio: f64) -> Result<LambdaGrid> {
    if size < 2 {
        return Err(Error::InvalidGrid(format!("need at least 2 values, got {size}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidGrid(format!("ratio must lie in (0, 1), got {ratio}")));
    }
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::InvalidGrid(format!(
            "lambda_max must be positive, got {lambda_max}"
        )));
    }
    let last = size - 1;
    let log_max = lambda_max.ln();
    let log_ratio = ratio.ln();
    let values = (0..size)
        .map(|k| match k {
            0 => lambda_max,
            k if k == last => ratio * lambda_max,
            k => (log_max + log_ratio * k as f64 / last as f64).exp(),
        })
        .collect();
    Ok(LambdaGrid {
        lambda_max,
        values,
        ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenalizedFit {
    pub model: PoissonModel,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LassoPath {
    pub grid: LambdaGrid,
    pub models: Vec<PoissonModel>,
    pub active_sets: Vec<Vec<usize>>,
    pub converged: Vec<bool>,
    /// Validation score per lambda, filled in by cross-validation.
    pub scores: Option<Vec<f64>>,
}

impl LassoPath {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Coordinate-descent state for one (X, y) problem.
pub struct PathSolver<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    n: usize,
    p: usize,
    ybar: f64,
    lambda_max: f64,
}

impl<'a> PathSolver<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a [f64]) -> Result<Self> {
        let lambda_max = compute_lambda_max(x, y)?;
        Ok(PathSolver {
            x,
            y,
            n: x.nrows(),
            p: x.ncols(),
            ybar: mean(y),
            lambda_max,
        })
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn null_model(&self) -> PoissonModel {
        PoissonModel::new(self.ybar.ln(), vec![0.0; self.p])
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.x.as_slice()[j * self.n..(j + 1) * self.n]
    }

    fn linear_predictor(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.n];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (e, v) in eta.iter_mut().zip(self.col(j)) {
                    *e += b * v;
                }
            }
        }
        eta
    }

    fn objective(&self, eta: &[f64], beta: &[f64], lambda: f64) -> f64 {
        let like: f64 = eta
            .iter()
            .zip(self.y)
            .map(|(e, y)| y * e - e.clamp(-ETA_CLAMP, ETA_CLAMP).exp())
            .sum();
        like / self.n as f64 - lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// Solves at one lambda, starting from `warm` (or the null model).
    pub fn solve(&self, lambda: f64, warm: Option<&PoissonModel>) -> PenalizedFit {
        if lambda >= self.lambda_max {
            return PenalizedFit {
                model: self.null_model(),
                converged: true,
                iterations: 0,
            };
        }
        let start = warm.cloned().unwrap_or_else(|| self.null_model());
        let mut b0 = start.intercept;
        let mut beta = start.coefficients;
        let (n, nf) = (self.n, self.n as f64);

        let mut eta = self.linear_predictor(b0, &beta);
        let mut obj = self.objective(&eta, &beta, lambda);

        let mut w = vec![0.0; n];
        let mut r = vec![0.0; n];
        let mut xwx = vec![0.0; self.p];
        let mut xwx_fresh = vec![false; self.p];
        let mut converged = false;
        let mut iterations = 0;
        let mut inner_ok = true;

        while iterations < MAX_OUTER {
            iterations += 1;
            for i in 0..n {
                let mu = eta[i].clamp(-ETA_CLAMP, ETA_CLAMP).exp();
                w[i] = mu;
                r[i] = (self.y[i] - mu) / mu;
            }
            let sum_w: f64 = w.iter().sum();
            xwx_fresh.iter_mut().for_each(|f| *f = false);

            let old_b0 = b0;
            let old_beta = beta.clone();

            let mut weighted_sq = |j: usize, col: &[f64]| -> f64 {
                if !xwx_fresh[j] {
                    xwx[j] = col.iter().zip(&w).map(|(x, w)| w * x * x).sum::<f64>() / nf;
                    xwx_fresh[j] = true;
                }
                xwx[j]
            };

            // One coordinate sweep over `cols`; returns the largest change.
            let mut sweep = |cols: &mut dyn Iterator<Item = usize>,
                             beta: &mut [f64],
                             b0: &mut f64,
                             r: &mut [f64]|
             -> f64 {
                let mut max_delta = 0.0_f64;
                for j in cols {
                    let col = self.col(j);
                    let a = weighted_sq(j, col);
                    if a <= 0.0 {
                        continue;
                    }
                    let g = col
                        .iter()
                        .zip(w.iter().zip(r.iter()))
                        .map(|(x, (w, r))| x * w * r)
                        .sum::<f64>()
                        / nf;
                    let new = soft_threshold(g + a * beta[j], lambda) / a;
                    let delta = new - beta[j];
                    if delta != 0.0 {
                        for (ri, x) in r.iter_mut().zip(col) {
                            *ri -= delta * x;
                        }
                        beta[j] = new;
                        max_delta = max_delta.max(delta.abs());
                    }
                }
                let d0 = w.iter().zip(r.iter()).map(|(w, r)| w * r).sum::<f64>() / sum_w;
                if d0 != 0.0 {
                    r.iter_mut().for_each(|ri| *ri -= d0);
                    *b0 += d0;
                    max_delta = max_delta.max(d0.abs());
                }
                max_delta
            };

            let mut passes = 0;
            loop {
                let full = sweep(&mut (0..self.p), &mut beta, &mut b0, &mut r);
                passes += 1;
                if full < INNER_TOLERANCE {
                    break;
                }
                let active: Vec<usize> = (0..self.p).filter(|&j| beta[j] != 0.0).collect();
                loop {
                    let d = sweep(&mut active.iter().copied(), &mut beta, &mut b0, &mut r);
                    passes += 1;
                    if d < INNER_TOLERANCE || passes >= MAX_PASSES {
                        break;
                    }
                }
                if passes >= MAX_PASSES {
                    inner_ok = false;
                    break;
                }
            }

            let mut new_eta = self.linear_predictor(b0, &beta);
            let mut new_obj = self.objective(&new_eta, &beta, lambda);
            let floor = obj - 1e-13 * obj.abs().max(1.0);
            if !(new_obj >= floor) {
                let target_beta = beta.clone();
                let target_b0 = b0;
                let target_eta = new_eta.clone();
                let mut t = 1.0;
                for _ in 0..MAX_HALVINGS {
                    t *= 0.5;
                    b0 = old_b0 + t * (target_b0 - old_b0);
                    for j in 0..self.p {
                        beta[j] = old_beta[j] + t * (target_beta[j] - old_beta[j]);
                    }
                    for i in 0..n {
                        new_eta[i] = eta[i] + t * (target_eta[i] - eta[i]);
                    }
                    new_obj = self.objective(&new_eta, &beta, lambda);
                    if new_obj >= floor {
                        break;
                    }
                }
                if !(new_obj >= floor) {
                    b0 = old_b0;
                    beta = old_beta;
                    break;
                }
            }
            eta = new_eta;
            obj = new_obj;

            let change = beta
                .iter()
                .zip(&old_beta)
                .map(|(a, b)| (a - b).abs())
                .fold((b0 - old_b0).abs(), f64::max);
            if change < PATH_TOLERANCE {
                converged = inner_ok;
                break;
            }
        }

        PenalizedFit {
            model: PoissonModel::new(b0, beta),
            converged,
            iterations,
        }
    }

    /// Fits `grid.values[..=last]` in order with warm starts.
    pub fn fit_prefix(&self, grid: &LambdaGrid, last: usize) -> LassoPath {
        let mut models = Vec::with_capacity(last + 1);
        let mut converged = Vec::with_capacity(last + 1);
        let mut warm: Option<PoissonModel> = None;
        for &lambda in &grid.values[..=last.min(grid.values.len() - 1)] {
            let fit = self.solve(lambda, warm.as_ref());
            converged.push(fit.converged);
            warm = Some(fit.model.clone());
            models.push(fit.model);
        }
        let active_sets = models.iter().map(PoissonModel::active).collect();
        LassoPath {
            grid: grid.clone(),
            models,
            active_sets,
            converged,
            scores: None,
        }
    }
}

pub fn fit_path(x: &DMatrix<f64>, y: &[f64], grid: &LambdaGrid) -> Result<LassoPath> {
    let solver = PathSolver::new(x, y)?;
    Ok(solver.fit_prefix(grid, grid.values.len() - 1))
}

/// Single-lambda fit from a cold start.
pub fn fit_lambda(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<PenalizedFit> {
    Ok(PathSolver::new(x, y)?.solve(lambda, None))
}

/// `(1/n) * L(model) - lambda * ||beta||_1`.
pub fn penalized_objective(
    model: &PoissonModel,
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
) -> Result<f64> {
    let like = crate::poisson::log_likelihood(model, x, y)?;
    let l1: f64 = model.coefficients.iter().map(|b| b.abs()).sum();
    Ok(like / x.nrows() as f64 - lambda * l1)
}

/// Largest violation of the optimality conditions at `lambda`, on the
/// per-observation gradient scale. Includes the intercept's stationarity.
pub fn kkt_violation(
    model: &PoissonModel,
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
) -> Result<f64> {
    let (g0, g) = crate::poisson::gradient(model, x, y)?;
    let nf = x.nrows() as f64;
    let mut worst = (g0 / nf).abs();
    for (gj, &b) in g.iter().zip(&model.coefficients) {
        let gj = gj / nf;
        let v = if b != 0.0 {
            (gj - lambda * b.signum()).abs()
        } else {
            (gj.abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    Ok(worst)
}
