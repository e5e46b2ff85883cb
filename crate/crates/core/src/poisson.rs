//! Poisson GLM with log link: log-likelihood, deviance, and an unpenalized
//! IRLS (Newton-Raphson) fitter.
//!
//! The log-likelihood drops the `-sum(log(y_i!))` constant everywhere:
//! `L = sum(y_i * eta_i - exp(eta_i))`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Linear predictors are clamped to this range inside `exp` while iterating.
pub const ETA_CLAMP: f64 = 30.0;
pub const IRLS_TOLERANCE: f64 = 1e-8;
pub const IRLS_MAX_ITER: usize = 100;
pub const MAX_HALVINGS: usize = 20;
/// Relative residual norm below which a column counts as collinear.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub column_names: Vec<String>,
}

impl PoissonModel {
    pub fn new(intercept: f64, coefficients: Vec<f64>) -> Self {
        let column_names = (0..coefficients.len()).map(|j| format!("x{j}")).collect();
        PoissonModel {
            intercept,
            coefficients,
            column_names,
        }
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.coefficients.len());
        self.column_names = names;
        self
    }

    /// Indices of nonzero coefficients (exact test).
    pub fn active(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn active_names(&self) -> Vec<String> {
        self.active()
            .into_iter()
            .map(|j| self.column_names[j].clone())
            .collect()
    }

    /// `intercept + X * beta`; errors if any entry is not finite.
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                found: x.ncols(),
            });
        }
        let mut eta = vec![self.intercept; x.nrows()];
        for (j, &b) in self.coefficients.iter().enumerate() {
            if b != 0.0 {
                for (e, v) in eta.iter_mut().zip(x.column(j).iter()) {
                    *e += b * v;
                }
            }
        }
        if eta.iter().all(|e| e.is_finite()) {
            Ok(eta)
        } else {
            Err(Error::LinearPredictorOverflow)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub log_likelihood: f64,
    pub deviance: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood of every accepted iterate, starting point first.
    pub trace: Vec<f64>,
}

fn check_len(y: &[f64], n: usize) -> Result<()> {
    if y.len() == n {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        })
    }
}

fn exp_checked(eta: &[f64]) -> Result<Vec<f64>> {
    let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    if mu.iter().all(|m| m.is_finite()) {
        Ok(mu)
    } else {
        Err(Error::LinearPredictorOverflow)
    }
}

/// `sum(y * eta - exp(eta))` for a given linear predictor.
pub fn log_likelihood_eta(eta: &[f64], y: &[f64]) -> Result<f64> {
    check_len(y, eta.len())?;
    let mu = exp_checked(eta)?;
    Ok(y.iter()
        .zip(eta)
        .zip(&mu)
        .map(|((y, e), m)| y * e - m)
        .sum())
}

pub fn log_likelihood(model: &PoissonModel, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    log_likelihood_eta(&model.linear_predictor(x)?, y)
}

/// Log-likelihood of the saturated model (`mu = y`), same dropped constant.
pub fn saturated_log_likelihood(y: &[f64]) -> f64 {
    y.iter()
        .map(|&y| if y > 0.0 { y * y.ln() - y } else { 0.0 })
        .sum()
}

/// `2 * sum(y log(y / mu) - (y - mu))`, with `y = 0` terms equal to `2 mu`.
pub fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| {
            let log_term = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
            log_term - (y - m)
        })
        .sum::<f64>()
}

pub fn deviance(model: &PoissonModel, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let eta = model.linear_predictor(x)?;
    check_len(y, eta.len())?;
    Ok(poisson_deviance(y, &exp_checked(&eta)?))
}

/// Gradient of the log-likelihood: `(sum(y - mu), X^T (y - mu))`.
pub fn gradient(model: &PoissonModel, x: &DMatrix<f64>, y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let eta = model.linear_predictor(x)?;
    check_len(y, eta.len())?;
    let resid: Vec<f64> = exp_checked(&eta)?
        .iter()
        .zip(y)
        .map(|(m, y)| y - m)
        .collect();
    let g0 = resid.iter().sum();
    let g = (0..x.ncols())
        .map(|j| x.column(j).iter().zip(&resid).map(|(a, r)| a * r).sum())
        .collect();
    Ok((g0, g))
}

pub fn predict(model: &PoissonModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    exp_checked(&model.linear_predictor(x)?)
}

/// Columns of `active` lying in the span of the intercept and the active
/// columns before them, judged by sequential Gram-Schmidt. Earlier columns
/// are always kept.
pub fn collinear_columns(x: &DMatrix<f64>, active: &[usize]) -> Vec<usize> {
    let n = x.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let ones = DVector::from_element(n, 1.0);
    if n > 0 {
        basis.push(ones.normalize());
    }
    let mut collinear = Vec::new();
    for &j in active {
        let mut v: DVector<f64> = x.column(j).into_owned();
        let norm0 = v.norm();
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= RANK_TOLERANCE * norm0 {
            collinear.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    collinear
}

/// Unpenalized maximum-likelihood fit over `active` columns plus an
/// intercept. Coefficients outside `active` are zero.
///
/// Non-convergence (iteration cap, or no ascent after all step halvings) is
/// reported through [`FitDiagnostics::converged`], not as an error.
pub fn fit_glm(
    x: &DMatrix<f64>,
    y: &[f64],
    active: &[usize],
) -> Result<(PoissonModel, FitDiagnostics)> {
    let n = x.nrows();
    check_len(y, n)?;
    if n == 0 {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    if let Some(&j) = active.iter().find(|&&j| j >= x.ncols()) {
        return Err(Error::InvalidArgument(format!("column {j} out of range")));
    }
    let collinear = collinear_columns(x, active);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient {
            columns: collinear.iter().map(|j| format!("x{j}")).collect(),
        });
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    if ybar <= 0.0 {
        return Err(Error::DegenerateResponse);
    }

    let k = active.len() + 1;
    let mut z = DMatrix::from_element(n, k, 1.0);
    for (c, &j) in active.iter().enumerate() {
        z.set_column(c + 1, &x.column(j));
    }
    let yv = DVector::from_column_slice(y);

    let mut beta = DVector::zeros(k);
    beta[0] = ybar.ln();

    let objective = |eta: &DVector<f64>| -> f64 {
        eta.iter()
            .zip(y)
            .map(|(e, y)| y * e - e.clamp(-ETA_CLAMP, ETA_CLAMP).exp())
            .sum()
    };

    let mut eta = &z * &beta;
    let mut like = objective(&eta);
    let mut trace = vec![like];
    let mut converged = false;
    let mut iterations = 0;

    loop {
        let g_true = z.tr_mul(&(&yv - eta.map(f64::exp)));
        if g_true.amax() <= IRLS_TOLERANCE {
            converged = true;
            break;
        }
        if iterations == IRLS_MAX_ITER {
            break;
        }
        let mu = eta.map(|e| e.clamp(-ETA_CLAMP, ETA_CLAMP).exp());
        let g = z.tr_mul(&(&yv - &mu));
        let mut wz = z.clone();
        for (i, mut row) in wz.row_iter_mut().enumerate() {
            row *= mu[i];
        }
        let h = z.tr_mul(&wz);
        let Some(chol) = h.cholesky() else {
            return Err(Error::RankDeficient {
                columns: active.iter().map(|j| format!("x{j}")).collect(),
            });
        };
        let step = chol.solve(&g);

        let floor = like - 1e-12 * like.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = &beta + &step * t;
            let cand_eta = &z * &cand;
            let cand_like = objective(&cand_eta);
            if cand_like.is_finite() && cand_like >= floor {
                accepted = Some((cand, cand_eta, cand_like));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((b, e, l)) => {
                beta = b;
                eta = e;
                like = l;
                trace.push(l);
            }
            None => break,
        }
    }

    let mut coefficients = vec![0.0; x.ncols()];
    for (c, &j) in active.iter().enumerate() {
        coefficients[j] = beta[c + 1];
    }
    let model = PoissonModel::new(beta[0], coefficients);
    let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let diagnostics = FitDiagnostics {
        log_likelihood: like,
        deviance: poisson_deviance(y, &mu),
        iterations,
        converged,
        trace,
    };
    Ok((model, diagnostics))
}

/// Like [`fit_glm`], but first removes collinear columns (earliest kept).
/// Returns the dropped column indices alongside the fit.
pub fn fit_glm_dropping_collinear(
    x: &DMatrix<f64>,
    y: &[f64],
    active: &[usize],
) -> Result<(PoissonModel, FitDiagnostics, Vec<usize>)> {
    let dropped = collinear_columns(x, active);
    let kept: Vec<usize> = active
        .iter()
        .copied()
        .filter(|j| !dropped.contains(j))
        .collect();
    let (model, diag) = fit_glm(x, y, &kept)?;
    Ok((model, diag, dropped))
}
