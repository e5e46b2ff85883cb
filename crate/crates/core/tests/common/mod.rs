#![allow(dead_code)]

use countsel::dataset::{Covariate, Dataset};
use countsel::poisson::{log_likelihood, PoissonModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard-normal n x p matrix.
pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let z = Normal::new(0.0, 1.0).unwrap();
    DMatrix::from_fn(n, p, |_, _| z.sample(rng))
}

/// Poisson draws with `log mu = b0 + x beta`.
pub fn poisson_response(rng: &mut ChaCha8Rng, x: &DMatrix<f64>, b0: f64, beta: &[f64]) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let eta = b0 + (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum::<f64>();
            Poisson::new(eta.exp()).unwrap().sample(rng)
        })
        .collect()
}

/// Column-standardized copy (population sd), as the solvers expect.
pub fn standardized(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for j in 0..x.ncols() {
        let m = x.column(j).sum() / n;
        let sd = (x.column(j).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        for i in 0..x.nrows() {
            out[(i, j)] = (x[(i, j)] - m) / sd;
        }
    }
    out
}

/// Dataset of `numeric` standard-normal covariates `x1..`, plus one 3-level
/// categorical `c1` if `with_factor`, with a log-linear response.
pub fn random_dataset(seed: u64, n: usize, numeric: usize, with_factor: bool, effects: &[(usize, f64)]) -> Dataset {
    let mut r = rng(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let cols: Vec<Vec<f64>> = (0..numeric)
        .map(|_| (0..n).map(|_| z.sample(&mut r)).collect())
        .collect();
    let y: Vec<u64> = (0..n)
        .map(|i| {
            let eta = 0.3 + effects.iter().map(|&(j, b)| b * cols[j][i]).sum::<f64>();
            Poisson::new(eta.exp()).unwrap().sample(&mut r) as u64
        })
        .collect();
    let mut covs: Vec<Covariate> = cols
        .into_iter()
        .enumerate()
        .map(|(j, v)| Covariate::numeric(format!("x{}", j + 1), v))
        .collect();
    if with_factor {
        let levels = ["a", "b", "c"];
        let f: Vec<&str> = (0..n).map(|i| levels[(i + r.random_range(0..3)) % 3]).collect();
        covs.push(Covariate::categorical("c1", f));
    }
    Dataset::new("count", y, covs, None).unwrap()
}

/// Penalized objective with the intercept profiled out in closed form:
/// `exp(b0) = sum(y) / sum(exp(x beta))`.
pub fn profiled_objective(x: &DMatrix<f64>, y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = x.nrows();
    let sy: f64 = y.iter().sum();
    let xb: Vec<f64> = (0..n)
        .map(|i| (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum())
        .collect();
    let se: f64 = xb.iter().map(|v| v.exp()).sum();
    let b0 = (sy / se).ln();
    let m = PoissonModel::new(b0, beta.to_vec());
    let like = log_likelihood(&m, x, y).unwrap();
    like / n as f64 - lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// Brute-force maximizer of the two-column penalized objective over
/// `[-5, 5]^2`: a 1e-3 grid on `beta_1`, with `beta_2` maximized exactly on
/// each grid line (the objective is concave in it), then coordinate-wise
/// golden-section refinement around the best grid point.
pub fn brute_force_two_columns(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> [f64; 2] {
    assert_eq!(x.ncols(), 2);
    let f = |b1: f64, b2: f64| profiled_objective(x, y, &[b1, b2], lambda);
    let best_b2 = |b1: f64| golden_max(|b2| f(b1, b2), -5.0, 5.0, 1e-7);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for k in 0..=10_000 {
        let b1 = -5.0 + k as f64 * 1e-3;
        let b2 = best_b2(b1);
        let v = f(b1, b2);
        if v > best.0 {
            best = (v, b1, b2);
        }
    }
    let (mut b1, mut b2) = (best.1, best.2);
    for _ in 0..50 {
        b1 = golden_max(|t| f(t, b2), b1 - 2e-3, b1 + 2e-3, 1e-10);
        b2 = golden_max(|t| f(b1, t), b2 - 2e-3, b2 + 2e-3, 1e-10);
    }
    [b1, b2]
}
