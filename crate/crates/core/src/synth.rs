//! Seeded synthetic count data with a planted sparse truth.
//!
//! Numeric covariates are named `x1, x2, ...` and categorical ones
//! `c1, c2, ...` with levels `a, b, c, ...` (level `a` is the reference).
//! Effects are written like design column names: `x1`, `c1=b`, `x2:x3`,
//! `x1:c1=c`, and act on the raw (unstandardized) encodings.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::{Covariate, CovariateValues, Dataset};
use crate::design_matrix::DesignMatrix;
use crate::error::{Error, Result};

/// Expected counts above this are refused.
const MAX_MEAN: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueEffect {
    pub term: String,
    pub coefficient: f64,
}

fn default_sd() -> f64 {
    1.0
}

fn default_response() -> String {
    "count".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    #[serde(default)]
    pub numeric: usize,
    #[serde(default)]
    pub numeric_mean: f64,
    #[serde(default = "default_sd")]
    pub numeric_sd: f64,
    /// Level count of each categorical covariate.
    #[serde(default)]
    pub categorical_levels: Vec<usize>,
    #[serde(default)]
    pub effects: Vec<TrueEffect>,
    pub intercept: f64,
    pub seed: u64,
    #[serde(default = "default_response")]
    pub response: String,
}

impl SynthSpec {
    /// Demo: 7 numeric and one 3-level categorical covariate (44 expanded
    /// columns), three planted effects.
    pub fn demo(seed: u64) -> Self {
        SynthSpec {
            n: 600,
            numeric: 7,
            numeric_mean: 0.0,
            numeric_sd: 1.0,
            categorical_levels: vec![3],
            effects: vec![
                TrueEffect {
                    term: "x1".into(),
                    coefficient: 0.6,
                },
                TrueEffect {
                    term: "x2".into(),
                    coefficient: -0.5,
                },
                TrueEffect {
                    term: "x3:x4".into(),
                    coefficient: 0.5,
                },
            ],
            intercept: 0.5,
            seed,
            response: default_response(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !self.intercept.is_finite() {
            return bad("intercept must be finite".into());
        }
        if !(self.numeric_sd > 0.0 && self.numeric_sd.is_finite() && self.numeric_mean.is_finite()) {
            return bad("numeric distribution parameters must be finite with sd > 0".into());
        }
        if let Some(k) = self.categorical_levels.iter().find(|&&k| k < 2) {
            return bad(format!("categorical covariates need at least 2 levels, got {k}"));
        }
        for e in &self.effects {
            if !e.coefficient.is_finite() {
                return bad(format!("coefficient of `{}` is not finite", e.term));
            }
            self.resolve(&e.term)?;
        }
        Ok(())
    }

    /// Factors of a term as (covariate index, level index) pairs.
    fn resolve(&self, term: &str) -> Result<Vec<(usize, Option<usize>)>> {
        let unresolved = || Error::UnresolvedTerm(term.to_string());
        let factors = parse_term(term);
        if factors.is_empty() || factors.len() > 2 {
            return Err(unresolved());
        }
        let mut out = Vec::new();
        for (var, level) in factors {
            let idx = if let Some(k) = var.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                if k == 0 || k > self.numeric || level.is_some() {
                    return Err(unresolved());
                }
                (k - 1, None)
            } else if let Some(k) = var.strip_prefix('c').and_then(|s| s.parse::<usize>().ok()) {
                let levels = *self.categorical_levels.get(k.wrapping_sub(1)).ok_or_else(unresolved)?;
                let names = level_names(levels);
                let l = level
                    .and_then(|l| names.iter().position(|n| *n == l))
                    .filter(|&l| l > 0)
                    .ok_or_else(unresolved)?;
                (self.numeric + k - 1, Some(l))
            } else {
                return Err(unresolved());
            };
            out.push(idx);
        }
        if out.len() == 2 && out[0].0 == out[1].0 {
            return Err(unresolved());
        }
        Ok(out)
    }
}

/// Splits `a:b=l` into `[(a, None), (b, Some(l))]`.
pub fn parse_term(term: &str) -> Vec<(String, Option<String>)> {
    term.split(':')
        .map(|f| match f.split_once('=') {
            Some((v, l)) => (v.trim().to_string(), Some(l.trim().to_string())),
            None => (f.trim().to_string(), None),
        })
        .collect()
}

fn level_names(k: usize) -> Vec<String> {
    if k <= 26 {
        (0..k).map(|i| ((b'a' + i as u8) as char).to_string()).collect()
    } else {
        let width = (k - 1).to_string().len();
        (0..k).map(|i| format!("l{i:0width$}")).collect()
    }
}

/// Draws a dataset from `spec`; identical seeds give identical datasets.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(spec.numeric_mean, spec.numeric_sd)
        .map_err(|e| Error::Config(e.to_string()))?;

    let numeric: Vec<Vec<f64>> = (0..spec.numeric)
        .map(|_| (0..n).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let categorical: Vec<Vec<usize>> = spec
        .categorical_levels
        .iter()
        .map(|&k| {
            let u = Uniform::new(0, k).expect("k >= 2");
            (0..n).map(|_| u.sample(&mut rng)).collect()
        })
        .collect();

    let effects = spec
        .effects
        .iter()
        .map(|e| Ok((spec.resolve(&e.term)?, e.coefficient)))
        .collect::<Result<Vec<_>>>()?;
    let factor_value = |i: usize, (cov, level): (usize, Option<usize>)| -> f64 {
        match level {
            None => numeric[cov][i],
            Some(l) => f64::from(u8::from(categorical[cov - spec.numeric][i] == l)),
        }
    };

    let mut response = Vec::with_capacity(n);
    for i in 0..n {
        let eta = spec.intercept
            + effects
                .iter()
                .map(|(factors, b)| b * factors.iter().map(|&f| factor_value(i, f)).product::<f64>())
                .sum::<f64>();
        let mu = eta.exp();
        if !(mu.is_finite() && mu <= MAX_MEAN) {
            return Err(Error::SyntheticOverflow);
        }
        let y = Poisson::new(mu)
            .map_err(|_| Error::SyntheticOverflow)?
            .sample(&mut rng);
        response.push(y as u64);
    }

    let mut covariates: Vec<Covariate> = numeric
        .into_iter()
        .enumerate()
        .map(|(k, v)| Covariate::numeric(format!("x{}", k + 1), v))
        .collect();
    for (k, (levels, draws)) in spec.categorical_levels.iter().zip(categorical).enumerate() {
        let names = level_names(*levels);
        covariates.push(Covariate {
            name: format!("c{}", k + 1),
            values: CovariateValues::Categorical(draws.into_iter().map(|l| names[l].clone()).collect()),
        });
    }
    Dataset::new(spec.response.clone(), response, covariates, None)
}

/// Design column names carrying the planted effects.
pub fn true_support(spec: &SynthSpec, dm: &DesignMatrix) -> Result<BTreeSet<String>> {
    spec.effects
        .iter()
        .map(|e| {
            let factors = parse_term(&e.term);
            let wanted: std::collections::HashSet<(&str, Option<&str>)> = factors
                .iter()
                .map(|(v, l)| (v.as_str(), l.as_deref()))
                .collect();
            dm.columns()
                .iter()
                .find(|c| c.factors() == wanted)
                .map(|c| c.column_name.clone())
                .ok_or_else(|| Error::UnresolvedTerm(e.term.clone()))
        })
        .collect()
}
