//! Two-level cross-validation for penalty selection and honest prediction.
//!
//! The outer level splits the data into N blocks. For each held-out block
//! (the test set) the remaining blocks form the training set, on which the
//! design matrix is standardized, the lambda grid is built, and an inner
//! K-fold cross-validation picks `lambda.min` and `lambda.1se`. The columns
//! active at each of these penalties are refit without penalty and used to
//! predict the held-out block. Nothing computed for a fold ever sees that
//! fold's test rows.

mod plan;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use plan::{make_plan, CvPlan, Stratification};

use crate::dataset::Dataset;
use crate::design_matrix::{ColumnScaling, DesignMatrix};
use crate::error::{Error, Result};
use crate::lasso::{make_grid, LambdaGrid, PathSolver, DEFAULT_GRID_RATIO, DEFAULT_GRID_SIZE};
use crate::metrics::{score_ratio, PooledPredictions, PredictionRow};
use crate::poisson::{fit_glm_dropping_collinear, poisson_deviance, predict, PoissonModel, ETA_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub size: usize,
    pub ratio: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            size: DEFAULT_GRID_SIZE,
            ratio: DEFAULT_GRID_RATIO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub n_outer: usize,
    pub k_inner: usize,
    pub grid: GridParams,
    pub strategy: Stratification,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            n_outer: 10,
            k_inner: 10,
            grid: GridParams::default(),
            strategy: Stratification::Quartile,
            seed: 0,
        }
    }
}

impl CvConfig {
    /// Seed of the inner plan for outer block `b`.
    pub fn inner_seed(&self, b: usize) -> u64 {
        self.seed
            .wrapping_add((b as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerSelection {
    pub lambda_max: f64,
    /// `None` when `lambda_max` is zero (no column correlates with y).
    pub grid: Option<LambdaGrid>,
    /// Mean held-out per-observation deviance per lambda.
    pub scores: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub index_min: usize,
    pub index_1se: usize,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    /// All lambdas scored the same; both rules fall back to `lambda_max`.
    pub degenerate: bool,
    /// Inner path fits that hit an iteration cap.
    pub nonconverged_fits: usize,
}

fn held_out_deviance(model: &PoissonModel, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let eta = model.linear_predictor(x)?;
    let mu: Vec<f64> = eta
        .iter()
        .map(|e| e.clamp(-ETA_CLAMP, ETA_CLAMP).exp())
        .collect();
    Ok(poisson_deviance(y, &mu))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let m = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (k - 1.0);
    (m, var.sqrt())
}

/// Lambda selection by K-fold cross-validation over the rows of `x`.
///
/// The grid comes from the lambda_max of all rows; every inner fold is scored
/// on that shared grid by its held-out deviance per observation.
pub fn select_lambda(
    x: &DMatrix<f64>,
    y: &[f64],
    inner: &CvPlan,
    grid: &GridParams,
) -> Result<InnerSelection> {
    let lambda_max = PathSolver::new(x, y)?.lambda_max();
    let degenerate = |scores, ses| InnerSelection {
        lambda_max,
        grid: None,
        scores,
        standard_errors: ses,
        index_min: 0,
        index_1se: 0,
        lambda_min: lambda_max,
        lambda_1se: lambda_max,
        degenerate: true,
        nonconverged_fits: 0,
    };
    if lambda_max <= 0.0 {
        return Ok(degenerate(Vec::new(), Vec::new()));
    }
    let grid = make_grid(lambda_max, grid.size, grid.ratio)?;
    let g = grid.values.len();

    let fold_scores = (0..inner.n_blocks)
        .into_par_iter()
        .map(|k| -> Result<(Vec<f64>, usize)> {
            let train = inner.rows_not_in(k);
            let test = inner.rows_in(k);
            let x_tr = x.select_rows(&train);
            let y_tr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let x_te = x.select_rows(&test);
            let y_te: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            let path = PathSolver::new(&x_tr, &y_tr)?.fit_prefix(&grid, g - 1);
            let scores = path
                .models
                .iter()
                .map(|m| Ok(held_out_deviance(m, &x_te, &y_te)? / y_te.len() as f64))
                .collect::<Result<Vec<f64>>>()?;
            let failed = path.converged.iter().filter(|c| !**c).count();
            Ok((scores, failed))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut scores = Vec::with_capacity(g);
    let mut ses = Vec::with_capacity(g);
    let k = fold_scores.len() as f64;
    for l in 0..g {
        let at: Vec<f64> = fold_scores.iter().map(|(s, _)| s[l]).collect();
        let (m, sd) = mean_sd(&at);
        scores.push(m);
        ses.push(sd / k.sqrt());
    }
    let nonconverged_fits = fold_scores.iter().map(|(_, f)| f).sum();

    if scores.iter().all(|s| *s == scores[0]) {
        let mut sel = degenerate(scores, ses);
        sel.grid = Some(grid);
        sel.nonconverged_fits = nonconverged_fits;
        return Ok(sel);
    }

    // first minimizer = largest lambda among ties
    let mut index_min = 0;
    for (l, s) in scores.iter().enumerate() {
        if *s < scores[index_min] {
            index_min = l;
        }
    }
    let threshold = scores[index_min] + ses[index_min];
    let index_1se = scores
        .iter()
        .position(|s| *s <= threshold)
        .unwrap_or(index_min);

    Ok(InnerSelection {
        lambda_max,
        lambda_min: grid.values[index_min],
        lambda_1se: grid.values[index_1se],
        grid: Some(grid),
        scores,
        standard_errors: ses,
        index_min,
        index_1se,
        degenerate: false,
        nonconverged_fits,
    })
}

/// Builds the training design and inner plan from `train` alone, then
/// selects lambda.
pub fn inner_select_lambda(
    train: &Dataset,
    grid: &GridParams,
    k_inner: usize,
    strategy: Stratification,
    seed: u64,
) -> Result<InnerSelection> {
    let dm = DesignMatrix::build(train)?;
    let inner = make_plan(train, k_inner, strategy, seed)?;
    select_lambda(dm.matrix(), &train.response_f64(), &inner, grid)
}

/// Everything an outer fold derives from its training rows.
#[derive(Debug, Clone)]
pub struct FoldContext {
    pub design: DesignMatrix,
    pub response: Vec<f64>,
    pub inner_plan: CvPlan,
}

impl FoldContext {
    /// Depends only on the training rows, their order, and the seed.
    pub fn from_training(train: &Dataset, cfg: &CvConfig, block: usize) -> Result<Self> {
        let design = DesignMatrix::build(train)?;
        let inner_plan = make_plan(train, cfg.k_inner, cfg.strategy, cfg.inner_seed(block))?;
        Ok(FoldContext {
            design,
            response: train.response_f64(),
            inner_plan,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldPrediction {
    pub row: usize,
    pub observed: u64,
    pub predicted_min: f64,
    pub predicted_1se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DebiasedFit {
    pub active_set: Vec<String>,
    pub model: PoissonModel,
    /// Collinear columns removed before the refit.
    pub dropped: Vec<String>,
    pub converged: bool,
    /// `1 - score(lambda) / score(lambda_max)` on the inner scores.
    pub score_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterFoldResult {
    pub test_block: usize,
    pub train_size: usize,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    pub degenerate: bool,
    pub lambda_min_fit: DebiasedFit,
    pub lambda_1se_fit: DebiasedFit,
    /// `|active_1se| > |active_min|`; not expected on a monotone path.
    pub sparsity_violation: bool,
    pub penalized_converged: bool,
    pub predictions: Vec<FoldPrediction>,
    pub columns: Vec<String>,
    pub scaling: Vec<ColumnScaling>,
    pub inner: InnerSelection,
    pub inner_blocks: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PresenceCount {
    pub lambda_min: usize,
    pub lambda_1se: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PresenceTable {
    pub n_folds: usize,
    /// Every column seen in any fold's design, with its activity counts.
    pub counts: BTreeMap<String, PresenceCount>,
}

impl PresenceTable {
    pub fn from_folds(folds: &[OuterFoldResult]) -> Self {
        let mut counts: BTreeMap<String, PresenceCount> = BTreeMap::new();
        for f in folds {
            for c in &f.columns {
                counts.entry(c.clone()).or_default();
            }
            for c in &f.lambda_min_fit.active_set {
                counts.entry(c.clone()).or_default().lambda_min += 1;
            }
            for c in &f.lambda_1se_fit.active_set {
                counts.entry(c.clone()).or_default().lambda_1se += 1;
            }
        }
        PresenceTable {
            n_folds: folds.len(),
            counts,
        }
    }

    pub fn frequency(&self, column: &str) -> PresenceCount {
        self.counts.get(column).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequentSets {
    pub threshold: f64,
    pub lambda_min: Vec<String>,
    pub lambda_1se: Vec<String>,
}

/// Columns active in at least `threshold` of the outer folds, per rule.
pub fn frequent_variables(pt: &PresenceTable, threshold: f64) -> Result<FrequentSets> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let n = pt.n_folds as f64;
    let pick = |count: fn(&PresenceCount) -> usize| -> Vec<String> {
        pt.counts
            .iter()
            .filter(|(_, c)| count(c) > 0 && count(c) as f64 / n >= threshold)
            .map(|(name, _)| name.clone())
            .collect()
    };
    Ok(FrequentSets {
        threshold,
        lambda_min: pick(|c| c.lambda_min),
        lambda_1se: pick(|c| c.lambda_1se),
    })
}

fn debias(
    ctx: &FoldContext,
    penalized: &PoissonModel,
    score_ratio: Option<f64>,
) -> Result<DebiasedFit> {
    let names = ctx.design.column_names();
    let active = penalized.active();
    let (model, diag, dropped) =
        fit_glm_dropping_collinear(ctx.design.matrix(), &ctx.response, &active)?;
    Ok(DebiasedFit {
        active_set: active.iter().map(|&j| names[j].clone()).collect(),
        model: model.with_column_names(names.clone()),
        dropped: dropped.iter().map(|&j| names[j].clone()).collect(),
        converged: diag.converged,
        score_ratio,
    })
}

fn run_outer_fold(d: &Dataset, plan: &CvPlan, b: usize, cfg: &CvConfig) -> Result<OuterFoldResult> {
    let train_rows = plan.rows_not_in(b);
    let test_rows = plan.rows_in(b);
    let train = d.subset(&train_rows);
    let test = d.subset(&test_rows);
    let ctx = FoldContext::from_training(&train, cfg, b)?;
    let x = ctx.design.matrix();
    let sel = select_lambda(x, &ctx.response, &ctx.inner_plan, &cfg.grid)?;

    let solver = PathSolver::new(x, &ctx.response)?;
    let (pen_min, pen_1se, penalized_converged) = match &sel.grid {
        Some(grid) if !sel.degenerate => {
            let path = solver.fit_prefix(grid, sel.index_min);
            (
                path.models[sel.index_min].clone(),
                path.models[sel.index_1se].clone(),
                path.converged.iter().all(|c| *c),
            )
        }
        _ => (solver.null_model(), solver.null_model(), true),
    };

    let ratio = |idx: usize| -> Option<f64> {
        let s = sel.scores.get(idx)?;
        score_ratio(*s, sel.scores[0]).ok().map(|(r, _)| r)
    };
    let fit_min = debias(&ctx, &pen_min, ratio(sel.index_min))?;
    let fit_1se = debias(&ctx, &pen_1se, ratio(sel.index_1se))?;

    let x_test = ctx.design.apply_scaling(&test)?;
    let mu_min = predict(&fit_min.model, &x_test)?;
    let mu_1se = predict(&fit_1se.model, &x_test)?;
    let predictions = test_rows
        .iter()
        .enumerate()
        .map(|(k, &row)| FoldPrediction {
            row,
            observed: d.response()[row],
            predicted_min: mu_min[k],
            predicted_1se: mu_1se[k],
        })
        .collect();

    Ok(OuterFoldResult {
        test_block: b,
        train_size: train_rows.len(),
        lambda_max: sel.lambda_max,
        lambda_min: sel.lambda_min,
        lambda_1se: sel.lambda_1se,
        degenerate: sel.degenerate,
        sparsity_violation: fit_1se.active_set.len() > fit_min.active_set.len(),
        lambda_min_fit: fit_min,
        lambda_1se_fit: fit_1se,
        penalized_converged,
        predictions,
        columns: ctx.design.column_names(),
        scaling: ctx.design.scaling().to_vec(),
        inner_blocks: ctx.inner_plan.block_of.clone(),
        inner: sel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoloDcvResult {
    pub plan: CvPlan,
    pub folds: Vec<OuterFoldResult>,
    pub presence: PresenceTable,
    pub pooled_min: PooledPredictions,
    pub pooled_1se: PooledPredictions,
}

fn fold_sizes(plan: &CvPlan) -> BTreeMap<usize, usize> {
    let n = plan.block_of.len();
    plan.block_sizes()
        .into_iter()
        .enumerate()
        .map(|(b, s)| (b, n - s))
        .collect()
}

/// Runs the full two-level procedure. Outer folds run in parallel and are
/// merged in block order.
pub fn run_lolo_dcv(d: &Dataset, cfg: &CvConfig) -> Result<LoloDcvResult> {
    let plan = make_plan(d, cfg.n_outer, cfg.strategy, cfg.seed)?;
    run_lolo_dcv_with_plan(d, &plan, cfg)
}

pub fn run_lolo_dcv_with_plan(d: &Dataset, plan: &CvPlan, cfg: &CvConfig) -> Result<LoloDcvResult> {
    let folds = (0..plan.n_blocks)
        .into_par_iter()
        .map(|b| {
            run_outer_fold(d, plan, b, cfg).map_err(|e| Error::Fold {
                fold: b,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let presence = PresenceTable::from_folds(&folds);
    let mut rows_min = Vec::with_capacity(d.n_rows());
    let mut rows_1se = Vec::with_capacity(d.n_rows());
    for f in &folds {
        for p in &f.predictions {
            let row = |predicted| PredictionRow {
                row: p.row,
                fold: f.test_block,
                observed: p.observed,
                predicted,
            };
            rows_min.push(row(p.predicted_min));
            rows_1se.push(row(p.predicted_1se));
        }
    }
    let sizes = fold_sizes(plan);
    Ok(LoloDcvResult {
        plan: plan.clone(),
        folds,
        presence,
        pooled_min: PooledPredictions::new(rows_min, sizes.clone())?,
        pooled_1se: PooledPredictions::new(rows_1se, sizes)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetEvaluation {
    pub columns: Vec<String>,
    pub pooled: PooledPredictions,
    /// Per fold: requested columns absent from that fold's design.
    pub missing: BTreeMap<usize, Vec<String>>,
    /// Per fold: collinear columns removed before the refit.
    pub dropped: BTreeMap<usize, Vec<String>>,
    pub converged: bool,
}

/// Out-of-fold predictions of an unpenalized GLM on a fixed column subset,
/// refit on each outer training set of `plan`. An empty subset gives the
/// intercept-only model.
pub fn evaluate_frequent(d: &Dataset, plan: &CvPlan, columns: &[String]) -> Result<SubsetEvaluation> {
    let per_fold = (0..plan.n_blocks)
        .into_par_iter()
        .map(|b| -> Result<_> {
            let train_rows = plan.rows_not_in(b);
            let test_rows = plan.rows_in(b);
            let train = d.subset(&train_rows);
            let test = d.subset(&test_rows);
            let design = DesignMatrix::build(&train)?;
            let names = design.column_names();
            let mut active = Vec::new();
            let mut missing = Vec::new();
            for c in columns {
                match design.column_index(c) {
                    Some(j) => active.push(j),
                    None => missing.push(c.clone()),
                }
            }
            let y = train.response_f64();
            let (model, diag, dropped) = fit_glm_dropping_collinear(design.matrix(), &y, &active)?;
            let mu = predict(&model, &design.apply_scaling(&test)?)?;
            let rows: Vec<PredictionRow> = test_rows
                .iter()
                .zip(mu)
                .map(|(&row, predicted)| PredictionRow {
                    row,
                    fold: b,
                    observed: d.response()[row],
                    predicted,
                })
                .collect();
            let dropped: Vec<String> = dropped.iter().map(|&j| names[j].clone()).collect();
            Ok((rows, missing, dropped, diag.converged))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .enumerate()
        .map(|(b, r)| {
            r.map_err(|e| Error::Fold {
                fold: b,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(d.n_rows());
    let mut missing = BTreeMap::new();
    let mut dropped = BTreeMap::new();
    let mut converged = true;
    for (b, (r, m, dr, c)) in per_fold.into_iter().enumerate() {
        rows.extend(r);
        if !m.is_empty() {
            missing.insert(b, m);
        }
        if !dr.is_empty() {
            dropped.insert(b, dr);
        }
        converged &= c;
    }
    Ok(SubsetEvaluation {
        columns: columns.to_vec(),
        pooled: PooledPredictions::new(rows, fold_sizes(plan))?,
        missing,
        dropped,
        converged,
    })
}
