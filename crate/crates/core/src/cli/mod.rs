//! Command implementations behind the `countsel` binary.
//!
//! `run` executes the nested cross-validation and writes `report.json`,
//! `metrics.csv` and `predictions.csv`; `gen` writes a synthetic dataset with
//! its planted truth; `path` writes per-lambda diagnostics of a single
//! full-data path.

mod config;

use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::RunConfig;

use crate::dataset::{load_csv, schema_of, to_csv_bytes, Dataset};
use crate::design_matrix::DesignMatrix;
use crate::error::{Error, Result};
use crate::lasso::{make_grid, PathSolver};
use crate::metrics::{score_ratio, MetricRow, PooledPredictions};
use crate::nested_cv::{
    evaluate_frequent, frequent_variables, run_lolo_dcv, FrequentSets, OuterFoldResult,
    PresenceTable, SubsetEvaluation,
};
use crate::poisson::deviance;
use crate::synth::{generate, true_support, SynthSpec};

pub const METHOD_LOLO_MIN: &str = "LOLO-DCV lambda.min";
pub const METHOD_LOLO_1SE: &str = "LOLO-DCV lambda.1se";
pub const METHOD_FREQ_MIN: &str = "Var_freq lambda.min";
pub const METHOD_FREQ_1SE: &str = "Var_freq lambda.1se";
pub const METHOD_MANUAL: &str = "Manual subset";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Output {
        path: path.to_path_buf(),
        source: e,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Output {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Runs `f` on a pool of `threads` workers (0 = all cores).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    pub metrics: MetricRow,
    /// Columns used, for fixed-subset methods.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<SubsetEvaluation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub n_rows: usize,
    pub block_of: Vec<usize>,
    pub folds: Vec<OuterFoldResult>,
    pub presence: PresenceTable,
    pub frequent: FrequentSets,
    pub methods: Vec<MethodReport>,
    /// Pooled predictions of the two per-fold lasso rules.
    #[serde(skip)]
    pub lolo: [PooledPredictions; 2],
}

impl RunReport {
    pub fn metric_rows(&self) -> Vec<&MetricRow> {
        self.methods.iter().map(|m| &m.metrics).collect()
    }
}

/// Output file locations of a run.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub report: PathBuf,
    pub metrics: PathBuf,
    pub predictions: PathBuf,
}

fn metrics_csv(methods: &[MethodReport]) -> Result<Vec<u8>> {
    let header = ["Method", "Deviance", "W.Deviance", "PredictivePower"].map(String::from);
    let rows: Vec<Vec<String>> = methods
        .iter()
        .map(|m| {
            vec![
                m.metrics.method.clone(),
                m.metrics.deviance.to_string(),
                m.metrics.weighted_deviance.to_string(),
                m.metrics.predictive_power.to_string(),
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

fn predictions_csv(named: &[(&str, &PooledPredictions)]) -> Result<Vec<u8>> {
    let mut header = vec!["row".to_string(), "fold".into(), "observed".into()];
    header.extend(named.iter().map(|(m, _)| m.to_string()));
    let sorted: Vec<_> = named.iter().map(|(_, p)| p.sorted()).collect();
    let n = sorted.first().map_or(0, Vec::len);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let base = sorted[0][i];
        let mut r = vec![
            base.row.to_string(),
            base.fold.to_string(),
            base.observed.to_string(),
        ];
        for s in &sorted {
            debug_assert_eq!(s[i].row, base.row);
            r.push(s[i].predicted.to_string());
        }
        rows.push(r);
    }
    csv_bytes(&header, &rows)
}

/// The full pipeline on an already loaded dataset; writes nothing.
pub fn run_pipeline(d: &Dataset, cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let cv = cfg.cv_config();
    let result = run_lolo_dcv(d, &cv)?;
    let frequent = frequent_variables(&result.presence, cfg.threshold)?;
    let freq_min = evaluate_frequent(d, &result.plan, &frequent.lambda_min)?;
    let freq_1se = evaluate_frequent(d, &result.plan, &frequent.lambda_1se)?;

    let mut methods = vec![
        MethodReport {
            metrics: MetricRow::compute(METHOD_LOLO_MIN, &result.pooled_min)?,
            subset: None,
        },
        MethodReport {
            metrics: MetricRow::compute(METHOD_LOLO_1SE, &result.pooled_1se)?,
            subset: None,
        },
        MethodReport {
            metrics: MetricRow::compute(METHOD_FREQ_MIN, &freq_min.pooled)?,
            subset: Some(freq_min),
        },
        MethodReport {
            metrics: MetricRow::compute(METHOD_FREQ_1SE, &freq_1se.pooled)?,
            subset: Some(freq_1se),
        },
    ];
    if let Some(cols) = &cfg.manual_subset {
        let eval = evaluate_frequent(d, &result.plan, cols)?;
        methods.push(MethodReport {
            metrics: MetricRow::compute(METHOD_MANUAL, &eval.pooled)?,
            subset: Some(eval),
        });
    }
    Ok(RunReport {
        config: cfg.clone(),
        n_rows: d.n_rows(),
        block_of: result.plan.block_of.clone(),
        folds: result.folds,
        presence: result.presence,
        frequent,
        methods,
        lolo: [result.pooled_min, result.pooled_1se],
    })
}

fn pooled_of(report: &RunReport) -> Vec<(&str, &PooledPredictions)> {
    let mut named: Vec<(&str, &PooledPredictions)> = vec![
        (METHOD_LOLO_MIN, &report.lolo[0]),
        (METHOD_LOLO_1SE, &report.lolo[1]),
    ];
    for m in &report.methods {
        if let Some(s) = &m.subset {
            named.push((m.metrics.method.as_str(), &s.pooled));
        }
    }
    named
}

/// Loads the input, runs the pipeline, and writes the three report files
/// into the configured output directory.
pub fn cmd_run(cfg: &RunConfig) -> Result<(RunReport, RunOutputs)> {
    cfg.validate()?;
    let d = load_csv(&cfg.input, &cfg.schema)?;
    let report = with_threads(cfg.threads, || run_pipeline(&d, cfg))??;

    ensure_dir(&cfg.output_dir)?;
    let outputs = RunOutputs {
        report: cfg.output_dir.join("report.json"),
        metrics: cfg.output_dir.join("metrics.csv"),
        predictions: cfg.output_dir.join("predictions.csv"),
    };
    write_file(&outputs.report, &json_bytes(&report)?)?;
    write_file(&outputs.metrics, &metrics_csv(&report.methods)?)?;
    write_file(&outputs.predictions, &predictions_csv(&pooled_of(&report))?)?;
    Ok((report, outputs))
}

#[derive(Debug, Clone, Serialize)]
pub struct TruthEffect {
    pub term: String,
    pub column: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Truth {
    pub seed: u64,
    pub intercept: f64,
    pub effects: Vec<TruthEffect>,
    pub support: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GenOutputs {
    pub data: PathBuf,
    pub truth: PathBuf,
    pub config: PathBuf,
}

/// Writes `data.csv`, `truth.json`, and a ready-to-use `run.toml`.
pub fn cmd_gen(spec: &SynthSpec, output_dir: &Path) -> Result<(Dataset, Truth, GenOutputs)> {
    let d = generate(spec)?;
    let dm = DesignMatrix::build(&d)?;
    let support = true_support(spec, &dm)?;
    let effects = spec
        .effects
        .iter()
        .map(|e| {
            let single = SynthSpec {
                effects: vec![e.clone()],
                ..spec.clone()
            };
            let column = true_support(&single, &dm)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::UnresolvedTerm(e.term.clone()))?;
            Ok(TruthEffect {
                term: e.term.clone(),
                column,
                coefficient: e.coefficient,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = Truth {
        seed: spec.seed,
        intercept: spec.intercept,
        effects,
        support: support.into_iter().collect(),
    };

    ensure_dir(output_dir)?;
    let outputs = GenOutputs {
        data: output_dir.join("data.csv"),
        truth: output_dir.join("truth.json"),
        config: output_dir.join("run.toml"),
    };
    write_file(&outputs.data, &to_csv_bytes(&d)?)?;
    write_file(&outputs.truth, &json_bytes(&truth)?)?;
    let mut run = RunConfig::new("data.csv", schema_of(&d));
    run.seed = spec.seed;
    write_file(&outputs.config, run.to_toml()?.as_bytes())?;
    Ok((d, truth, outputs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRow {
    pub lambda: f64,
    pub active: usize,
    pub deviance: f64,
    /// `1 - deviance / null deviance`.
    pub ratio: f64,
    pub converged: bool,
}

/// Fits one path on all rows and tabulates it as `path.csv`.
pub fn cmd_path(cfg: &RunConfig) -> Result<(Vec<PathRow>, PathBuf)> {
    cfg.validate()?;
    let d = load_csv(&cfg.input, &cfg.schema)?;
    let rows = with_threads(cfg.threads, || path_table(&d, cfg))??;
    ensure_dir(&cfg.output_dir)?;
    let out = cfg.output_dir.join("path.csv");
    let header = ["lambda", "active", "deviance", "R", "converged"].map(String::from);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.lambda.to_string(),
                r.active.to_string(),
                r.deviance.to_string(),
                r.ratio.to_string(),
                r.converged.to_string(),
            ]
        })
        .collect();
    write_file(&out, &csv_bytes(&header, &body)?)?;
    Ok((rows, out))
}

pub fn path_table(d: &Dataset, cfg: &RunConfig) -> Result<Vec<PathRow>> {
    let dm = DesignMatrix::build(d)?;
    let x = dm.matrix();
    let y = d.response_f64();
    let solver = PathSolver::new(x, &y)?;
    let null = solver.null_model();
    let null_dev = deviance(&null, x, &y)?;
    if solver.lambda_max() <= 0.0 {
        return Ok(vec![PathRow {
            lambda: 0.0,
            active: 0,
            deviance: null_dev,
            ratio: 0.0,
            converged: true,
        }]);
    }
    let grid = make_grid(solver.lambda_max(), cfg.grid_size, cfg.grid_ratio)?;
    let path = solver.fit_prefix(&grid, grid.values.len() - 1);
    path.models
        .iter()
        .zip(&grid.values)
        .zip(&path.converged)
        .map(|((m, &lambda), &converged)| {
            let dev = deviance(m, x, &y)?;
            let ratio = if null_dev > 0.0 {
                score_ratio(dev, null_dev)?.0
            } else {
                0.0
            };
            Ok(PathRow {
                lambda,
                active: m.active().len(),
                deviance: dev,
                ratio,
                converged,
            })
        })
        .collect()
}
