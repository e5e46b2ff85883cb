//! Expanded, standardized design matrices.
//!
//! Numeric covariates contribute one column, categorical covariates `k - 1`
//! dummies against their lexicographically smallest observed level. Every
//! pair of distinct covariates then contributes the products of their
//! main-effect columns. Products are taken on the raw encodings and only the
//! final columns are standardized (population standard deviation).

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dataset::{CovariateValues, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnProvenance {
    pub column_name: String,
    /// One raw covariate for main effects, two for interactions.
    pub source_variables: Vec<String>,
    /// Dummy level per source variable; `None` for numeric sources.
    pub source_levels: Vec<Option<String>>,
    pub is_interaction: bool,
}

impl ColumnProvenance {
    /// `(variable, level)` factors of the column, order-independent.
    pub fn factors(&self) -> HashSet<(&str, Option<&str>)> {
        self.source_variables
            .iter()
            .zip(&self.source_levels)
            .map(|(v, l)| (v.as_str(), l.as_deref()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ColumnScaling {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Encoding {
    Numeric,
    /// Non-reference levels, sorted.
    Dummies(Vec<String>),
}

/// Encoding learned from training rows; replayed on new rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    covariates: Vec<(String, Encoding)>,
}

impl Encoder {
    fn learn(d: &Dataset) -> Self {
        let covariates = d
            .covariates()
            .iter()
            .map(|c| {
                let enc = match &c.values {
                    CovariateValues::Numeric(_) => Encoding::Numeric,
                    CovariateValues::Categorical(_) => {
                        Encoding::Dummies(c.levels().into_iter().skip(1).collect())
                    }
                };
                (c.name.clone(), enc)
            })
            .collect();
        Encoder { covariates }
    }

    fn main_provenance(&self) -> Vec<(usize, ColumnProvenance)> {
        let mut out = Vec::new();
        for (k, (name, enc)) in self.covariates.iter().enumerate() {
            match enc {
                Encoding::Numeric => out.push((
                    k,
                    ColumnProvenance {
                        column_name: name.clone(),
                        source_variables: vec![name.clone()],
                        source_levels: vec![None],
                        is_interaction: false,
                    },
                )),
                Encoding::Dummies(levels) => {
                    for level in levels {
                        out.push((
                            k,
                            ColumnProvenance {
                                column_name: format!("{name}={level}"),
                                source_variables: vec![name.clone()],
                                source_levels: vec![Some(level.clone())],
                                is_interaction: false,
                            },
                        ));
                    }
                }
            }
        }
        out
    }

    fn encode(&self, d: &Dataset) -> Result<Vec<Vec<f64>>> {
        let n = d.n_rows();
        let mut cols = Vec::new();
        for (name, enc) in &self.covariates {
            let cov = d
                .covariate(name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))?;
            match (enc, &cov.values) {
                (Encoding::Numeric, CovariateValues::Numeric(v)) => cols.push(v.clone()),
                (Encoding::Dummies(levels), CovariateValues::Categorical(v)) => {
                    for level in levels {
                        cols.push(v.iter().map(|x| f64::from(u8::from(x == level))).collect());
                    }
                }
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "covariate `{name}` changed kind"
                    )))
                }
            }
            debug_assert!(cols.last().is_none_or(|c| c.len() == n));
        }
        Ok(cols)
    }
}

/// Main-effect columns of a dataset, before interaction expansion.
#[derive(Debug, Clone)]
pub struct MainEffects {
    encoder: Encoder,
    columns: Vec<Vec<f64>>,
    provenance: Vec<ColumnProvenance>,
    owner: Vec<usize>,
    n_rows: usize,
}

impl MainEffects {
    pub fn provenance(&self) -> &[ColumnProvenance] {
        &self.provenance
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }
}

pub fn encode_main_effects(d: &Dataset) -> MainEffects {
    let encoder = Encoder::learn(d);
    let columns = encoder
        .encode(d)
        .expect("encoder learned from the same dataset");
    let (owner, provenance) = encoder.main_provenance().into_iter().unzip();
    MainEffects {
        encoder,
        columns,
        provenance,
        owner,
        n_rows: d.n_rows(),
    }
}

/// Pairs of main-effect column indices (i, j) making up the interactions,
/// in emission order.
fn interaction_pairs(owner: &[usize]) -> Vec<(usize, usize)> {
    let n_cov = owner.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_cov: Vec<Vec<usize>> = vec![Vec::new(); n_cov];
    for (col, &k) in owner.iter().enumerate() {
        by_cov[k].push(col);
    }
    let mut pairs = Vec::new();
    for a in 0..n_cov {
        for b in a + 1..n_cov {
            for &i in &by_cov[a] {
                for &j in &by_cov[b] {
                    pairs.push((i, j));
                }
            }
        }
    }
    pairs
}

fn expanded_columns(main: &[Vec<f64>], pairs: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut cols = main.to_vec();
    for &(i, j) in pairs {
        cols.push(main[i].iter().zip(&main[j]).map(|(a, b)| a * b).collect());
    }
    cols
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    columns: Vec<ColumnProvenance>,
    scaling: Vec<ColumnScaling>,
    dropped: Vec<String>,
    encoder: Encoder,
    pairs: Vec<(usize, usize)>,
    /// Index of each column in the full expansion.
    retained: Vec<usize>,
    standardized: bool,
}

pub fn expand_interactions(me: &MainEffects) -> DesignMatrix {
    let pairs = interaction_pairs(&me.owner);
    let mut columns = me.provenance.clone();
    for &(i, j) in &pairs {
        let (a, b) = (&me.provenance[i], &me.provenance[j]);
        columns.push(ColumnProvenance {
            column_name: format!("{}:{}", a.column_name, b.column_name),
            source_variables: vec![a.source_variables[0].clone(), b.source_variables[0].clone()],
            source_levels: vec![a.source_levels[0].clone(), b.source_levels[0].clone()],
            is_interaction: true,
        });
    }
    let raw = expanded_columns(&me.columns, &pairs);
    let n = me.n_rows;
    let p = raw.len();
    let matrix = DMatrix::from_iterator(n, p, raw.into_iter().flatten());
    DesignMatrix {
        matrix,
        scaling: vec![ColumnScaling { mean: 0.0, sd: 1.0 }; p],
        columns,
        dropped: Vec::new(),
        encoder: me.encoder.clone(),
        pairs,
        retained: (0..p).collect(),
        standardized: false,
    }
}

fn mean_sd(x: &[f64]) -> ColumnScaling {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    ColumnScaling {
        mean,
        sd: var.sqrt(),
    }
}

fn is_constant(s: ColumnScaling, x: &[f64]) -> bool {
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    s.sd == 0.0 || s.sd <= 1e-12 * scale
}

/// Centres and scales every column; zero-variance columns are dropped and
/// listed in [`DesignMatrix::dropped`].
pub fn standardize(dm: DesignMatrix) -> Result<DesignMatrix> {
    let mut seen = HashSet::new();
    for c in &dm.columns {
        if !seen.insert(c.column_name.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate design column name `{}`",
                c.column_name
            )));
        }
    }
    let n = dm.matrix.nrows();
    let mut data = Vec::new();
    let mut columns = Vec::new();
    let mut scaling = Vec::new();
    let mut retained = Vec::new();
    let mut dropped = dm.dropped.clone();
    for (j, prov) in dm.columns.into_iter().enumerate() {
        let col = dm.matrix.column(j);
        let x = col.as_slice();
        let s = mean_sd(x);
        if n == 0 || is_constant(s, x) {
            dropped.push(prov.column_name);
            continue;
        }
        data.extend(x.iter().map(|v| (v - s.mean) / s.sd));
        columns.push(prov);
        scaling.push(s);
        retained.push(dm.retained[j]);
    }
    if columns.is_empty() {
        return Err(Error::EmptyDesign);
    }
    Ok(DesignMatrix {
        matrix: DMatrix::from_vec(n, columns.len(), data),
        columns,
        scaling,
        dropped,
        encoder: dm.encoder,
        pairs: dm.pairs,
        retained,
        standardized: true,
    })
}

impl DesignMatrix {
    /// Encode, expand and standardize in one go.
    pub fn build(d: &Dataset) -> Result<Self> {
        standardize(expand_interactions(&encode_main_effects(d)))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn columns(&self) -> &[ColumnProvenance] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.column_name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.column_name == name)
    }

    pub fn scaling(&self) -> &[ColumnScaling] {
        &self.scaling
    }

    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Row subset of the stored matrix (no re-standardization).
    pub fn select_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.matrix.select_rows(rows)
    }

    /// Encodes and expands `rows` with the stored encoder, then applies the
    /// stored per-column (mean, sd). Categorical levels unseen in training
    /// encode as all-zero dummies.
    pub fn apply_scaling(&self, rows: &Dataset) -> Result<DMatrix<f64>> {
        let main = self.encoder.encode(rows)?;
        let n = rows.n_rows();
        let m = main.len();
        let mut data = Vec::with_capacity(n * self.columns.len());
        for (&idx, s) in self.retained.iter().zip(&self.scaling) {
            if idx < m {
                data.extend(main[idx].iter().map(|v| (v - s.mean) / s.sd));
            } else {
                let (i, j) = self.pairs[idx - m];
                data.extend(
                    main[i]
                        .iter()
                        .zip(&main[j])
                        .map(|(a, b)| (a * b - s.mean) / s.sd),
                );
            }
        }
        Ok(DMatrix::from_vec(n, self.columns.len(), data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Covariate;

    fn dataset(covs: Vec<Covariate>) -> Dataset {
        let n = covs[0].values.len();
        Dataset::new("y", vec![1; n], covs, None).unwrap()
    }

    fn names(dm: &DesignMatrix) -> Vec<String> {
        dm.column_names()
    }

    #[test]
    fn numeric_main_effect_is_one_column() {
        let me = encode_main_effects(&dataset(vec![Covariate::numeric("rain", vec![1.0, 2.0])]));
        assert_eq!(me.provenance().len(), 1);
        assert_eq!(me.provenance()[0].column_name, "rain");
    }

    #[test]
    fn two_level_categorical_uses_smallest_reference() {
        let me = encode_main_effects(&dataset(vec![Covariate::categorical(
            "season",
            vec!["wet", "dry", "wet"],
        )]));
        assert_eq!(me.provenance().len(), 1);
        assert_eq!(me.provenance()[0].column_name, "season=wet");
        assert_eq!(me.columns()[0], vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn three_level_categorical_gives_two_dummies() {
        let me = encode_main_effects(&dataset(vec![Covariate::categorical(
            "x",
            vec!["c", "a", "b", "a"],
        )]));
        let n: Vec<_> = me.provenance().iter().map(|c| c.column_name.as_str()).collect();
        assert_eq!(n, ["x=b", "x=c"]);
    }

    #[test]
    fn two_numerics_expand_to_three_columns() {
        let dm = expand_interactions(&encode_main_effects(&dataset(vec![
            Covariate::numeric("a", vec![1.0, 2.0, 3.0]),
            Covariate::numeric("b", vec![2.0, 0.0, 1.0]),
        ])));
        assert_eq!(names(&dm), ["a", "b", "a:b"]);
        assert_eq!(dm.matrix().column(2).as_slice(), &[2.0, 0.0, 3.0]);
        assert!(dm.columns()[2].is_interaction);
    }

    #[test]
    fn numeric_with_three_level_factor() {
        let dm = expand_interactions(&encode_main_effects(&dataset(vec![
            Covariate::numeric("rain", vec![1.0, 2.0, 3.0, 4.0]),
            Covariate::categorical("soil", vec!["a", "b", "c", "a"]),
        ])));
        // 1 + 2 main effects, 1 * 2 interactions
        assert_eq!(dm.n_cols(), 5);
        assert_eq!(
            names(&dm),
            ["rain", "soil=b", "soil=c", "rain:soil=b", "rain:soil=c"]
        );
    }

    #[test]
    fn ten_numerics_give_fifty_five_columns() {
        let covs = (0..10)
            .map(|k| Covariate::numeric(format!("x{k}"), vec![k as f64, 1.0, 2.0]))
            .collect();
        let dm = expand_interactions(&encode_main_effects(&dataset(covs)));
        assert_eq!(dm.n_cols(), 55);
    }

    #[test]
    fn standardize_simple_column() {
        let dm = DesignMatrix::build(&dataset(vec![Covariate::numeric(
            "a",
            vec![1.0, 2.0, 3.0],
        )]))
        .unwrap();
        let col = dm.matrix().column(0);
        let mean = col.iter().sum::<f64>() / 3.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-15);
        assert!((var - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_column_is_dropped_and_recorded() {
        let dm = DesignMatrix::build(&dataset(vec![
            Covariate::numeric("c", vec![4.0, 4.0, 4.0]),
            Covariate::numeric("a", vec![1.0, 2.0, 3.0]),
        ]))
        .unwrap();
        assert_eq!(names(&dm), ["a", "c:a"]);
        assert_eq!(dm.dropped(), ["c"]);
    }

    #[test]
    fn all_constant_is_empty_design() {
        let err = DesignMatrix::build(&dataset(vec![Covariate::numeric(
            "c",
            vec![4.0, 4.0, 4.0],
        )]))
        .unwrap_err();
        assert!(matches!(err, Error::EmptyDesign));
    }

    #[test]
    fn dummy_column_standardizes_to_plus_minus_one() {
        let dm = DesignMatrix::build(&dataset(vec![Covariate::categorical(
            "s",
            vec!["a", "a", "b", "b"],
        )]))
        .unwrap();
        assert_eq!(dm.matrix().column(0).as_slice(), &[-1.0, -1.0, 1.0, 1.0]);
        assert_eq!(dm.scaling()[0], ColumnScaling { mean: 0.5, sd: 0.5 });
    }

    #[test]
    fn apply_scaling_reproduces_training_matrix() {
        let d = dataset(vec![
            Covariate::numeric("rain", vec![0.3, 1.7, -2.2, 5.1, 0.9]),
            Covariate::categorical("soil", vec!["a", "b", "c", "a", "c"]),
            Covariate::numeric("temp", vec![21.0, 25.5, 19.25, 30.0, 22.0]),
        ]);
        let dm = DesignMatrix::build(&d).unwrap();
        let again = dm.apply_scaling(&d).unwrap();
        assert_eq!(again.as_slice(), dm.matrix().as_slice());
    }

    #[test]
    fn unseen_level_encodes_as_reference() {
        let d = dataset(vec![
            Covariate::numeric("rain", vec![1.0, 2.0, 3.0, 4.0]),
            Covariate::categorical("soil", vec!["a", "b", "c", "a"]),
        ]);
        let dm = DesignMatrix::build(&d).unwrap();
        let probe = Dataset::new(
            "y",
            vec![0, 0],
            vec![
                Covariate::numeric("rain", vec![2.5, 2.5]),
                Covariate::categorical("soil", vec!["marsh", "a"]),
            ],
            None,
        )
        .unwrap();
        let x = dm.apply_scaling(&probe).unwrap();
        assert_eq!(x.row(0), x.row(1));
        // raw dummies are zero, so the standardized value is -mean/sd
        for name in ["soil=b", "soil=c"] {
            let j = dm.column_index(name).unwrap();
            let s = dm.scaling()[j];
            assert_eq!(x[(0, j)], -s.mean / s.sd);
        }
    }

    #[test]
    fn value_at_mean_scales_to_zero() {
        let d = dataset(vec![Covariate::numeric("rain", vec![1.0, 2.0, 6.0])]);
        let dm = DesignMatrix::build(&d).unwrap();
        let mean = dm.scaling()[0].mean;
        let new = dataset(vec![Covariate::numeric("rain", vec![mean])]);
        assert_eq!(dm.apply_scaling(&new).unwrap()[(0, 0)], 0.0);
    }
}
