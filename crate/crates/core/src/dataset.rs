//! Raw observations: a count response plus named numeric or categorical
//! covariates, loaded from CSV according to a [`SchemaConfig`].

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Numeric,
    Categorical,
}

impl std::str::FromStr for CovariateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "numeric" => Ok(CovariateKind::Numeric),
            "categorical" => Ok(CovariateKind::Categorical),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValues {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl CovariateValues {
    pub fn len(&self) -> usize {
        match self {
            CovariateValues::Numeric(v) => v.len(),
            CovariateValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> CovariateKind {
        match self {
            CovariateValues::Numeric(_) => CovariateKind::Numeric,
            CovariateValues::Categorical(_) => CovariateKind::Categorical,
        }
    }

    fn select(&self, rows: &[usize]) -> CovariateValues {
        match self {
            CovariateValues::Numeric(v) => {
                CovariateValues::Numeric(rows.iter().map(|&i| v[i]).collect())
            }
            CovariateValues::Categorical(v) => {
                CovariateValues::Categorical(rows.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: CovariateValues,
}

impl Covariate {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Covariate {
            name: name.into(),
            values: CovariateValues::Numeric(values),
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, values: Vec<S>) -> Self {
        Covariate {
            name: name.into(),
            values: CovariateValues::Categorical(values.into_iter().map(Into::into).collect()),
        }
    }

    /// Sorted distinct levels; empty for numeric covariates.
    pub fn levels(&self) -> Vec<String> {
        match &self.values {
            CovariateValues::Numeric(_) => Vec::new(),
            CovariateValues::Categorical(v) => v
                .iter()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        }
    }
}

/// Optional per-row grouping key used for stratification.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLabels {
    pub name: String,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    response_name: String,
    response: Vec<u64>,
    covariates: Vec<Covariate>,
    groups: Option<GroupLabels>,
}

impl Dataset {
    pub fn new(
        response_name: impl Into<String>,
        response: Vec<u64>,
        covariates: Vec<Covariate>,
        groups: Option<GroupLabels>,
    ) -> Result<Self> {
        let d = Dataset {
            response_name: response_name.into(),
            response,
            covariates,
            groups,
        };
        d.check_shape()?;
        for c in &d.covariates {
            if c.values.kind() == CovariateKind::Categorical && c.levels().len() < 2 {
                return Err(Error::SingleLevel(c.name.clone()));
            }
        }
        Ok(d)
    }

    fn check_shape(&self) -> Result<()> {
        let n = self.response.len();
        let mut seen = HashSet::new();
        for c in &self.covariates {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::DuplicateCovariate(c.name.clone()));
            }
            if c.values.len() != n {
                return Err(Error::LengthMismatch {
                    name: c.name.clone(),
                    expected: n,
                    found: c.values.len(),
                });
            }
            if let CovariateValues::Numeric(v) = &c.values {
                if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                    return Err(Error::InvalidNumber {
                        row: row + 1,
                        column: c.name.clone(),
                        value: v[row].to_string(),
                    });
                }
            }
        }
        if let Some(g) = &self.groups {
            if g.labels.len() != n {
                return Err(Error::LengthMismatch {
                    name: g.name.clone(),
                    expected: n,
                    found: g.labels.len(),
                });
            }
        }
        Ok(())
    }

    /// Row subset in the given order.
    ///
    /// Shape invariants carry over, but a categorical covariate may observe a
    /// single level inside the subset; encoding handles that by emitting no
    /// dummy columns for it.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            response_name: self.response_name.clone(),
            response: rows.iter().map(|&i| self.response[i]).collect(),
            covariates: self
                .covariates
                .iter()
                .map(|c| Covariate {
                    name: c.name.clone(),
                    values: c.values.select(rows),
                })
                .collect(),
            groups: self.groups.as_ref().map(|g| GroupLabels {
                name: g.name.clone(),
                labels: rows.iter().map(|&i| g.labels[i].clone()).collect(),
            }),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn response(&self) -> &[u64] {
        &self.response
    }

    pub fn response_f64(&self) -> Vec<f64> {
        self.response.iter().map(|&y| y as f64).collect()
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name)
    }

    pub fn groups(&self) -> Option<&GroupLabels> {
        self.groups.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: String,
}

/// Which CSV columns make up a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub response: String,
    pub covariates: Vec<CovariateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_count(raw: &str, row: usize) -> Result<u64> {
    let bad = || Error::InvalidResponse {
        row,
        value: raw.to_string(),
    };
    if let Ok(v) = raw.parse::<u64>() {
        return Ok(v);
    }
    let v: f64 = raw.parse().map_err(|_| bad())?;
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(bad())
    }
}

/// Reads an RFC-4180 CSV with a header row. Rows are numbered from 1
/// (first data row) in error messages.
pub fn load_csv(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &SchemaConfig) -> Result<Dataset> {
    let kinds = schema
        .covariates
        .iter()
        .map(|c| c.kind.parse::<CovariateKind>())
        .collect::<Result<Vec<_>>>()?;

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let response_idx = column_index(&headers, &schema.response)?;
    let cov_idx = schema
        .covariates
        .iter()
        .map(|c| column_index(&headers, &c.name))
        .collect::<Result<Vec<_>>>()?;
    let group_idx = schema
        .group
        .as_deref()
        .map(|g| column_index(&headers, g))
        .transpose()?;

    let mut response = Vec::new();
    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); kinds.len()];
    let mut categorical: Vec<Vec<String>> = vec![Vec::new(); kinds.len()];
    let mut groups = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cell = |idx: usize, column: &str| -> Result<&str> {
            match record.get(idx).map(str::trim) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(Error::MissingCell {
                    row,
                    column: column.to_string(),
                }),
            }
        };

        response.push(parse_count(cell(response_idx, &schema.response)?, row)?);
        for (k, spec) in schema.covariates.iter().enumerate() {
            let raw = cell(cov_idx[k], &spec.name)?;
            match kinds[k] {
                CovariateKind::Numeric => {
                    let v: f64 = raw
                        .parse()
                        .ok()
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| Error::InvalidNumber {
                            row,
                            column: spec.name.clone(),
                            value: raw.to_string(),
                        })?;
                    numeric[k].push(v);
                }
                CovariateKind::Categorical => categorical[k].push(raw.to_string()),
            }
        }
        if let (Some(idx), Some(name)) = (group_idx, schema.group.as_deref()) {
            groups.push(cell(idx, name)?.to_string());
        }
    }

    let covariates = schema
        .covariates
        .iter()
        .zip(kinds)
        .zip(numeric.into_iter().zip(categorical))
        .map(|((spec, kind), (num, cat))| Covariate {
            name: spec.name.clone(),
            values: match kind {
                CovariateKind::Numeric => CovariateValues::Numeric(num),
                CovariateKind::Categorical => CovariateValues::Categorical(cat),
            },
        })
        .collect();
    let groups = schema.group.as_ref().map(|name| GroupLabels {
        name: name.clone(),
        labels: groups,
    });
    Dataset::new(schema.response.clone(), response, covariates, groups)
}

/// Writes the dataset in the layout [`load_csv`] accepts: response first,
/// then covariates in order, then the group column if any.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv_bytes(d)?).map_err(|e| Error::Output {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn to_csv_bytes(d: &Dataset) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec![d.response_name().to_string()];
    header.extend(d.covariates().iter().map(|c| c.name.clone()));
    if let Some(g) = d.groups() {
        header.push(g.name.clone());
    }
    wtr.write_record(&header)?;
    for i in 0..d.n_rows() {
        let mut rec = vec![d.response()[i].to_string()];
        for c in d.covariates() {
            rec.push(match &c.values {
                CovariateValues::Numeric(v) => v[i].to_string(),
                CovariateValues::Categorical(v) => v[i].clone(),
            });
        }
        if let Some(g) = d.groups() {
            rec.push(g.labels[i].clone());
        }
        wtr.write_record(&rec)?;
    }
    wtr.into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Schema matching a dataset, as [`write_csv`] lays it out.
pub fn schema_of(d: &Dataset) -> SchemaConfig {
    SchemaConfig {
        response: d.response_name().to_string(),
        covariates: d
            .covariates()
            .iter()
            .map(|c| CovariateSpec {
                name: c.name.clone(),
                kind: match c.values.kind() {
                    CovariateKind::Numeric => "numeric".into(),
                    CovariateKind::Categorical => "categorical".into(),
                },
            })
            .collect(),
        group: d.groups().map(|g| g.name.clone()),
    }
}
