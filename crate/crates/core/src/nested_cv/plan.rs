//! Stratified assignment of rows to cross-validation blocks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratification {
    /// Strata are the four quartiles of the ranked response.
    #[default]
    Quartile,
    /// Strata are the values of the dataset's group column.
    Group,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CvPlan {
    pub n_blocks: usize,
    pub block_of: Vec<usize>,
    pub strategy: Stratification,
    pub seed: u64,
}

impl CvPlan {
    /// Rows of block `b`, ascending.
    pub fn rows_in(&self, b: usize) -> Vec<usize> {
        (0..self.block_of.len())
            .filter(|&i| self.block_of[i] == b)
            .collect()
    }

    /// Rows outside block `b`, ascending.
    pub fn rows_not_in(&self, b: usize) -> Vec<usize> {
        (0..self.block_of.len())
            .filter(|&i| self.block_of[i] != b)
            .collect()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_blocks];
        for &b in &self.block_of {
            sizes[b] += 1;
        }
        sizes
    }
}

/// Deals rows into `n_blocks` blocks, stratum by stratum.
///
/// Rows are shuffled with `seed`, then ordered into strata; each stratum is
/// dealt round-robin, the dealing position carrying over from one stratum to
/// the next, so block sizes differ by at most one both overall and within
/// every stratum.
pub fn make_plan(
    d: &Dataset,
    n_blocks: usize,
    strategy: Stratification,
    seed: u64,
) -> Result<CvPlan> {
    let n = d.n_rows();
    if n_blocks < 2 {
        return Err(Error::InvalidPlan(format!(
            "need at least 2 blocks, got {n_blocks}"
        )));
    }
    if n_blocks > n {
        return Err(Error::InvalidPlan(format!(
            "{n_blocks} blocks requested for {n} rows; use at most one block per row"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let strata: Vec<Vec<usize>> = match strategy {
        Stratification::Quartile => {
            let y = d.response();
            order.sort_by_key(|&i| y[i]);
            (0..4)
                .map(|q| order[q * n / 4..(q + 1) * n / 4].to_vec())
                .collect()
        }
        Stratification::Group => {
            let groups = d.groups().ok_or_else(|| {
                Error::InvalidPlan("group stratification needs a group column".into())
            })?;
            let mut levels: Vec<&String> = groups.labels.iter().collect();
            levels.sort();
            levels.dedup();
            levels
                .into_iter()
                .map(|level| {
                    order
                        .iter()
                        .copied()
                        .filter(|&i| &groups.labels[i] == level)
                        .collect()
                })
                .collect()
        }
    };

    let mut block_of = vec![usize::MAX; n];
    let mut next = 0;
    for stratum in strata {
        for i in stratum {
            block_of[i] = next;
            next = (next + 1) % n_blocks;
        }
    }
    debug_assert!(block_of.iter().all(|&b| b < n_blocks));
    Ok(CvPlan {
        n_blocks,
        block_of,
        strategy,
        seed,
    })
}
