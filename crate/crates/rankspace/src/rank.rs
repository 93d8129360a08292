use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Per-layer rank assignment, the point being optimized by the search.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankVector(Vec<usize>);

impl RankVector {
    pub fn new(ranks: Vec<usize>) -> Self {
        RankVector(ranks)
    }

    /// All layers at the same rank.
    pub fn uniform(rank: usize, layers: usize) -> Self {
        RankVector(vec![rank; layers])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, layer: usize) -> usize {
        self.0[layer]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, usize> {
        self.0.iter()
    }

    /// Copy of this vector with one layer's rank replaced.
    pub fn with_rank_at(&self, layer: usize, rank: usize) -> Self {
        let mut ranks = self.0.clone();
        ranks[layer] = rank;
        RankVector(ranks)
    }

    /// Sum of ranks (the rank-budget total, as opposed to the parameter count).
    pub fn total_rank(&self) -> usize {
        self.0.iter().sum()
    }
}

impl From<Vec<usize>> for RankVector {
    fn from(ranks: Vec<usize>) -> Self {
        RankVector(ranks)
    }
}

impl std::ops::Index<usize> for RankVector {
    type Output = usize;
    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

/// Renders as `r1@r2@...@rN`, matching the configuration-name convention
/// used in sweep reports.
impl fmt::Display for RankVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for r in &self.0 {
            if !first {
                write!(f, "@")?;
            }
            write!(f, "{r}")?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for RankVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let ranks = s
            .split('@')
            .map(|tok| {
                tok.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::invalid(format!("bad rank `{tok}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RankVector(ranks))
    }
}
