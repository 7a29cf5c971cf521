use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the sum of a probability vector.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector over the labels `0..K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    /// Validates nonnegativity and that the entries sum to one within [`SUM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no outcomes".into()));
        }
        if let Some((y, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidDistribution(format!(
                "entry {y} is {p}, expected a finite nonnegative value"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform distribution over zero outcomes");
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn point_mass(k: usize, at: usize) -> Self {
        assert!(at < k, "point mass outside support");
        let mut probs = vec![0.0; k];
        probs[at] = 1.0;
        Self { probs }
    }

    /// Empirical distribution of `labels` over `0..k`.
    pub fn empirical(labels: impl IntoIterator<Item = usize>, k: usize) -> Result<Self> {
        let mut counts = vec![0usize; k];
        let mut n = 0usize;
        for y in labels {
            if y >= k {
                return Err(Error::InvalidDistribution(format!("label {y} outside 0..{k}")));
            }
            counts[y] += 1;
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidDistribution("no observations".into()));
        }
        Ok(Self {
            probs: counts.into_iter().map(|c| c as f64 / n as f64).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_outcomes(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, y: usize) -> f64 {
        self.probs[y]
    }
}

impl TryFrom<Vec<f64>> for DiscreteDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<DiscreteDistribution> for Vec<f64> {
    fn from(d: DiscreteDistribution) -> Self {
        d.probs
    }
}

/// Total variation without the 1/2 factor: `sum_y |a_y - b_y|`, in `[0, 2]`.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "total variation of vectors of different length");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
