//! Gaussian-blob datasets whose labels follow the blob, for desk-scale
//! privacy/utility experiments.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Blob `c` carries label `c`; a fraction `label_noise` of labels is moved to
/// a uniformly chosen other label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub blobs: usize,
    /// Standard deviation of each blob centre coordinate.
    pub separation: f64,
    /// Standard deviation of points around their centre.
    pub spread: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_train: 5000,
            n_test: 2000,
            dim: 20,
            blobs: 10,
            separation: 0.5,
            spread: 1.0,
            label_noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.dim == 0 {
            return Err(Error::param("dim", "must be at least 1"));
        }
        if self.blobs < 2 {
            return Err(Error::param("blobs", "at least two blobs (labels) are needed"));
        }
        if !(self.separation >= 0.0 && self.spread >= 0.0) {
            return Err(Error::param("spread", "separation and spread must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::param("label_noise", format!("{} is outside [0, 1]", self.label_noise)));
        }
        Ok(())
    }
}

/// Training and test sets drawn around the same blob centres. Point `i`
/// belongs to blob `i mod blobs`.
pub fn generate(config: &SyntheticConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    config.validate()?;
    let root = RngStream::from_seed(config.seed);
    let mut r = root.derive_tag("synthetic/centres").rng();
    let centres: Vec<Vec<f64>> = (0..config.blobs)
        .map(|_| {
            (0..config.dim)
                .map(|_| config.separation * r.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let draw = |n: usize, tag: &str| {
        let mut r = root.derive_tag(tag).rng();
        let mut feats = Vec::with_capacity(n * config.dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % config.blobs;
            feats.extend(centres[c].iter().map(|m| m + config.spread * r.sample::<f64, _>(StandardNormal)));
            let y = if r.random::<f64>() < config.label_noise {
                let other = r.random_range(0..config.blobs - 1);
                if other >= c {
                    other + 1
                } else {
                    other
                }
            } else {
                c
            };
            labels.push(y);
        }
        LabeledDataset::from_flat(feats, config.dim, labels, config.blobs)
    };
    Ok((draw(config.n_train, "synthetic/train")?, draw(config.n_test, "synthetic/test")?))
}
