//! The label association problem: every cluster holds `s` distinct labels out
//! of `K`, and a mechanism must reveal which `(cluster, label)` pairs occur.
//!
//! Any label-DP mechanism's precision `phi` and recall `eta` satisfy
//! `phi eta e^-eps <= s / (K - s)`. This module supplies instances, a
//! per-bit randomized-response mechanism to measure against that bound, and
//! the measurement itself.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{lap_precision_recall, PrecisionRecall};
use crate::receipt::{MechanismKind, PrivacyReceipt};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LapTruth {
    pub num_labels: usize,
    pub labels_per_cluster: usize,
    /// `Y_c` for every cluster.
    pub sets: Vec<BTreeSet<usize>>,
}

impl LapTruth {
    pub fn num_clusters(&self) -> usize {
        self.sets.len()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.sets
            .iter()
            .enumerate()
            .flat_map(|(c, set)| set.iter().map(move |&y| (c, y)))
            .collect()
    }
}

/// One label of one cluster replaced by a label the cluster did not have.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LapNeighbor {
    pub cluster: usize,
    pub removed: usize,
    pub added: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LapInstance {
    pub truth: LapTruth,
    pub neighbor: LapNeighbor,
}

impl LapInstance {
    /// The label sets of the neighbouring dataset.
    pub fn neighbor_truth(&self) -> LapTruth {
        let mut t = self.truth.clone();
        let set = &mut t.sets[self.neighbor.cluster];
        set.remove(&self.neighbor.removed);
        set.insert(self.neighbor.added);
        t
    }
}

/// Draws every cluster's `s` labels uniformly without replacement.
pub fn generate_truth(num_clusters: usize, s: usize, num_labels: usize, rng: &RngStream) -> Result<LapTruth> {
    if num_clusters == 0 {
        return Err(Error::param("C", "at least one cluster is needed"));
    }
    if s == 0 || s > num_labels {
        return Err(Error::param("s", format!("{s} is outside [1, K = {num_labels}]")));
    }
    let sets = (0..num_clusters)
        .map(|c| {
            let mut r = rng.derive(c as u64).rng();
            index::sample(&mut r, num_labels, s).into_iter().collect()
        })
        .collect();
    Ok(LapTruth {
        num_labels,
        labels_per_cluster: s,
        sets,
    })
}

/// An instance with a neighbour: a uniform cluster drops a uniform one of its
/// labels for a uniform label it lacked.
pub fn generate_lap(num_clusters: usize, s: usize, num_labels: usize, rng: &RngStream) -> Result<LapInstance> {
    if s >= num_labels {
        return Err(Error::param(
            "s",
            format!("s = K = {num_labels} leaves no label to add, so no neighbour exists"),
        ));
    }
    let truth = generate_truth(num_clusters, s, num_labels, &rng.derive_tag("lap/truth"))?;
    let mut r = rng.derive_tag("lap/neighbor").rng();
    let cluster = r.random_range(0..num_clusters);
    let have: Vec<usize> = truth.sets[cluster].iter().copied().collect();
    let missing: Vec<usize> = (0..num_labels).filter(|y| !truth.sets[cluster].contains(y)).collect();
    let removed = have[r.random_range(0..have.len())];
    let added = missing[r.random_range(0..missing.len())];
    Ok(LapInstance {
        truth,
        neighbor: LapNeighbor { cluster, removed, added },
    })
}

/// `(Pr[report 1 | bit 1], Pr[report 1 | bit 0])` for a total budget; each
/// bit gets half, since a label change moves two membership bits.
pub fn bit_probabilities(epsilon_total: f64) -> Result<(f64, f64)> {
    if !(epsilon_total > 0.0) {
        return Err(Error::param("epsilon", format!("{epsilon_total} must be positive")));
    }
    if epsilon_total == f64::INFINITY {
        return Ok((1.0, 0.0));
    }
    let e = (epsilon_total / 2.0).exp();
    Ok((e / (1.0 + e), 1.0 / (1.0 + e)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LapOutput {
    /// Sorted `(cluster, label)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub receipt: PrivacyReceipt,
}

/// Randomized response on each of the `C K` membership bits.
pub fn rr_membership_mechanism(truth: &LapTruth, epsilon_total: f64, rng: &RngStream) -> Result<LapOutput> {
    let (keep, false_positive) = bit_probabilities(epsilon_total)?;
    let pairs = release(truth, keep, false_positive, rng);
    let mut receipt = PrivacyReceipt::new(
        MechanismKind::LapMembership,
        epsilon_total,
        0.0,
        serde_json::json!({
            "epsilon_bit": epsilon_total / 2.0,
            "keep": keep,
            "false_positive": false_positive,
        }),
    );
    receipt
        .notes
        .push("one label change moves two membership bits; each bit spends half the budget".into());
    Ok(LapOutput { pairs, receipt })
}

fn release(truth: &LapTruth, keep: f64, false_positive: f64, rng: &RngStream) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (c, set) in truth.sets.iter().enumerate() {
        let mut r = rng.derive(c as u64).rng();
        for y in 0..truth.num_labels {
            let p = if set.contains(&y) { keep } else { false_positive };
            if r.random::<f64>() < p {
                pairs.push((c, y));
            }
        }
    }
    pairs
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardnessVerdict {
    /// `phi eta e^-eps`.
    pub product: f64,
    /// `s / (K - s)`.
    pub bound: f64,
    /// `bound + 3 stderr - product`; nonnegative on a pass.
    pub margin: f64,
    pub pass: bool,
}

pub fn check_hardness_bound(precision: f64, recall: f64, epsilon: f64, s: usize, num_labels: usize, stderr: f64) -> Result<HardnessVerdict> {
    if s >= num_labels {
        return Err(Error::param("s", format!("the bound s/(K-s) needs s < K, got s = {s}, K = {num_labels}")));
    }
    let product = precision * recall * (-epsilon).exp();
    let bound = s as f64 / (num_labels - s) as f64;
    let margin = bound + 3.0 * stderr - product;
    Ok(HardnessVerdict {
        product,
        bound,
        margin,
        pass: margin >= 0.0,
    })
}

/// Ratio-of-means estimates over many independent instances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LapMeasurement {
    pub epsilon: f64,
    pub trials: usize,
    pub precision: f64,
    pub precision_se: f64,
    pub recall: f64,
    pub recall_se: f64,
    /// `precision * recall * e^-eps` and its delta-method standard error.
    pub product: f64,
    pub product_se: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Runs the mechanism on `trials` fresh instances.
///
/// Precision is total hits over total output size and recall total hits over
/// total truth size, matching the expectation-over-mechanism form of both.
pub fn measure(
    num_clusters: usize,
    s: usize,
    num_labels: usize,
    epsilon: f64,
    trials: usize,
    rng: &RngStream,
) -> Result<LapMeasurement> {
    if trials < 2 {
        return Err(Error::param("trials", "standard errors need at least two trials"));
    }
    let (keep, false_positive) = bit_probabilities(epsilon)?;
    let per_trial: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial = rng.derive(t as u64);
            let truth = generate_truth(num_clusters, s, num_labels, &trial.derive_tag("truth"))?;
            let out = release(&truth, keep, false_positive, &trial.derive_tag("release"));
            let hits = out.iter().filter(|(c, y)| truth.sets[*c].contains(y)).count();
            Ok((hits as f64, out.len() as f64))
        })
        .collect::<Result<_>>()?;
    let m = trials as f64;
    let truth_size = (num_clusters * s) as f64;
    let mh = per_trial.iter().map(|p| p.0).sum::<f64>() / m;
    let mo = per_trial.iter().map(|p| p.1).sum::<f64>() / m;
    let (mut vh, mut vo, mut cov) = (0.0, 0.0, 0.0);
    for (h, o) in &per_trial {
        vh += (h - mh).powi(2);
        vo += (o - mo).powi(2);
        cov += (h - mh) * (o - mo);
    }
    let (vh, vo, cov) = (vh / (m - 1.0), vo / (m - 1.0), cov / (m - 1.0));
    // delta method for g(mean hits, mean output size)
    let se = |gh: f64, go: f64| ((gh * gh * vh + go * go * vo + 2.0 * gh * go * cov) / m).max(0.0).sqrt();
    let (precision, precision_se) = if mo > 0.0 {
        (mh / mo, se(1.0 / mo, -mh / (mo * mo)))
    } else {
        (f64::NAN, f64::NAN)
    };
    let recall = mh / truth_size;
    let recall_se = se(1.0 / truth_size, 0.0);
    let scale = (-epsilon).exp() / truth_size;
    let product = if mo > 0.0 { mh * mh / mo * scale } else { 0.0 };
    let product_se = if mo > 0.0 {
        se(2.0 * mh / mo * scale, -mh * mh / (mo * mo) * scale)
    } else {
        0.0
    };
    let bound = s as f64 / (num_labels - s).max(1) as f64;
    let verdict = check_hardness_bound(
        if mo > 0.0 { precision } else { 0.0 },
        recall,
        epsilon,
        s,
        num_labels,
        product_se,
    )?;
    Ok(LapMeasurement {
        epsilon,
        trials,
        precision,
        precision_se,
        recall,
        recall_se,
        product,
        product_se,
        bound,
        margin: verdict.margin,
        pass: verdict.pass,
    })
}

/// Precision and recall of one release against its truth.
pub fn score(truth: &LapTruth, output: &LapOutput) -> PrecisionRecall {
    lap_precision_recall(&truth.sets, &output.pairs)
}

/// Parses `start:end:count` into `count` geometrically spaced values.
pub fn parse_epsilon_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::param("epsilon-grid", format!("`{spec}` is not start:end:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let end: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(start > 0.0 && end >= start && end.is_finite()) || count == 0 {
        return Err(Error::param("epsilon-grid", format!("`{spec}` needs 0 < start <= end and count >= 1")));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    let ratio = (end / start).ln() / (count - 1) as f64;
    Ok((0..count)
        .map(|i| if i == count - 1 { end } else { start * (ratio * i as f64).exp() })
        .collect())
}
