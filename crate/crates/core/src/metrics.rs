//! How well a clustering summarizes labels, and how much the central
//! mechanism distorts the summaries.
//!
//! Total variation here is the un-halved `sum |p - q|`, so heterogeneity lies in `[0, 2]`.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::central::{noisy_distributions, NoiseScale};
use crate::clustering::{ClusterAssignment, ClusteredDataset};
use crate::dist::{total_variation, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Known label conditionals `p(y|x)` of a finite example set, with the
/// marginal weight of each example.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalLabelModel {
    p_given_x: Vec<DiscreteDistribution>,
    marginal: Vec<f64>,
}

impl ConditionalLabelModel {
    pub fn new(p_given_x: Vec<DiscreteDistribution>, marginal: Vec<f64>) -> Result<Self> {
        if p_given_x.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if marginal.len() != p_given_x.len() {
            return Err(Error::LengthMismatch {
                expected: p_given_x.len(),
                got: marginal.len(),
            });
        }
        let k = p_given_x[0].num_outcomes();
        if let Some(d) = p_given_x.iter().find(|d| d.num_outcomes() != k) {
            return Err(Error::InvalidDistribution(format!(
                "{} outcomes where {k} were expected",
                d.num_outcomes()
            )));
        }
        let _ = DiscreteDistribution::new(marginal.clone())
            .map_err(|e| Error::InvalidDistribution(format!("marginal: {e}")))?;
        Ok(Self { p_given_x, marginal })
    }

    /// Uniform marginal over the examples.
    pub fn uniform(p_given_x: Vec<DiscreteDistribution>) -> Result<Self> {
        let n = p_given_x.len().max(1);
        Self::new(p_given_x, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.p_given_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_given_x.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.p_given_x[0].num_outcomes()
    }

    pub fn p_given_x(&self, i: usize) -> &DiscreteDistribution {
        &self.p_given_x[i]
    }

    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    /// `p(y|c)`: the marginal-weighted mixture of `p(y|x)` over each cluster.
    pub fn p_given_c(&self, assignment: &ClusterAssignment) -> Result<Vec<DiscreteDistribution>> {
        if assignment.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: assignment.len(),
            });
        }
        let k = self.num_labels();
        let mut mass = vec![0.0; assignment.num_clusters()];
        let mut acc = vec![vec![0.0; k]; assignment.num_clusters()];
        for (i, p) in self.p_given_x.iter().enumerate() {
            let c = assignment.cluster_of(i);
            mass[c] += self.marginal[i];
            for (a, q) in acc[c].iter_mut().zip(p.probs()) {
                *a += self.marginal[i] * q;
            }
        }
        acc.into_iter()
            .zip(mass)
            .enumerate()
            .map(|(c, (row, m))| {
                if m <= 0.0 {
                    return Err(Error::EmptyCluster(c));
                }
                DiscreteDistribution::new(row.into_iter().map(|v| v / m).collect())
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub phi: f64,
    /// Within-cluster weighted mean of the per-example distances.
    pub per_cluster_tv: Vec<f64>,
}

/// `phi = E_X sum_y |p(y|X) - p(y|c_X)|`, exactly over the example set.
pub fn heterogeneity(model: &ConditionalLabelModel, assignment: &ClusterAssignment) -> Result<HeterogeneityReport> {
    let p_c = model.p_given_c(assignment)?;
    let c_count = assignment.num_clusters();
    let mut per = vec![0.0; c_count];
    let mut mass = vec![0.0; c_count];
    let mut phi = 0.0;
    for i in 0..model.len() {
        let c = assignment.cluster_of(i);
        let w = model.marginal[i];
        let tv = total_variation(model.p_given_x[i].probs(), p_c[c].probs());
        phi += w * tv;
        per[c] += w * tv;
        mass[c] += w;
    }
    for (p, m) in per.iter_mut().zip(&mass) {
        *p /= m;
    }
    Ok(HeterogeneityReport {
        phi: phi.clamp(0.0, 2.0),
        per_cluster_tv: per,
    })
}

/// The one-hot stand-in for heterogeneity on real data: each example's
/// `p(y|x)` is replaced by the indicator of its observed label.
///
/// This over-states the true heterogeneity whenever labels are noisy; it is a
/// proxy, not an estimate of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyReport {
    pub phi_proxy: f64,
    pub per_cluster_tv: Vec<f64>,
    pub min_cluster_size: usize,
}

pub fn empirical_heterogeneity_report(data: &ClusteredDataset) -> Result<ProxyReport> {
    let p_hat = data.empirical_distributions()?;
    let sizes = data.assignment().sizes();
    let mut per = vec![0.0; data.num_clusters()];
    for (i, &y) in data.data().labels().iter().enumerate() {
        let c = data.cluster_of(i);
        // |1 - p(y)| + sum_{y' != y} p(y') = 2 (1 - p(y))
        per[c] += 2.0 * (1.0 - p_hat[c].prob(y));
    }
    let n = data.data().len() as f64;
    let phi_proxy = per.iter().sum::<f64>() / n;
    for (p, &s) in per.iter_mut().zip(sizes) {
        *p /= s as f64;
    }
    Ok(ProxyReport {
        phi_proxy,
        per_cluster_tv: per,
        min_cluster_size: data.assignment().min_cluster_size(),
    })
}

pub fn empirical_heterogeneity_proxy(data: &ClusteredDataset) -> Result<f64> {
    empirical_heterogeneity_report(data).map(|r| r.phi_proxy)
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// `psi = max_c E sum_y |q~(y|c) - p^(y|c)|` for this dataset, estimated over
/// `trials` independent runs of the noise, clip and renormalize stage.
///
/// The reported error is that of the cluster attaining the maximum.
pub fn empirical_distortion(
    data: &ClusteredDataset,
    tau: f64,
    sigma: NoiseScale,
    trials: usize,
    rng: &RngStream,
) -> Result<Estimate> {
    if trials == 0 {
        return Err(Error::param("trials", "at least one trial is needed"));
    }
    let c_count = data.num_clusters();
    let per_trial: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let d = noisy_distributions(data, tau, sigma, &rng.derive(t as u64))?;
            Ok(d.q_hat
                .iter()
                .zip(&d.q_tilde)
                .map(|(a, b)| total_variation(a.probs(), b.probs()))
                .collect())
        })
        .collect::<Result<_>>()?;
    let m = trials as f64;
    let mut best = Estimate {
        mean: f64::NEG_INFINITY,
        std_error: 0.0,
    };
    for c in 0..c_count {
        let mean = per_trial.iter().map(|r| r[c]).sum::<f64>() / m;
        if mean > best.mean {
            let var = if trials > 1 {
                per_trial.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            best = Estimate {
                mean,
                std_error: (var / m).sqrt(),
            };
        }
    }
    Ok(best)
}

/// `2 K tau + 2 sqrt(2) K sigma / s`, the distortion bound for minimum cluster size `s`.
pub fn distortion_bound(num_labels: usize, tau: f64, sigma: f64, min_cluster_size: usize) -> f64 {
    let k = num_labels as f64;
    2.0 * k * tau + 2.0 * std::f64::consts::SQRT_2 * k * sigma / min_cluster_size as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    /// `None` when the output is empty.
    pub precision: Option<f64>,
    pub recall: f64,
}

/// Precision and recall of recovered `(cluster, label)` pairs against the
/// true per-cluster label sets. Duplicate output pairs count once.
pub fn lap_precision_recall(truth: &[BTreeSet<usize>], output: &[(usize, usize)]) -> PrecisionRecall {
    let total: usize = truth.iter().map(BTreeSet::len).sum();
    let unique: BTreeSet<(usize, usize)> = output.iter().copied().collect();
    let hits = unique
        .iter()
        .filter(|(c, y)| truth.get(*c).is_some_and(|set| set.contains(y)))
        .count();
    PrecisionRecall {
        precision: (!unique.is_empty()).then(|| hits as f64 / unique.len() as f64),
        recall: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::LabeledDataset;

    fn dd(p: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(p.to_vec()).unwrap()
    }

    fn clustered(labels: Vec<usize>, clusters: Vec<usize>, k: usize) -> ClusteredDataset {
        let feats = (0..labels.len()).map(|i| vec![i as f64]).collect();
        let d = LabeledDataset::new(feats, labels, k).unwrap();
        ClusteredDataset::new(d, ClusterAssignment::from_ids(clusters).unwrap()).unwrap()
    }

    #[test]
    fn heterogeneity_examples() {
        let one = ClusterAssignment::from_ids(vec![0; 4]).unwrap();
        let shared = ConditionalLabelModel::uniform(vec![dd(&[0.3, 0.7]); 4]).unwrap();
        assert_eq!(heterogeneity(&shared, &one).unwrap().phi, 0.0);

        let split = ConditionalLabelModel::uniform(vec![dd(&[0.0, 1.0]), dd(&[0.0, 1.0]), dd(&[1.0, 0.0]), dd(&[1.0, 0.0])])
            .unwrap();
        let r = heterogeneity(&split, &one).unwrap();
        assert!((r.phi - 1.0).abs() < 1e-15);
        assert_eq!(r.per_cluster_tv, vec![1.0]);

        // splitting into pure clusters removes it
        let two = ClusterAssignment::from_ids(vec![0, 0, 1, 1]).unwrap();
        assert_eq!(heterogeneity(&split, &two).unwrap().phi, 0.0);
    }

    #[test]
    fn heterogeneity_uses_the_marginal() {
        let m = ConditionalLabelModel::new(vec![dd(&[1.0, 0.0]), dd(&[0.0, 1.0])], vec![0.75, 0.25]).unwrap();
        let one = ClusterAssignment::from_ids(vec![0, 0]).unwrap();
        // p(y|c) = (0.75, 0.25); distances 0.5 and 1.5
        let r = heterogeneity(&m, &one).unwrap();
        assert!((r.phi - (0.75 * 0.5 + 0.25 * 1.5)).abs() < 1e-15);
    }

    #[test]
    fn model_validation() {
        assert!(ConditionalLabelModel::new(vec![dd(&[1.0, 0.0])], vec![0.5]).is_err());
        assert!(ConditionalLabelModel::new(vec![dd(&[1.0, 0.0]), dd(&[1.0])], vec![0.5, 0.5]).is_err());
        assert!(ConditionalLabelModel::new(vec![], vec![]).is_err());
    }

    #[test]
    fn proxy_examples() {
        assert_eq!(empirical_heterogeneity_proxy(&clustered(vec![1, 1, 1], vec![0; 3], 2)).unwrap(), 0.0);
        assert!((empirical_heterogeneity_proxy(&clustered(vec![1, 1, 0, 0], vec![0; 4], 2)).unwrap() - 1.0).abs() < 1e-15);
        let pure = clustered(vec![0, 0, 1, 2, 2], vec![0, 0, 1, 2, 2], 3);
        let r = empirical_heterogeneity_report(&pure).unwrap();
        assert_eq!(r.phi_proxy, 0.0);
        assert_eq!(r.min_cluster_size, 1);
    }

    #[test]
    fn distortion_examples() {
        let data = clustered(vec![0, 0, 1, 0, 1, 1, 1], vec![0, 0, 0, 1, 1, 1, 1], 2);
        let e = empirical_distortion(&data, 0.0, NoiseScale::Finite(0.0), 3, &RngStream::from_seed(1)).unwrap();
        assert_eq!(e.mean, 0.0);

        let labels = [vec![0; 9], vec![1]].concat();
        let data = clustered(labels, vec![0; 10], 2);
        let e = empirical_distortion(&data, 0.5, NoiseScale::Finite(1.0), 50, &RngStream::from_seed(1)).unwrap();
        assert!((e.mean - 0.8).abs() < 1e-12, "{e:?}");
        assert!(e.std_error < 1e-12);
        assert!(empirical_distortion(&data, 0.5, NoiseScale::Finite(1.0), 0, &RngStream::from_seed(1)).is_err());
    }

    #[test]
    fn distortion_respects_bound() {
        let labels: Vec<usize> = (0..300).map(|i| (i % 7 == 0) as usize + (i % 11 == 0) as usize).collect();
        let clusters: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let data = clustered(labels, clusters, 3);
        for (tau, sigma) in [(0.01, 1.0), (0.1, 5.0), (0.3, 20.0)] {
            let e = empirical_distortion(&data, tau, NoiseScale::Finite(sigma), 200, &RngStream::from_seed(9)).unwrap();
            let bound = distortion_bound(3, tau, sigma, 100);
            assert!(e.mean <= bound + 3.0 * e.std_error, "{e:?} vs {bound}");
        }
    }

    #[test]
    fn precision_recall_examples() {
        let truth: Vec<BTreeSet<usize>> = vec![[0, 1].into(), [2, 3].into()];
        let exact = [(0, 0), (0, 1), (1, 2), (1, 3)];
        assert_eq!(
            lap_precision_recall(&truth, &exact),
            PrecisionRecall {
                precision: Some(1.0),
                recall: 1.0
            }
        );
        let all: Vec<(usize, usize)> = (0..2).flat_map(|c| (0..5).map(move |y| (c, y))).collect();
        let r = lap_precision_recall(&truth, &all);
        assert_eq!(r.recall, 1.0);
        assert!((r.precision.unwrap() - 2.0 / 5.0).abs() < 1e-15);
        let empty = lap_precision_recall(&truth, &[]);
        assert_eq!(empty.precision, None);
        assert_eq!(empty.recall, 0.0);
    }

    fn model_and_clusters() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
        (2usize..5, 1usize..20).prop_flat_map(|(k, n)| {
            (
                prop::collection::vec(prop::collection::vec(0.01f64..1.0, k), n),
                prop::collection::vec(0usize..3, n),
            )
        })
    }

    proptest! {
        #[test]
        fn constant_within_cluster_means_zero((raw, ids) in model_and_clusters()) {
            let norm = |v: &Vec<f64>| { let s: f64 = v.iter().sum(); dd(&v.iter().map(|x| x / s).collect::<Vec<_>>()) };
            let assign = ClusterAssignment::from_ids(ids.clone()).unwrap();
            prop_assume!(assign.require_nonempty().is_ok());
            // every member of cluster c takes the conditional of c's first member
            let firsts: Vec<usize> = (0..assign.num_clusters()).map(|c| ids.iter().position(|&x| x == c).unwrap()).collect();
            let p: Vec<_> = ids.iter().map(|&c| norm(&raw[firsts[c]])).collect();
            let r = heterogeneity(&ConditionalLabelModel::uniform(p).unwrap(), &assign).unwrap();
            prop_assert!(r.phi.abs() < 1e-12);

            let free: Vec<_> = raw.iter().map(norm).collect();
            let r = heterogeneity(&ConditionalLabelModel::uniform(free).unwrap(), &assign).unwrap();
            prop_assert!((0.0..=2.0).contains(&r.phi));
        }

        #[test]
        fn precision_recall_in_unit_interval(out in prop::collection::vec((0usize..3, 0usize..6), 0..30)) {
            let truth: Vec<BTreeSet<usize>> = vec![[0, 1].into(), [4].into(), [1, 2, 5].into()];
            let r = lap_precision_recall(&truth, &out);
            prop_assert!((0.0..=1.0).contains(&r.recall));
            if let Some(p) = r.precision { prop_assert!((0.0..=1.0).contains(&p)); }
        }
    }
}
