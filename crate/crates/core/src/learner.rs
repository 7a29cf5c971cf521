//! Multinomial logistic regression trained by mini-batch SGD, on either the
//! plain cross-entropy or its per-cluster `Q^{-1}` reweighting.
//!
//! The reweighted loss of an example with observed label `y` is
//! `sum_{y'} Q^{-1}[y', y] l(y')`. Its weights can be negative, so the loss is
//! not clamped anywhere.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::central::RandomizationMatrix;
use crate::clustering::ClusterAssignment;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// `argmax_y (w_y . x + b_y)`, ties broken toward the smaller label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHypothesis {
    /// `K` rows of length `d`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_names: Option<Vec<String>>,
}

impl LinearHypothesis {
    pub fn zeros(num_labels: usize, dim: usize) -> Self {
        Self {
            weights: vec![vec![0.0; dim]; num_labels],
            bias: vec![0.0; num_labels],
            label_names: None,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    pub fn predict_all(&self, data: &LabeledDataset) -> Vec<usize> {
        data.features().map(|x| self.predict(x)).collect()
    }

    /// Weights row by row, then the bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.concat();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn from_params(num_labels: usize, dim: usize, params: &[f64]) -> Result<Self> {
        if params.len() != num_labels * (dim + 1) {
            return Err(Error::LengthMismatch {
                expected: num_labels * (dim + 1),
                got: params.len(),
            });
        }
        let (w, b) = params.split_at(num_labels * dim);
        Ok(Self {
            weights: w.chunks(dim.max(1)).take(num_labels).map(<[f64]>::to_vec).collect(),
            bias: b.to_vec(),
            label_names: None,
        })
    }

    fn check_data(&self, data: &LabeledDataset) -> Result<()> {
        if data.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                row: 0,
                expected: self.dim(),
                got: data.dim(),
            });
        }
        if data.num_labels() != self.num_labels() {
            return Err(Error::LengthMismatch {
                expected: self.num_labels(),
                got: data.num_labels(),
            });
        }
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let h: Self = serde_json::from_str(&text)?;
        if h.weights.len() != h.bias.len() || h.weights.iter().any(|w| w.len() != h.dim()) {
            return Err(Error::Config(format!("{}: ragged weight matrix", path.display())));
        }
        Ok(h)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    CrossEntropy,
    /// `min(CE, cap)`; the gradient vanishes where the cap binds.
    TruncatedCe { cap: f64 },
}

/// A base loss, optionally reweighted by one randomization matrix per cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub qinv: Option<Vec<RandomizationMatrix>>,
}

impl LossSpec {
    pub fn plain(kind: LossKind) -> Self {
        Self { kind, qinv: None }
    }

    pub fn modified(kind: LossKind, qinv: Vec<RandomizationMatrix>) -> Self {
        Self { kind, qinv: Some(qinv) }
    }

    fn weights_for<'a>(&'a self, clusters: Option<&ClusterAssignment>, i: usize, y: usize) -> Option<Vec<f64>> {
        let qinv: &'a [RandomizationMatrix] = self.qinv.as_deref()?;
        let c = clusters.expect("checked by check_clusters").cluster_of(i);
        Some(qinv[c].inverse_column(y))
    }

    fn check_clusters(&self, data: &LabeledDataset, clusters: Option<&ClusterAssignment>) -> Result<()> {
        let Some(qinv) = &self.qinv else { return Ok(()) };
        let a = clusters.ok_or_else(|| Error::param("clusters", "a reweighted loss needs the cluster of every example"))?;
        if a.len() != data.len() {
            return Err(Error::LengthMismatch {
                expected: data.len(),
                got: a.len(),
            });
        }
        if a.num_clusters() > qinv.len() {
            return Err(Error::param(
                "qinv",
                format!("{} matrices for {} clusters", qinv.len(), a.num_clusters()),
            ));
        }
        if let Some(m) = qinv.iter().find(|m| m.num_labels() != data.num_labels()) {
            return Err(Error::LengthMismatch {
                expected: data.num_labels(),
                got: m.num_labels(),
            });
        }
        Ok(())
    }
}

/// The base loss against every candidate label, from the scores.
pub fn loss_vector(kind: LossKind, scores: &[f64]) -> Vec<f64> {
    match kind {
        LossKind::ZeroOne => {
            let pred = argmax(scores);
            (0..scores.len()).map(|y| f64::from(u8::from(y != pred))).collect()
        }
        LossKind::CrossEntropy | LossKind::TruncatedCe { .. } => {
            let lse = log_sum_exp(scores);
            scores
                .iter()
                .map(|s| {
                    let ce = lse - s;
                    match kind {
                        LossKind::TruncatedCe { cap } => ce.min(cap),
                        _ => ce,
                    }
                })
                .collect()
        }
    }
}

fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Loss of one example and its gradient with respect to the class scores.
///
/// `weights` is the reweighting of candidate labels (a column of `Q^{-1}`);
/// `None` means the one-hot vector of `y`.
pub fn example_loss_grad(kind: LossKind, scores: &[f64], y: usize, weights: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    let k = scores.len();
    let lse = log_sum_exp(scores);
    let softmax: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
    let one_hot;
    let w = match weights {
        Some(w) => w,
        None => {
            let mut v = vec![0.0; k];
            v[y] = 1.0;
            one_hot = v;
            &one_hot
        }
    };
    match kind {
        LossKind::ZeroOne => Err(Error::Unsupported("the zero-one loss has no useful gradient".into())),
        LossKind::CrossEntropy => {
            // d/ds (lse - s_y') = softmax - e_y'
            let loss = (0..k).map(|yp| w[yp] * (lse - scores[yp])).sum();
            let wsum: f64 = w.iter().sum();
            let grad = (0..k).map(|j| wsum * softmax[j] - w[j]).collect();
            Ok((loss, grad))
        }
        LossKind::TruncatedCe { cap } => {
            let mut loss = 0.0;
            let mut grad = vec![0.0; k];
            for yp in 0..k {
                let ce = lse - scores[yp];
                if ce < cap {
                    loss += w[yp] * ce;
                    for j in 0..k {
                        grad[j] += w[yp] * (softmax[j] - f64::from(u8::from(j == yp)));
                    }
                } else {
                    loss += w[yp] * cap;
                }
            }
            Ok((loss, grad))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 50,
            batch: 128,
            l2: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param("lr", format!("{} must be positive", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::param("batch", "must be at least 1"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::param("l2", format!("{} must be nonnegative", self.l2)));
        }
        Ok(())
    }
}

/// Mean loss over `indices` plus `l2/2 |W|^2`, and its gradient in
/// [`LinearHypothesis::params`] order.
fn batch_objective(
    h: &LinearHypothesis,
    data: &LabeledDataset,
    clusters: Option<&ClusterAssignment>,
    spec: &LossSpec,
    l2: f64,
    indices: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let (k, d) = (h.num_labels(), h.dim());
    let mut grad = vec![0.0; k * (d + 1)];
    let mut loss = 0.0;
    for &i in indices {
        let x = data.feature(i);
        let y = data.label(i);
        let w = spec.weights_for(clusters, i, y);
        let (l, g) = example_loss_grad(spec.kind, &h.scores(x), y, w.as_deref())?;
        loss += l;
        for (c, gc) in g.iter().enumerate() {
            if *gc != 0.0 {
                let row = &mut grad[c * d..(c + 1) * d];
                for (r, xv) in row.iter_mut().zip(x) {
                    *r += gc * xv;
                }
                grad[k * d + c] += gc;
            }
        }
    }
    let m = indices.len().max(1) as f64;
    loss /= m;
    grad.iter_mut().for_each(|g| *g /= m);
    let mut reg = 0.0;
    for (c, w) in h.weights.iter().enumerate() {
        for (j, v) in w.iter().enumerate() {
            reg += v * v;
            grad[c * d + j] += l2 * v;
        }
    }
    Ok((loss + 0.5 * l2 * reg, grad))
}

/// Full-data objective and gradient; exposed for gradient checks.
pub fn objective_and_gradient(
    h: &LinearHypothesis,
    data: &LabeledDataset,
    clusters: Option<&ClusterAssignment>,
    spec: &LossSpec,
    l2: f64,
) -> Result<(f64, Vec<f64>)> {
    h.check_data(data)?;
    spec.check_clusters(data, clusters)?;
    let all: Vec<usize> = (0..data.len()).collect();
    batch_objective(h, data, clusters, spec, l2, &all)
}

/// Mini-batch SGD from zero weights; each epoch visits the examples in a
/// fresh seeded order. Returns the final iterate.
pub fn train(
    data: &LabeledDataset,
    clusters: Option<&ClusterAssignment>,
    spec: &LossSpec,
    config: &TrainConfig,
) -> Result<LinearHypothesis> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if spec.kind == LossKind::ZeroOne {
        return Err(Error::Unsupported("the zero-one loss is for evaluation only".into()));
    }
    spec.check_clusters(data, clusters)?;
    let (k, d) = (data.num_labels(), data.dim());
    let mut h = LinearHypothesis::zeros(k, d);
    let stream = RngStream::from_seed(config.seed).derive_tag("learner/shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut stream.derive(epoch as u64).rng());
        for batch in order.chunks(config.batch) {
            let (loss, grad) = batch_objective(&h, data, clusters, spec, config.l2, batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    lr: config.lr,
                    l2: config.l2,
                    batch: config.batch,
                });
            }
            for (c, w) in h.weights.iter_mut().enumerate() {
                for (j, v) in w.iter_mut().enumerate() {
                    *v -= config.lr * grad[c * d + j];
                }
            }
            for (c, b) in h.bias.iter_mut().enumerate() {
                *b -= config.lr * grad[k * d + c];
            }
        }
    }
    h.label_names = data.label_names().map(<[String]>::to_vec);
    Ok(h)
}

/// Clean cross-entropy training with three times the epochs, standing in for
/// the best hypothesis in the class.
pub fn train_baseline(data: &LabeledDataset, config: &TrainConfig) -> Result<LinearHypothesis> {
    let cfg = TrainConfig {
        epochs: config.epochs * 3,
        ..*config
    };
    train(data, None, &LossSpec::plain(LossKind::CrossEntropy), &cfg)
}

/// Mean loss over the dataset; with a reweighting, the modified loss of each
/// observed label.
pub fn evaluate(
    h: &LinearHypothesis,
    data: &LabeledDataset,
    clusters: Option<&ClusterAssignment>,
    spec: &LossSpec,
) -> Result<f64> {
    h.check_data(data)?;
    spec.check_clusters(data, clusters)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = (0..data.len())
        .map(|i| {
            let losses = loss_vector(spec.kind, &h.scores(data.feature(i)));
            let y = data.label(i);
            match spec.weights_for(clusters, i, y) {
                Some(w) => w.iter().zip(&losses).map(|(a, b)| a * b).sum(),
                None => losses[y],
            }
        })
        .sum();
    Ok(total / data.len() as f64)
}

pub fn accuracy(h: &LinearHypothesis, data: &LabeledDataset) -> Result<f64> {
    evaluate(h, data, None, &LossSpec::plain(LossKind::ZeroOne)).map(|r| 1.0 - r)
}

/// Zero-one risk of `h` minus that of `baseline` on clean test data.
pub fn excess_risk(h: &LinearHypothesis, clean_test: &LabeledDataset, baseline: &LinearHypothesis) -> Result<f64> {
    let zo = LossSpec::plain(LossKind::ZeroOne);
    Ok(evaluate(h, clean_test, None, &zo)? - evaluate(baseline, clean_test, None, &zo)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::central::{run_central, CentralParams, NoiseScale};
    use crate::clustering::ClusteredDataset;
    use crate::dist::DiscreteDistribution;

    fn blobs(n: usize, seed: u64) -> LabeledDataset {
        let mut r = RngStream::from_seed(seed).rng();
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let c = if y == 0 { -3.0 } else { 3.0 };
            feats.push(vec![c + r.sample::<f64, _>(StandardNormal), r.sample::<f64, _>(StandardNormal)]);
            labels.push(y);
        }
        LabeledDataset::new(feats, labels, 2).unwrap()
    }

    #[test]
    fn separable_blobs_are_learned() {
        let train_set = blobs(400, 1);
        let test_set = blobs(400, 2);
        let h = train(&train_set, None, &LossSpec::plain(LossKind::CrossEntropy), &TrainConfig::default()).unwrap();
        let risk = evaluate(&h, &test_set, None, &LossSpec::plain(LossKind::ZeroOne)).unwrap();
        assert!(risk <= 0.02, "{risk}");
        assert!(evaluate(&h, &train_set, None, &LossSpec::plain(LossKind::ZeroOne)).unwrap() <= 0.02);
    }

    #[test]
    fn zero_resampling_trains_identically() {
        let data = blobs(200, 3);
        let clustered = ClusteredDataset::new(data.clone(), ClusterAssignment::from_ids((0..200).map(|i| i % 4).collect()).unwrap()).unwrap();
        let p = CentralParams::new(0.1, NoiseScale::Finite(1.0), 0.0, 0.0).unwrap();
        let out = run_central(&clustered, &p, &RngStream::from_seed(9)).unwrap();
        let spec = LossSpec::plain(LossKind::CrossEntropy);
        let cfg = TrainConfig::default();
        assert_eq!(train(&out.noisy_data, None, &spec, &cfg).unwrap(), train(&data, None, &spec, &cfg).unwrap());
    }

    #[test]
    fn training_is_deterministic_and_seeded() {
        let data = blobs(300, 4);
        let spec = LossSpec::plain(LossKind::CrossEntropy);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let a = train(&data, None, &spec, &cfg).unwrap();
        assert_eq!(a, train(&data, None, &spec, &cfg).unwrap());
        let b = train(&data, None, &spec, &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn divergence_names_the_hyperparameters() {
        let feats = (0..50).map(|i| vec![1e200 * (i as f64 - 25.0)]).collect();
        let data = LabeledDataset::new(feats, (0..50).map(|i| i % 2).collect(), 2).unwrap();
        let cfg = TrainConfig {
            lr: 1e10,
            ..TrainConfig::default()
        };
        let err = train(&data, None, &LossSpec::plain(LossKind::CrossEntropy), &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { lr, .. } if lr == 1e10), "{err}");
    }

    #[test]
    fn zero_one_is_evaluation_only() {
        let data = blobs(10, 5);
        assert!(train(&data, None, &LossSpec::plain(LossKind::ZeroOne), &TrainConfig::default()).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let data = blobs(1000, 6);
        let constant = LinearHypothesis::zeros(2, 2);
        let zo = LossSpec::plain(LossKind::ZeroOne);
        assert!((evaluate(&constant, &data, None, &zo).unwrap() - 0.5).abs() < 0.05);

        let perfect = LinearHypothesis {
            weights: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            bias: vec![0.0, 0.0],
            label_names: None,
        };
        let pure = LabeledDataset::new(vec![vec![-1.0, 0.0], vec![2.0, 5.0]], vec![0, 1], 2).unwrap();
        assert_eq!(evaluate(&perfect, &pure, None, &zo).unwrap(), 0.0);

        // identity reweighting leaves the loss unchanged
        let assign = ClusterAssignment::from_ids(vec![0; 1000]).unwrap();
        let eye = RandomizationMatrix::new(&DiscreteDistribution::uniform(2), 0.0).unwrap();
        let ce = LossKind::CrossEntropy;
        let h = train(&data, None, &LossSpec::plain(ce), &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
        let a = evaluate(&h, &data, None, &LossSpec::plain(ce)).unwrap();
        let b = evaluate(&h, &data, Some(&assign), &LossSpec::modified(ce, vec![eye])).unwrap();
        assert_eq!(a, b);

        let wrong = LabeledDataset::new(vec![vec![0.0; 3]], vec![0], 2).unwrap();
        assert!(matches!(evaluate(&h, &wrong, None, &zo), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn excess_risk_examples() {
        let train_set = blobs(400, 7);
        let test_set = blobs(2000, 8);
        let base = train_baseline(&train_set, &TrainConfig::default()).unwrap();
        assert_eq!(excess_risk(&base, &test_set, &base).unwrap(), 0.0);
        let constant = LinearHypothesis::zeros(2, 2);
        let e = excess_risk(&constant, &test_set, &base).unwrap();
        assert!((e - 0.5).abs() < 0.04, "{e}");
    }

    #[test]
    fn modified_risk_is_unbiased_by_enumeration() {
        // two clusters; every noisy label outcome is enumerated with its probability
        let data = LabeledDataset::new(vec![vec![0.3, -1.0], vec![1.0, 2.0], vec![-0.5, 0.1], vec![2.0, 0.0]], vec![0, 2, 1, 2], 3).unwrap();
        let assign = ClusterAssignment::from_ids(vec![0, 0, 1, 1]).unwrap();
        let q = [DiscreteDistribution::new(vec![0.2, 0.5, 0.3]).unwrap(), DiscreteDistribution::new(vec![0.6, 0.1, 0.3]).unwrap()];
        let lambda = 0.7;
        let mats: Vec<_> = q.iter().map(|d| RandomizationMatrix::new(d, lambda).unwrap()).collect();
        let h = LinearHypothesis {
            weights: vec![vec![0.5, -0.2], vec![-1.0, 0.4], vec![0.1, 0.1]],
            bias: vec![0.0, 0.3, -0.2],
            label_names: None,
        };
        for kind in [LossKind::CrossEntropy, LossKind::TruncatedCe { cap: 1.0 }, LossKind::ZeroOne] {
            let clean = evaluate(&h, &data, None, &LossSpec::plain(kind)).unwrap();
            let spec = LossSpec::modified(kind, mats.clone());
            let mut expected = 0.0;
            for i in 0..4 {
                let c = assign.cluster_of(i);
                for y in 0..3 {
                    let pr = (1.0 - lambda) * f64::from(u8::from(y == data.label(i))) + lambda * q[c].prob(y);
                    let one = data.select_relabeled(&[i], vec![y]).unwrap();
                    let a1 = ClusterAssignment::new(vec![c], 2).unwrap();
                    expected += pr * evaluate(&h, &one, Some(&a1), &spec).unwrap() / 4.0;
                }
            }
            assert!((expected - clean).abs() < 1e-9, "{kind:?}: {expected} vs {clean}");
        }
    }

    fn finite_difference_check(kind: LossKind, seed: u64) -> f64 {
        let mut r = RngStream::from_seed(seed).rng();
        let k = r.random_range(2..=4);
        let d = r.random_range(1..=5);
        let n = 6;
        let feats = (0..n).map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
        let data = LabeledDataset::new(feats, (0..n).map(|_| r.random_range(0..k)).collect(), k).unwrap();
        let assign = ClusterAssignment::new((0..n).map(|i| i % 2).collect(), 2).unwrap();
        let mats = (0..2)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                RandomizationMatrix::new(&DiscreteDistribution::new(raw.iter().map(|x| x / s).collect()).unwrap(), 0.6).unwrap()
            })
            .collect();
        let spec = LossSpec::modified(kind, mats);
        let params: Vec<f64> = (0..k * (d + 1)).map(|_| r.random_range(-1.0..1.0)).collect();
        let h = LinearHypothesis::from_params(k, d, &params).unwrap();
        let (_, g) = objective_and_gradient(&h, &data, Some(&assign), &spec, 0.01).unwrap();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for j in 0..params.len() {
            let f = |delta: f64| {
                let mut p = params.clone();
                p[j] += delta;
                let h = LinearHypothesis::from_params(k, d, &p).unwrap();
                objective_and_gradient(&h, &data, Some(&assign), &spec, 0.01).unwrap().0
            };
            let fd = (f(eps) - f(-eps)) / (2.0 * eps);
            worst = worst.max((fd - g[j]).abs() / g[j].abs().max(fd.abs()).max(1e-3));
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let e = finite_difference_check(LossKind::CrossEntropy, seed);
            assert!(e < 1e-5, "seed {seed}: {e}");
        }
    }

    #[test]
    fn truncated_loss_is_bounded_after_reweighting() {
        let data = blobs(200, 10);
        let assign = ClusterAssignment::from_ids((0..200).map(|i| i % 3).collect()).unwrap();
        let beta = 0.9;
        let mats: Vec<_> = (0..3)
            .map(|c| RandomizationMatrix::new(&DiscreteDistribution::new(vec![0.05 + 0.3 * c as f64, 0.95 - 0.3 * c as f64]).unwrap(), beta).unwrap())
            .collect();
        let bound = std::f64::consts::SQRT_2 * 2.0 / (1.0 - beta);
        let h = LinearHypothesis {
            weights: vec![vec![3.0, 0.0], vec![-3.0, 1.0]],
            bias: vec![0.0, 0.0],
            label_names: None,
        };
        for kind in [LossKind::TruncatedCe { cap: 1.0 }, LossKind::ZeroOne] {
            for i in 0..200 {
                let losses = loss_vector(kind, &h.scores(data.feature(i)));
                for y in 0..2 {
                    let w = mats[assign.cluster_of(i)].inverse_column(y);
                    let l: f64 = w.iter().zip(&losses).map(|(a, b)| a * b).sum();
                    assert!(l.abs() <= bound + 1e-9);
                }
            }
        }
    }

    #[test]
    fn model_json_round_trip() {
        let h = LinearHypothesis {
            weights: vec![vec![0.1, 1.0 / 3.0], vec![-2.5, 1e-300]],
            bias: vec![0.7, -0.1],
            label_names: Some(vec!["cat".into(), "dog".into()]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        h.save_json(&path).unwrap();
        assert_eq!(LinearHypothesis::load_json(&path).unwrap(), h);
    }

    proptest! {
        #[test]
        fn argmax_ignores_constant_shifts(scores in prop::collection::vec(-5.0f64..5.0, 1..8), shift in -100.0f64..100.0) {
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            // shifting can merge near-ties through rounding; compare on well-separated maxima
            let best = argmax(&scores);
            let gap = scores.iter().enumerate().filter(|(i, _)| *i != best).map(|(_, s)| scores[best] - s).fold(f64::INFINITY, f64::min);
            prop_assume!(gap > 1e-9);
            prop_assert_eq!(argmax(&shifted), best);
        }

        #[test]
        fn ties_break_low(k in 2usize..6, v in -3.0f64..3.0) {
            prop_assert_eq!(argmax(&vec![v; k]), 0);
        }
    }
}
