//! The centralized cluster randomized-response mechanism.
//!
//! A trusted curator privatizes the cluster label distributions with Laplace
//! noise, clips them into `[tau, 1]`, renormalizes, and then resamples each
//! label from its cluster's distribution with probability `lambda`. The output
//! is the noisy dataset plus one label randomization matrix per cluster,
//! whose inverse reweights the training loss to undo the resampling.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusteredDataset;
use crate::data::LabeledDataset;
use crate::dist::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::linalg;
use crate::receipt::{MechanismKind, PrivacyReceipt};
use crate::rng::RngStream;
use crate::sampling::{laplace_unchecked, sample_categorical};

/// Laplace noise scale; `Infinite` skips sampling and makes every cluster
/// distribution uniform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseScale {
    Finite(f64),
    Infinite,
}

impl NoiseScale {
    pub fn from_f64(sigma: f64) -> Self {
        if sigma == f64::INFINITY {
            NoiseScale::Infinite
        } else {
            NoiseScale::Finite(sigma)
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            NoiseScale::Finite(s) => s,
            NoiseScale::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for NoiseScale {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        crate::receipt::real::serialize(&self.as_f64(), s)
    }
}

impl<'de> Deserialize<'de> for NoiseScale {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        crate::receipt::real::deserialize(d).map(NoiseScale::from_f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralParams {
    /// Clipping threshold, in `[0, 1/K]`.
    pub tau: f64,
    pub sigma: NoiseScale,
    /// Label resampling probability, in `[0, 1)`.
    pub lambda: f64,
    /// Bias correction strength, in `[0, 1)`.
    pub beta: f64,
}

impl CentralParams {
    pub fn new(tau: f64, sigma: NoiseScale, lambda: f64, beta: f64) -> Result<Self> {
        let p = Self {
            tau,
            sigma,
            lambda,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks every range that does not depend on the label count.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return Err(Error::param("tau", format!("{} is outside [0, 1/K]", self.tau)));
        }
        if let NoiseScale::Finite(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::param("sigma", format!("{s} is not a nonnegative real")));
            }
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::param("lambda", format!("{} is outside [0, 1)", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::param("beta", format!("{} is outside [0, 1)", self.beta)));
        }
        Ok(())
    }

    pub fn validate_for_labels(&self, num_labels: usize) -> Result<()> {
        self.validate()?;
        check_tau(self.tau, num_labels)
    }
}

fn check_tau(tau: f64, k: usize) -> Result<()> {
    // 1/K is allowed exactly, up to the rounding of the division
    if !(tau >= 0.0) || tau * k as f64 > 1.0 + 1e-12 {
        return Err(Error::param("tau", format!("{tau} exceeds 1/K = {}", 1.0 / k as f64)));
    }
    Ok(())
}

/// Pulls clipped probabilities back onto the simplex without leaving `[tau, 1]`.
///
/// With `delta = 1 - sum(q)`, a surplus (`delta < 0`) is taken from each entry
/// in proportion to its room above `tau`; a deficit is added in proportion to
/// the room below 1.
pub fn renormalize(q_clipped: &[f64], tau: f64) -> Result<DiscreteDistribution> {
    if q_clipped.is_empty() {
        return Err(Error::InvalidDistribution("no outcomes".into()));
    }
    check_tau(tau, q_clipped.len())?;
    if let Some((y, q)) = q_clipped
        .iter()
        .enumerate()
        .find(|(_, q)| !(**q >= tau && **q <= 1.0))
    {
        return Err(Error::param("q_clipped", format!("entry {y} = {q} is outside [{tau}, 1]")));
    }
    let delta = 1.0 - q_clipped.iter().sum::<f64>();
    let room: Vec<f64> = if delta < 0.0 {
        q_clipped.iter().map(|q| q - tau).collect()
    } else {
        q_clipped.iter().map(|q| 1.0 - q).collect()
    };
    let total_room: f64 = room.iter().sum();
    let out: Vec<f64> = if total_room > 0.0 {
        q_clipped
            .iter()
            .zip(&room)
            .map(|(q, r)| (q + r / total_room * delta).clamp(tau, 1.0))
            .collect()
    } else {
        // every entry sits on the bound it would move away from, so delta = 0
        q_clipped.to_vec()
    };
    DiscreteDistribution::new(out)
}

/// Per-cluster label distributions before and after privatization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabelDistributions {
    /// Empirical label distribution of each cluster.
    pub q_hat: Vec<DiscreteDistribution>,
    /// Noisy, clipped and renormalized distributions.
    pub q_tilde: Vec<DiscreteDistribution>,
}

impl ClusterLabelDistributions {
    pub fn num_clusters(&self) -> usize {
        self.q_tilde.len()
    }
}

/// Stages 1-3: noise, clip and renormalize every cluster's label distribution.
pub fn noisy_distributions(
    data: &ClusteredDataset,
    tau: f64,
    sigma: NoiseScale,
    rng: &RngStream,
) -> Result<ClusterLabelDistributions> {
    let k = data.num_labels();
    check_tau(tau, k)?;
    if let NoiseScale::Finite(s) = sigma {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::param("sigma", format!("{s} is not a nonnegative real")));
        }
    }
    let q_hat = data.empirical_distributions()?;
    let sizes = data.assignment().sizes();
    let q_tilde = q_hat
        .par_iter()
        .enumerate()
        .map(|(c, p_hat)| match sigma {
            NoiseScale::Infinite => Ok(DiscreteDistribution::uniform(k)),
            NoiseScale::Finite(s) => {
                let mut r = rng.derive(c as u64).rng();
                let scale = s / sizes[c] as f64;
                let clipped: Vec<f64> = p_hat
                    .probs()
                    .iter()
                    .map(|&p| {
                        let z = if scale > 0.0 { laplace_unchecked(&mut r, scale) } else { 0.0 };
                        (p + z).clamp(tau, 1.0)
                    })
                    .collect();
                renormalize(&clipped, tau)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterLabelDistributions { q_hat, q_tilde })
}

/// Stage 4: each label is kept with probability `1 - lambda` and otherwise
/// replaced by a draw from its cluster's `q_tilde`.
pub fn randomize_labels(
    data: &ClusteredDataset,
    dists: &ClusterLabelDistributions,
    lambda: f64,
    rng: &RngStream,
) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::param("lambda", format!("{lambda} is outside [0, 1)")));
    }
    if dists.num_clusters() != data.num_clusters() {
        return Err(Error::LengthMismatch {
            expected: data.num_clusters(),
            got: dists.num_clusters(),
        });
    }
    if let Some(d) = dists.q_tilde.iter().find(|d| d.num_outcomes() != data.num_labels()) {
        return Err(Error::LengthMismatch {
            expected: data.num_labels(),
            got: d.num_outcomes(),
        });
    }
    let labels = data.data().labels();
    Ok((0..labels.len())
        .into_par_iter()
        .map(|i| {
            let mut r = rng.derive(i as u64).rng();
            if r.random::<f64>() < lambda {
                sample_categorical(&mut r, &dists.q_tilde[data.cluster_of(i)])
            } else {
                labels[i]
            }
        })
        .collect())
}

/// `Q[y', y] = (1 - beta) 1{y' = y} + beta q(y')` for one cluster, with its inverse.
///
/// Column `y` of `Q` is the distribution of the noisy label given true label
/// `y` when `beta = lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MatrixRepr", try_from = "MatrixRepr")]
pub struct RandomizationMatrix {
    k: usize,
    beta: f64,
    q_tilde: DiscreteDistribution,
    q: Vec<f64>,
    q_inv: Vec<f64>,
}

impl RandomizationMatrix {
    pub fn new(q_tilde: &DiscreteDistribution, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::param("beta", format!("{beta} is outside [0, 1)")));
        }
        let k = q_tilde.num_outcomes();
        let mut q = vec![0.0; k * k];
        for yp in 0..k {
            for y in 0..k {
                let diag = if yp == y { 1.0 - beta } else { 0.0 };
                q[yp * k + y] = diag + beta * q_tilde.prob(yp);
            }
        }
        let q_inv = linalg::invert(&q, k)?;
        Ok(Self {
            k,
            beta,
            q_tilde: q_tilde.clone(),
            q,
            q_inv,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn q_tilde(&self) -> &DiscreteDistribution {
        &self.q_tilde
    }

    pub fn q(&self, row: usize, col: usize) -> f64 {
        self.q[row * self.k + col]
    }

    pub fn q_inv(&self, row: usize, col: usize) -> f64 {
        self.q_inv[row * self.k + col]
    }

    /// Row-major `K x K`.
    pub fn q_matrix(&self) -> &[f64] {
        &self.q
    }

    pub fn q_inv_matrix(&self) -> &[f64] {
        &self.q_inv
    }

    /// Column `y` of the inverse: the weights that turn a loss vector over
    /// true labels into the modified loss for observed label `y`.
    pub fn inverse_column(&self, y: usize) -> Vec<f64> {
        (0..self.k).map(|yp| self.q_inv(yp, y)).collect()
    }

    /// `l~(y) = sum_{y'} Q^{-1}[y', y] l(y')` for every observed label `y`.
    pub fn modified_losses(&self, losses: &[f64]) -> Vec<f64> {
        assert_eq!(losses.len(), self.k);
        (0..self.k)
            .map(|y| (0..self.k).map(|yp| self.q_inv(yp, y) * losses[yp]).sum())
            .collect()
    }

    pub fn min_singular_value(&self) -> f64 {
        linalg::min_singular_value(&self.q, self.k)
    }

    pub fn max_inverse_column_abs_sum(&self) -> f64 {
        linalg::max_column_abs_sum(&self.q_inv, self.k)
    }

    /// Largest entry of `|Q Q^{-1} - I|`.
    pub fn inverse_residual(&self) -> f64 {
        linalg::identity_residual(&self.q, &self.q_inv, self.k)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    beta: f64,
    q_tilde: Vec<f64>,
    q: Vec<Vec<f64>>,
    q_inv: Vec<Vec<f64>>,
}

impl From<RandomizationMatrix> for MatrixRepr {
    fn from(m: RandomizationMatrix) -> Self {
        let rows = |v: &[f64]| v.chunks(m.k).map(<[f64]>::to_vec).collect();
        MatrixRepr {
            beta: m.beta,
            q_tilde: m.q_tilde.probs().to_vec(),
            q: rows(&m.q),
            q_inv: rows(&m.q_inv),
        }
    }
}

impl TryFrom<MatrixRepr> for RandomizationMatrix {
    type Error = Error;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        let q_tilde = DiscreteDistribution::new(r.q_tilde)?;
        let k = q_tilde.num_outcomes();
        let flat = |rows: Vec<Vec<f64>>| -> Result<Vec<f64>> {
            if rows.len() != k || rows.iter().any(|row| row.len() != k) {
                return Err(Error::LengthMismatch {
                    expected: k,
                    got: rows.len(),
                });
            }
            Ok(rows.concat())
        };
        Ok(Self {
            k,
            beta: r.beta,
            q_tilde,
            q: flat(r.q)?,
            q_inv: flat(r.q_inv)?,
        })
    }
}

/// Stage 5: one randomization matrix per cluster.
pub fn build_qinv(dists: &ClusterLabelDistributions, beta: f64) -> Result<Vec<RandomizationMatrix>> {
    dists
        .q_tilde
        .iter()
        .map(|q| RandomizationMatrix::new(q, beta))
        .collect()
}

/// `((1 - lambda) + lambda q) / (lambda q)`: how much more likely the
/// resampling stage is to output label `y` when it is the true label.
pub fn rr_likelihood_ratio(lambda: f64, q_y: f64) -> f64 {
    ((1.0 - lambda) + lambda * q_y) / (lambda * q_y)
}

/// `epsilon = 1/sigma + ln(1 + (1 - lambda) / (lambda tau))`, with `delta = 0`.
///
/// `sigma = 0` (no noise) and `lambda = 0` or `tau = 0` (labels exposed) give
/// an infinite epsilon; an infinite `sigma` contributes nothing.
pub fn central_epsilon(params: &CentralParams) -> PrivacyReceipt {
    let noise_term = match params.sigma {
        NoiseScale::Infinite => 0.0,
        NoiseScale::Finite(s) if s > 0.0 => 1.0 / s,
        NoiseScale::Finite(_) => f64::INFINITY,
    };
    let rr_term = if params.lambda > 0.0 && params.tau > 0.0 {
        ((1.0 - params.lambda) / (params.lambda * params.tau)).ln_1p()
    } else {
        f64::INFINITY
    };
    PrivacyReceipt::new(
        MechanismKind::Central,
        noise_term + rr_term,
        0.0,
        serde_json::to_value(params).expect("params serialize"),
    )
}

/// Uniform randomized response: `tau = 1/K`, `beta = lambda = K / (K - 1 + e^eps)`,
/// infinite `sigma`. Its exact epsilon equals `epsilon`.
pub fn preset_uniform_rr(epsilon: f64, num_labels: usize) -> Result<CentralParams> {
    if !(epsilon > 0.0) {
        return Err(Error::param("epsilon", format!("{epsilon} must be positive")));
    }
    if num_labels < 2 {
        return Err(Error::param("num_labels", "at least two labels are needed"));
    }
    let k = num_labels as f64;
    let lambda = k / (k - 1.0 + epsilon.exp());
    CentralParams::new(1.0 / k, NoiseScale::Infinite, lambda, lambda)
}

/// Largest resampling probability a preset will emit.
pub const MAX_LAMBDA: f64 = 1.0 - 1e-9;

/// Cluster randomized response: `tau = phi`, `beta = 0`,
/// `lambda = 1 / (1 + (e^eps - 1) phi)`, `sigma = 1/eps`.
///
/// The exact epsilon of these parameters is `eps + ln(1 + (1-lambda)/(lambda phi))`,
/// which is `2 eps` unless `lambda` had to be clamped to [`MAX_LAMBDA`].
pub fn preset_cluster_rr(epsilon: f64, phi: f64, num_labels: usize) -> Result<CentralParams> {
    if !(epsilon > 0.0) {
        return Err(Error::param("epsilon", format!("{epsilon} must be positive")));
    }
    if !(phi > 0.0) {
        return Err(Error::param(
            "phi",
            format!("{phi} must be positive; supply an estimate of cluster heterogeneity or use the uniform preset"),
        ));
    }
    check_tau(phi, num_labels).map_err(|_| {
        Error::param(
            "phi",
            format!("{phi} exceeds 1/K = {}, which the clipping threshold cannot", 1.0 / num_labels as f64),
        )
    })?;
    let lambda = (1.0 / (1.0 + epsilon.exp_m1() * phi)).min(MAX_LAMBDA);
    CentralParams::new(phi, NoiseScale::Finite(1.0 / epsilon), lambda, 0.0)
}

/// Everything the curator releases.
#[derive(Clone, Debug)]
pub struct MechanismOutput {
    /// Same features, privatized labels.
    pub noisy_data: LabeledDataset,
    pub distributions: ClusterLabelDistributions,
    pub per_cluster_qinv: Vec<RandomizationMatrix>,
    pub receipt: PrivacyReceipt,
}

/// Runs every stage with independent per-cluster and per-example streams.
pub fn run_central(data: &ClusteredDataset, params: &CentralParams, rng: &RngStream) -> Result<MechanismOutput> {
    params.validate_for_labels(data.num_labels())?;
    let distributions = noisy_distributions(data, params.tau, params.sigma, &rng.derive_tag("central/noise"))?;
    let labels = randomize_labels(data, &distributions, params.lambda, &rng.derive_tag("central/resample"))?;
    let per_cluster_qinv = build_qinv(&distributions, params.beta)?;
    Ok(MechanismOutput {
        noisy_data: data.data().with_labels(labels)?,
        distributions,
        per_cluster_qinv,
        receipt: central_epsilon(params),
    })
}

/// Contents of the `qinv.json` file written next to a privatized dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QinvFile {
    pub num_labels: usize,
    pub params: CentralParams,
    pub receipt: PrivacyReceipt,
    /// One matrix per cluster, indexed by cluster id.
    pub clusters: Vec<RandomizationMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_names: Option<Vec<String>>,
}

impl QinvFile {
    pub fn from_output(output: &MechanismOutput, params: &CentralParams) -> Self {
        Self {
            num_labels: output.noisy_data.num_labels(),
            params: *params,
            receipt: output.receipt.clone(),
            clusters: output.per_cluster_qinv.clone(),
            label_names: output.noisy_data.label_names().map(<[String]>::to_vec),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::clustering::ClusterAssignment;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn toy(labels: Vec<usize>, clusters: Vec<usize>, k: usize) -> ClusteredDataset {
        let feats = (0..labels.len()).map(|i| vec![i as f64]).collect();
        let d = LabeledDataset::new(feats, labels, k).unwrap();
        ClusteredDataset::new(d, ClusterAssignment::from_ids(clusters).unwrap()).unwrap()
    }

    #[test]
    fn renormalize_hand_traces() {
        assert!(close(renormalize(&[0.7, 0.5], 0.1).unwrap().probs(), &[0.58, 0.42], 1e-12));
        assert!(close(renormalize(&[0.6, 0.4], 0.1).unwrap().probs(), &[0.6, 0.4], 1e-15));
        assert!(close(renormalize(&[0.2, 0.3], 0.1).unwrap().probs(), &[7.0 / 15.0, 8.0 / 15.0], 1e-12));
        // tau = 1/2 leaves only the uniform distribution
        assert!(close(renormalize(&[0.9, 0.5], 0.5).unwrap().probs(), &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn renormalize_rejects_out_of_range() {
        assert!(renormalize(&[0.05, 0.5], 0.1).is_err());
        assert!(renormalize(&[1.2, 0.5], 0.1).is_err());
        assert!(renormalize(&[0.6, 0.6], 0.6).is_err());
    }

    #[test]
    fn uniform_when_noise_is_infinite() {
        let data = toy(vec![0, 0, 1, 2, 2, 2], vec![0, 0, 0, 1, 1, 1], 3);
        let d = noisy_distributions(&data, 1.0 / 3.0, NoiseScale::Infinite, &RngStream::from_seed(1)).unwrap();
        for q in &d.q_tilde {
            assert!(close(q.probs(), &[1.0 / 3.0; 3], 1e-15));
        }
    }

    #[test]
    fn zero_noise_keeps_empirical() {
        let data = toy(vec![0, 0, 0, 0, 1], vec![0; 5], 2);
        let d = noisy_distributions(&data, 0.1, NoiseScale::Finite(0.0), &RngStream::from_seed(1)).unwrap();
        assert!(close(d.q_tilde[0].probs(), &[0.8, 0.2], 1e-15));
    }

    #[test]
    fn distribution_errors() {
        let data = toy(vec![0, 1], vec![0, 2], 2);
        let err = noisy_distributions(&data, 0.1, NoiseScale::Finite(1.0), &RngStream::from_seed(0)).unwrap_err();
        assert!(matches!(err, Error::EmptyCluster(1)));
        let data = toy(vec![0, 1], vec![0, 0], 2);
        assert!(noisy_distributions(&data, 0.6, NoiseScale::Finite(1.0), &RngStream::from_seed(0)).is_err());
    }

    #[test]
    fn lambda_zero_keeps_labels() {
        let labels = vec![0, 1, 2, 1, 0, 2, 2];
        let data = toy(labels.clone(), vec![0, 0, 0, 1, 1, 1, 1], 3);
        let d = noisy_distributions(&data, 0.2, NoiseScale::Finite(1.0), &RngStream::from_seed(3)).unwrap();
        assert_eq!(randomize_labels(&data, &d, 0.0, &RngStream::from_seed(4)).unwrap(), labels);
        assert!(randomize_labels(&data, &d, 1.0, &RngStream::from_seed(4)).is_err());
    }

    #[test]
    fn resampling_frequencies() {
        // lambda ~ 1: the noisy labels follow q_tilde
        let n = 1_000_000;
        let data = toy(vec![0; n], vec![0; n], 3);
        let q = DiscreteDistribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        let dists = ClusterLabelDistributions {
            q_hat: vec![DiscreteDistribution::point_mass(3, 0)],
            q_tilde: vec![q.clone()],
        };
        let out = randomize_labels(&data, &dists, 1.0 - 1e-12, &RngStream::from_seed(7)).unwrap();
        let emp = DiscreteDistribution::empirical(out, 3).unwrap();
        assert!(crate::dist::total_variation(emp.probs(), q.probs()) < 0.005);
    }

    #[test]
    fn half_resampling_keeps_three_quarters() {
        let n = 100_000;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let data = toy(labels.clone(), vec![0; n], 2);
        let dists = ClusterLabelDistributions {
            q_hat: vec![DiscreteDistribution::uniform(2)],
            q_tilde: vec![DiscreteDistribution::uniform(2)],
        };
        let out = randomize_labels(&data, &dists, 0.5, &RngStream::from_seed(8)).unwrap();
        let same = out.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / n as f64;
        assert!((same - 0.75).abs() < 0.005, "{same}");
    }

    #[test]
    fn randomization_matrix_closed_forms() {
        let eye = RandomizationMatrix::new(&DiscreteDistribution::new(vec![0.3, 0.7]).unwrap(), 0.0).unwrap();
        assert!(close(eye.q_matrix(), &linalg::identity(2), 0.0));
        assert!(close(eye.q_inv_matrix(), &linalg::identity(2), 0.0));

        let m = RandomizationMatrix::new(&DiscreteDistribution::uniform(2), 0.5).unwrap();
        assert!(close(m.q_matrix(), &[0.75, 0.25, 0.25, 0.75], 1e-15));
        assert!(close(m.q_inv_matrix(), &[1.5, -0.5, -0.5, 1.5], 1e-12));
        assert!(RandomizationMatrix::new(&DiscreteDistribution::uniform(2), 1.0).is_err());
    }

    #[test]
    fn matrix_serde_round_trip() {
        let m = RandomizationMatrix::new(&DiscreteDistribution::new(vec![0.1, 0.6, 0.3]).unwrap(), 0.4).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: RandomizationMatrix = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn epsilon_examples() {
        let p = CentralParams::new(0.25, NoiseScale::Finite(1.0), 0.5, 0.0).unwrap();
        assert!((central_epsilon(&p).epsilon - (1.0 + 5f64.ln())).abs() < 1e-12);

        let lambda = 2.0 / (1.0 + std::f64::consts::E);
        let p = CentralParams::new(0.5, NoiseScale::Infinite, lambda, 0.0).unwrap();
        assert!((central_epsilon(&p).epsilon - 1.0).abs() < 1e-12);

        let p = CentralParams::new(0.5, NoiseScale::Infinite, 0.0, 0.0).unwrap();
        let r = central_epsilon(&p);
        assert_eq!(r.epsilon, f64::INFINITY);
        assert_eq!(r.delta, 0.0);
    }

    #[test]
    fn uniform_preset_values() {
        let p = preset_uniform_rr(3f64.ln(), 2).unwrap();
        assert!((p.lambda - 0.5).abs() < 1e-15 && p.beta == p.lambda);
        assert_eq!(p.tau, 0.5);
        assert_eq!(p.sigma, NoiseScale::Infinite);
        let p = preset_uniform_rr(1.0, 10).unwrap();
        assert!((p.lambda - 10.0 / (9.0 + std::f64::consts::E)).abs() < 1e-15);
        assert!((p.lambda - 0.8533).abs() < 1e-4);
        assert!(preset_uniform_rr(0.0, 2).is_err());
        assert!(preset_uniform_rr(-1.0, 2).is_err());
    }

    #[test]
    fn cluster_preset_values() {
        let p = preset_cluster_rr(1.0, 0.1, 2).unwrap();
        assert!((p.lambda - 1.0 / (1.0 + (std::f64::consts::E - 1.0) * 0.1)).abs() < 1e-15);
        assert!((p.lambda - 0.85337).abs() < 1e-5);
        assert_eq!((p.tau, p.beta), (0.1, 0.0));
        assert_eq!(p.sigma, NoiseScale::Finite(1.0));
        // epsilon of the preset is exactly twice the target
        assert!((central_epsilon(&p).epsilon - 2.0).abs() < 1e-12);

        let tiny = preset_cluster_rr(1.0, 1e-300, 2).unwrap();
        assert_eq!(tiny.lambda, MAX_LAMBDA);
        assert!(preset_cluster_rr(1.0, 0.0, 2).is_err());
        assert!(preset_cluster_rr(1.0, 0.2, 10).is_err());
    }

    #[test]
    fn noop_configuration() {
        let labels = vec![0, 1, 1, 0, 2];
        let data = toy(labels.clone(), vec![0, 0, 1, 1, 1], 3);
        let p = CentralParams::new(0.0, NoiseScale::Finite(0.0), 0.0, 0.0).unwrap();
        let out = run_central(&data, &p, &RngStream::from_seed(1)).unwrap();
        assert_eq!(out.noisy_data.labels(), &labels[..]);
        for m in &out.per_cluster_qinv {
            assert!(close(m.q_inv_matrix(), &linalg::identity(3), 0.0));
        }
        assert_eq!(out.receipt.epsilon, f64::INFINITY);
    }

    #[test]
    fn uniform_rr_flip_rate() {
        let n = 200_000;
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 % 3 == 0) as usize).collect();
        let clusters: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let data = toy(labels.clone(), clusters, 2);
        let params = preset_uniform_rr(1.0, 2).unwrap();
        let out = run_central(&data, &params, &RngStream::from_seed(2)).unwrap();
        let flips = out.noisy_data.labels().iter().zip(&labels).filter(|(a, b)| a != b).count() as f64;
        let p = params.lambda / 2.0;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((flips / n as f64 - p).abs() < 3.0 * sd, "{} vs {p}", flips / n as f64);
        assert!((out.receipt.epsilon - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_clusters_concentrate_on_majority() {
        // three pure clusters of 1000; eps = 1, phi = 0.05 gives tau = 0.05 and Laplace scale 1/1000
        let n = 3000;
        let labels: Vec<usize> = (0..n).map(|i| i / 1000).collect();
        let data = toy(labels.clone(), labels.clone(), 3);
        let params = preset_cluster_rr(1.0, 0.05, 3).unwrap();
        let out = run_central(&data, &params, &RngStream::from_seed(5)).unwrap();
        for (c, q) in out.distributions.q_tilde.iter().enumerate() {
            // clipped minority entries sit at tau up to a renormalization shift of the noise order
            for y in 0..3 {
                let expect = if y == c { 0.9 } else { 0.05 };
                assert!((q.prob(y) - expect).abs() < 0.02, "cluster {c}: {:?}", q.probs());
            }
        }
    }

    #[test]
    fn per_cluster_streams_are_order_independent() {
        // the same cluster seen under a different cluster numbering gets the
        // noise of its new id, whatever the other clusters contain
        let a = toy(vec![0, 1, 1, 0, 1, 1], vec![0, 0, 0, 1, 1, 1], 2);
        let b = toy(vec![0, 1, 1, 1, 1, 1], vec![0, 0, 0, 1, 1, 1], 2);
        let ra = noisy_distributions(&a, 0.1, NoiseScale::Finite(1.0), &RngStream::from_seed(4)).unwrap();
        let rb = noisy_distributions(&b, 0.1, NoiseScale::Finite(1.0), &RngStream::from_seed(4)).unwrap();
        assert_eq!(ra.q_tilde[0], rb.q_tilde[0]);
    }

    fn clipped_vector() -> impl Strategy<Value = (Vec<f64>, f64)> {
        (2usize..=10, 0.0f64..=1.0).prop_flat_map(|(k, t)| {
            let tau = t / k as f64;
            (prop::collection::vec(tau..=1.0, k), Just(tau))
        })
    }

    proptest! {
        #[test]
        fn renormalize_stays_in_range((q, tau) in clipped_vector()) {
            let out = renormalize(&q, tau).unwrap();
            let sum: f64 = out.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            for &p in out.probs() {
                prop_assert!(p >= tau - 1e-12 && p <= 1.0 + 1e-12);
                prop_assert!(rr_likelihood_ratio(0.3, p) <= 1.0 + 0.7 / (0.3 * tau) + 1e-9 || tau == 0.0);
            }
        }

        #[test]
        fn uniform_preset_round_trips(eps in 0.01f64..10.0, k in 2usize..200) {
            let p = preset_uniform_rr(eps, k).unwrap();
            prop_assert!((central_epsilon(&p).epsilon - eps).abs() < 1e-9);
        }
    }
}
