//! The peer-to-peer label exchange for binary labels, its accountant, and an
//! exact audit of the binomial likelihood ratios the accountant bounds.
//!
//! Every user flips their own label with probability `alpha`, then reports the
//! flipped label of a peer chosen uniformly from their cluster (possibly
//! themselves), and is kept in the output with probability `theta`. The
//! exchange is simulated in-process; the trace records every message.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::clustering::{ClusterAssignment, ClusteredDataset};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::receipt::{MechanismKind, PrivacyReceipt};
use crate::rng::RngStream;

/// The constant in the default flip probability `C ln s / sqrt(theta s)`.
pub const DEFAULT_ALPHA_CONSTANT: f64 = 4.0 * std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct P2PParams {
    pub alpha: f64,
    pub theta: f64,
    /// Tail parameter of the accountant.
    pub xi: f64,
    /// Minimum cluster size the guarantee is stated for.
    pub s: usize,
}

impl P2PParams {
    pub fn new(alpha: f64, theta: f64, xi: f64, s: usize) -> Result<Self> {
        let p = Self { alpha, theta, xi, s };
        p.validate()?;
        Ok(p)
    }

    /// `alpha = 4 sqrt(2) ln s / sqrt(theta s)` and `xi = 4 sqrt(ln s)`.
    ///
    /// Refuses when that `alpha` exceeds one half; flipping more often than
    /// not inverts the labels.
    pub fn default_for(s: usize, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::param("theta", format!("{theta} is outside (0, 1]")));
        }
        if s < 2 {
            return Err(Error::param("s", "the default needs clusters of at least two users"));
        }
        let alpha = default_alpha(s as f64, theta);
        if alpha > 0.5 {
            return Err(Error::param(
                "alpha",
                format!(
                    "the default flip probability {alpha:.4} exceeds 1/2 at s = {s}, theta = {theta}; \
                     it needs clusters of at least {} users",
                    min_cluster_size_for(theta)
                ),
            ));
        }
        Self::new(alpha, theta, 4.0 * (s as f64).ln().sqrt(), s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param("alpha", format!("{} is outside [0, 1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::param("theta", format!("{} is outside [0, 1]", self.theta)));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::param("xi", format!("{} is not a nonnegative real", self.xi)));
        }
        Ok(())
    }
}

fn default_alpha(s: f64, theta: f64) -> f64 {
    DEFAULT_ALPHA_CONSTANT * s.ln() / (theta * s).sqrt()
}

/// Smallest cluster size at which the default flip probability is at most 1/2.
pub fn min_cluster_size_for(theta: f64) -> usize {
    // alpha(s) decreases for s > e^2, and alpha(8) > 1/2 for any theta <= 1
    let ok = |s: usize| default_alpha(s as f64, theta) <= 0.5;
    let (mut lo, mut hi) = (8usize, 16usize);
    while !ok(hi) {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// One user's row of the exchange.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub user: usize,
    pub cluster: usize,
    pub label: usize,
    pub flipped: usize,
    pub peer: usize,
    pub reported: usize,
    pub included: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ExchangeTrace {
    pub entries: Vec<TraceEntry>,
}

impl ExchangeTrace {
    /// Checks that every peer shares the user's cluster and that every
    /// reported label is the peer's flipped label.
    pub fn verify(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            let peer = self.entries.get(e.peer).ok_or_else(|| {
                Error::Config(format!("trace row {i}: peer {} is not a user", e.peer))
            })?;
            if e.user != i {
                return Err(Error::Config(format!("trace row {i} names user {}", e.user)));
            }
            if peer.cluster != e.cluster {
                return Err(Error::Config(format!(
                    "trace row {i}: peer {} is in cluster {}, not {}",
                    e.peer, peer.cluster, e.cluster
                )));
            }
            if e.reported != peer.flipped {
                return Err(Error::Config(format!(
                    "trace row {i}: reported {} but peer {} holds {}",
                    e.reported, e.peer, peer.flipped
                )));
            }
        }
        Ok(())
    }

    /// Indices and labels of the users the learner receives.
    pub fn output(&self) -> (Vec<usize>, Vec<usize>) {
        self.entries
            .iter()
            .filter(|e| e.included)
            .map(|e| (e.user, e.reported))
            .unzip()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: Read>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        for line in BufReader::new(r).lines() {
            let line = line.map_err(|e| Error::io("<trace>", e))?;
            if !line.trim().is_empty() {
                entries.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { entries })
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_jsonl(std::fs::File::open(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Clone, Debug)]
pub struct P2POutput {
    /// The included users' features with their reported labels.
    pub noisy_data: LabeledDataset,
    /// Row indices of the included users in the input.
    pub included: Vec<usize>,
    pub trace: ExchangeTrace,
    pub receipt: PrivacyReceipt,
}

/// Flips each label independently with probability `alpha`.
pub fn flip_labels(labels: &[usize], alpha: f64, rng: &RngStream) -> Vec<usize> {
    labels
        .par_iter()
        .enumerate()
        .map(|(i, &y)| {
            let mut r = rng.derive(i as u64).rng();
            if r.random::<f64>() < alpha {
                1 - y
            } else {
                y
            }
        })
        .collect()
}

/// Peer selection and subsampling, given everyone's flipped label.
pub fn exchange(
    labels: &[usize],
    flipped: &[usize],
    assignment: &ClusterAssignment,
    theta: f64,
    rng: &RngStream,
) -> Result<ExchangeTrace> {
    assignment.require_nonempty()?;
    if labels.len() != assignment.len() || flipped.len() != assignment.len() {
        return Err(Error::LengthMismatch {
            expected: assignment.len(),
            got: labels.len().min(flipped.len()),
        });
    }
    let members = assignment.members();
    let entries = (0..labels.len())
        .into_par_iter()
        .map(|i| {
            let mut r = rng.derive(i as u64).rng();
            let c = assignment.cluster_of(i);
            let peer = members[c][r.random_range(0..members[c].len())];
            TraceEntry {
                user: i,
                cluster: c,
                label: labels[i],
                flipped: flipped[i],
                peer,
                reported: flipped[peer],
                included: r.random::<f64>() < theta,
            }
        })
        .collect();
    Ok(ExchangeTrace { entries })
}

/// Runs the exchange on a binary dataset.
///
/// The receipt is stated for the smaller of `params.s` and the actual
/// minimum cluster size. When the accountant's preconditions fail there, the
/// receipt carries an infinite epsilon and says why.
pub fn run_p2p(data: &ClusteredDataset, params: &P2PParams, rng: &RngStream) -> Result<P2POutput> {
    params.validate()?;
    if data.num_labels() != 2 {
        return Err(Error::NotBinary(data.num_labels()));
    }
    let assignment = data.assignment();
    assignment.require_nonempty()?;
    let labels = data.data().labels();
    let flipped = flip_labels(labels, params.alpha, &rng.derive_tag("p2p/flip"));
    let trace = exchange(labels, &flipped, assignment, params.theta, &rng.derive_tag("p2p/exchange"))?;
    let (included, reported) = trace.output();
    let noisy_data = data.data().select_relabeled(&included, reported)?;
    let s = params.s.min(assignment.min_cluster_size()).max(1);
    let receipt = p2p_receipt(s, params);
    Ok(P2POutput {
        noisy_data,
        included,
        trace,
        receipt,
    })
}

fn p2p_receipt(s: usize, params: &P2PParams) -> PrivacyReceipt {
    let mut receipt = match p2p_privacy(s, params.theta, params.alpha, params.xi) {
        Ok(r) => r,
        Err(e) => {
            let mut r = PrivacyReceipt::new(
                MechanismKind::P2p,
                f64::INFINITY,
                1.0,
                serde_json::to_value(params).expect("params serialize"),
            );
            r.notes.push(format!("no guarantee at s = {s}: {e}"));
            r
        }
    };
    receipt.params = serde_json::json!({
        "alpha": params.alpha,
        "theta": params.theta,
        "xi": params.xi,
        "s": s,
    });
    receipt
}

/// `epsilon = theta ln(e + 3/(s alpha)) + sqrt(theta) xi ln(1 + 3/sqrt(s alpha))`,
/// `delta = exp(-alpha xi^2 / (4 (alpha + 1/s)(1 - alpha)))`.
///
/// Needs `s alpha >= 2` and `xi <= 3 alpha sqrt(theta s (1 - alpha))`.
pub fn p2p_privacy(s: usize, theta: f64, alpha: f64, xi: f64) -> Result<PrivacyReceipt> {
    P2PParams::new(alpha, theta, xi, s)?;
    let sf = s as f64;
    // a relative slack lets alpha = 2/s through despite rounding
    if sf * alpha < 2.0 * (1.0 - 1e-12) {
        return Err(Error::param(
            "alpha",
            format!("s * alpha = {} is below 2; clusters must have at least 2/alpha users", sf * alpha),
        ));
    }
    let xi_max = 3.0 * alpha * (theta * sf * (1.0 - alpha)).sqrt();
    if xi > xi_max * (1.0 + 1e-12) {
        return Err(Error::param("xi", format!("{xi} exceeds the admissible maximum {xi_max}")));
    }
    let sa = sf * alpha;
    let epsilon = theta * (std::f64::consts::E + 3.0 / sa).ln() + theta.sqrt() * xi * (3.0 / sa.sqrt()).ln_1p();
    let delta = if xi == 0.0 {
        1.0
    } else {
        (-alpha * xi * xi / (4.0 * (alpha + 1.0 / sf) * (1.0 - alpha))).exp()
    };
    let mut r = PrivacyReceipt::new(
        MechanismKind::P2p,
        epsilon,
        delta,
        serde_json::json!({ "alpha": alpha, "theta": theta, "xi": xi, "s": s }),
    );
    if alpha > 0.0 && alpha <= 0.5 {
        r.peer_view_epsilon = Some(per_peer_view_epsilon(alpha)?);
        r.notes.push("the receiving peer sees one flipped label; the learner-view guarantee is epsilon".into());
    }
    Ok(r)
}

/// `ln((1 - alpha) / alpha)`: what the one peer who receives a user's flipped label learns.
pub fn per_peer_view_epsilon(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::param("alpha", format!("{alpha} is outside (0, 1/2]")));
    }
    Ok(((1.0 - alpha) / alpha).ln())
}

/// `x ln(y)` with `0 ln 0 = 0`.
fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `f(k; t, p) / f(k; t, p')`; the binomial coefficients cancel.
pub fn likelihood_ratio(k: u64, t: u64, p: f64, p_prime: f64) -> f64 {
    log_likelihood_ratio(k, t, p, p_prime).exp()
}

fn log_likelihood_ratio(k: u64, t: u64, p: f64, p_prime: f64) -> f64 {
    let (k, rest) = (k as f64, (t - k) as f64);
    (xlny(k, p) - xlny(k, p_prime)) + (xlny(rest, 1.0 - p) - xlny(rest, 1.0 - p_prime))
}

fn ln_binomial_pmf(k: u64, t: u64, p: f64) -> f64 {
    let (kf, tf) = (k as f64, t as f64);
    ln_gamma(tf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(tf - kf + 1.0) + xlny(kf, p) + xlny(tf - kf, 1.0 - p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub t: u64,
    pub p: f64,
    pub p_prime: f64,
    #[serde(with = "crate::receipt::real")]
    pub epsilon: f64,
    pub delta: f64,
    pub xi: f64,
    /// Largest `f(k;t,p)/f(k;t,p')` over the lower set, and where.
    pub max_ratio_minus: f64,
    pub argmax_minus: Option<u64>,
    /// Largest `f(k;t,p')/f(k;t,p)` over the upper set, and where.
    pub max_ratio_plus: f64,
    pub argmax_plus: Option<u64>,
    /// Mass of `f(.;t,p)` below the lower set.
    pub tail_minus: f64,
    /// Mass of `f(.;t,p')` above the upper set.
    pub tail_plus: f64,
    pub pass: bool,
}

/// Audits one cluster of `n_cluster` users whose flipped labels are positive
/// with probability `p`, against the neighbour with `p' = p + 1/n_cluster`.
/// The learner sees `t = floor(theta n_cluster)` reports.
pub fn binomial_audit(n_cluster: usize, p: f64, theta: f64, epsilon: f64, delta: f64, xi: f64) -> Result<AuditReport> {
    let t = (theta * n_cluster as f64).floor();
    if !(t >= 1.0) {
        return Err(Error::param(
            "theta",
            format!("theta * n = {} leaves fewer than one report", theta * n_cluster as f64),
        ));
    }
    let p_prime = p + 1.0 / n_cluster as f64;
    binomial_audit_pair(t as u64, p, p_prime, epsilon, delta, xi)
}

/// The audit for an explicit pair of success probabilities.
pub fn binomial_audit_pair(t: u64, p: f64, p_prime: f64, epsilon: f64, delta: f64, xi: f64) -> Result<AuditReport> {
    if t == 0 {
        return Err(Error::param("t", "at least one report is needed"));
    }
    for (name, v) in [("p", p), ("p_prime", p_prime)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::param(name, format!("{v} is outside [0, 1]")));
        }
    }
    if !(xi >= 0.0) {
        return Err(Error::param("xi", format!("{xi} is negative")));
    }
    let tf = t as f64;
    let q = 1.0 - p;
    let lower = tf * p - xi * (tf * q).sqrt();
    let upper = tf * p + xi * (tf * p).sqrt();
    let ks: Vec<u64> = (0..=t).collect();
    let scan = |in_set: &dyn Fn(f64) -> bool, num: f64, den: f64| -> (f64, Option<u64>) {
        ks.iter()
            .filter(|&&k| in_set(k as f64))
            .map(|&k| (log_likelihood_ratio(k, t, num, den), Some(k)))
            .fold((f64::NEG_INFINITY, None), |a, b| if b.0 > a.0 { b } else { a })
    };
    let (lr_minus, argmax_minus) = scan(&|k| k >= lower, p, p_prime);
    let (lr_plus, argmax_plus) = scan(&|k| k <= upper, p_prime, p);
    let tail = |outside: &dyn Fn(f64) -> bool, prob: f64| -> f64 {
        ks.iter()
            .filter(|&&k| outside(k as f64))
            .map(|&k| ln_binomial_pmf(k, t, prob).exp())
            .sum()
    };
    let tail_minus = tail(&|k| k < lower, p);
    let tail_plus = tail(&|k| k > upper, p_prime);
    let tol = 1e-12;
    let pass = lr_minus <= epsilon + tol && lr_plus <= epsilon + tol && tail_minus <= delta + tol && tail_plus <= delta + tol;
    Ok(AuditReport {
        t,
        p,
        p_prime,
        epsilon,
        delta,
        xi,
        max_ratio_minus: lr_minus.exp(),
        argmax_minus,
        max_ratio_plus: lr_plus.exp(),
        argmax_plus,
        tail_minus,
        tail_plus,
        pass,
    })
}

/// Summary of [`audit_grid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub s: usize,
    pub theta: f64,
    pub alpha: f64,
    pub cases: usize,
    pub failures: usize,
    pub pass: bool,
    /// The case with the largest likelihood ratio relative to `e^epsilon`.
    pub worst: Option<AuditReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub failed: Vec<AuditReport>,
}

/// Audits the accountant's guarantee at `(s, theta, alpha)` for cluster sizes
/// `{s, 2s, 4s}`, flipped-label fractions spread over `[alpha, 1 - alpha]`, and
/// `xi` at 0, half and all of its admissible maximum.
pub fn audit_grid(s: usize, theta: f64, alpha: f64) -> Result<GridReport> {
    let xi_max = 3.0 * alpha * (theta * s as f64 * (1.0 - alpha)).sqrt();
    let mut reports = Vec::new();
    for xi in [0.0, xi_max / 2.0, xi_max] {
        let receipt = p2p_privacy(s, theta, alpha, xi)?;
        for n in [s, 2 * s, 4 * s] {
            for j in 0..=10 {
                let p = alpha + (1.0 - 2.0 * alpha) * j as f64 / 10.0;
                reports.push(binomial_audit(n, p, theta, receipt.epsilon, receipt.delta, xi)?);
            }
        }
    }
    let slack = |r: &AuditReport| r.max_ratio_minus.ln().max(r.max_ratio_plus.ln()) - r.epsilon;
    let worst = reports
        .iter()
        .max_by(|a, b| slack(a).total_cmp(&slack(b)))
        .cloned();
    let failed: Vec<AuditReport> = reports.iter().filter(|r| !r.pass).cloned().collect();
    Ok(GridReport {
        s,
        theta,
        alpha,
        cases: reports.len(),
        failures: failed.len(),
        pass: failed.is_empty(),
        worst,
        failed,
    })
}

/// Both sides of `(1 + sgn/x)^(sgn x^a) <= e^(2a - 1) + 3 / x^a`.
pub fn approx_inequality_sides(x: f64, sgn: i32, a: f64) -> Result<(f64, f64)> {
    if !(x >= 2.0) {
        return Err(Error::param("x", format!("{x} is below 2")));
    }
    if sgn != 1 && sgn != -1 {
        return Err(Error::param("sgn", format!("{sgn} is not +1 or -1")));
    }
    if a != 0.5 && a != 1.0 {
        return Err(Error::param("a", format!("{a} is not 1/2 or 1")));
    }
    let s = f64::from(sgn);
    let xa = x.powf(a);
    let lhs = (s * xa * (s / x).ln_1p()).exp();
    let rhs = (2.0 * a - 1.0).exp() + 3.0 / xa;
    Ok((lhs, rhs))
}

pub fn approx_inequality_check(x: f64, sgn: i32, a: f64) -> Result<bool> {
    approx_inequality_sides(x, sgn, a).map(|(l, r)| l <= r + 1e-12)
}
