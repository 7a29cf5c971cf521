//! Privacy/utility sweeps: cluster, privatize, train and evaluate over a grid
//! of mechanisms, privacy budgets and cluster counts.
//!
//! Results go to `tidy.csv` (one row per trial), `agg.csv` (mean and sample
//! standard deviation per grid point) and `receipts.jsonl` (the receipt of
//! every mechanism run). Wall-clock times go to a separate `timings.csv` so
//! the other three files are byte-identical across reruns.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::central::{preset_cluster_rr, preset_uniform_rr, run_central, CentralParams};
use crate::clustering::{kmeans, ClusterAssignment, ClusteredDataset, Initialization, KMeansConfig};
use crate::data::{load_csv, CsvSchema, LabeledDataset};
use crate::error::{Error, Result};
use crate::learner::{accuracy, train, train_baseline, LossKind, LossSpec, TrainConfig};
use crate::metrics::empirical_heterogeneity_report;
use crate::receipt::{real, PrivacyReceipt};
use crate::rng::RngStream;
use crate::synthetic::{generate, SyntheticConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Every resampled label is uniform.
    Uniform,
    /// Resampled labels follow the noisy cluster label distribution.
    Cluster,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Uniform => "uniform",
            Mechanism::Cluster => "cluster",
        }
    }

    /// Preset parameters for a target budget; an infinite budget disables
    /// resampling.
    pub fn params(self, epsilon: f64, phi: f64, num_labels: usize) -> Result<CentralParams> {
        match self {
            Mechanism::Uniform => preset_uniform_rr(epsilon, num_labels),
            Mechanism::Cluster => preset_cluster_rr(epsilon, phi, num_labels),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansSettings {
    pub max_iters: usize,
    pub tol: f64,
    pub init: Initialization,
}

impl Default for KMeansSettings {
    fn default() -> Self {
        let d = KMeansConfig::new(1);
        Self {
            max_iters: d.max_iters,
            tol: d.tol,
            init: d.init,
        }
    }
}

/// Sweep description, read from JSON. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Training CSV; relative paths resolve against the config file.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Generate the data instead of reading it.
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    /// Label-space size; inferred from the data when absent.
    #[serde(default)]
    pub num_labels: Option<usize>,
    pub cluster_counts: Vec<usize>,
    /// Target budgets; `"inf"` runs without privacy.
    #[serde(with = "real::vec")]
    pub epsilons: Vec<f64>,
    pub mechanisms: Vec<Mechanism>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Heterogeneity handed to the cluster preset as its clipping threshold.
    #[serde(default = "default_phi")]
    pub phi: f64,
    /// Train on the `Q^{-1}`-reweighted loss instead of plain cross-entropy.
    #[serde(default)]
    pub modified_loss: bool,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub kmeans: KMeansSettings,
}

fn default_trials() -> usize {
    5
}

fn default_phi() -> f64 {
    0.01
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.test].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.cluster_counts.is_empty() || self.epsilons.is_empty() || self.mechanisms.is_empty() {
            return bad("cluster_counts, epsilons and mechanisms must be non-empty");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.cluster_counts.contains(&0) {
            return bad("cluster counts must be positive");
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0)) {
            return Err(Error::Config(format!("epsilon {e} is not positive")));
        }
        match (&self.dataset, &self.test, &self.synthetic) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => Ok(()),
            _ => bad("give either both `dataset` and `test`, or `synthetic`"),
        }
    }
}

/// One trial of one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mechanism: Mechanism,
    #[serde(with = "real")]
    pub epsilon_target: f64,
    #[serde(with = "real")]
    pub epsilon_receipt: f64,
    pub clusters: usize,
    pub trial: usize,
    pub accuracy: f64,
    pub normalized_accuracy: f64,
    pub phi_proxy: f64,
    pub min_cluster_size: usize,
    pub receipt: PrivacyReceipt,
    /// Wall-clock seconds; kept out of the deterministic outputs.
    #[serde(skip)]
    pub runtime_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mechanism: Mechanism,
    #[serde(with = "real")]
    pub epsilon: f64,
    pub clusters: usize,
    pub trials: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_normalized: f64,
    pub std_normalized: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub baseline_accuracy: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Mean and sample standard deviation per `(mechanism, epsilon, clusters)`,
    /// in first-appearance order.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut keys: Vec<(Mechanism, u64, usize)> = Vec::new();
        for r in &self.rows {
            let k = (r.mechanism, r.epsilon_target.to_bits(), r.clusters);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(m, e, c)| {
                let group: Vec<&SweepRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.mechanism == m && r.epsilon_target.to_bits() == e && r.clusters == c)
                    .collect();
                let (ma, sa) = mean_std(group.iter().map(|r| r.accuracy));
                let (mn, sn) = mean_std(group.iter().map(|r| r.normalized_accuracy));
                AggregateRow {
                    mechanism: m,
                    epsilon: f64::from_bits(e),
                    clusters: c,
                    trials: group.len(),
                    mean_accuracy: ma,
                    std_accuracy: sa,
                    mean_normalized: mn,
                    std_normalized: sn,
                }
            })
            .collect()
    }

    pub fn find(&self, mechanism: Mechanism, epsilon: f64, clusters: usize) -> Option<AggregateRow> {
        self.aggregate()
            .into_iter()
            .find(|a| a.mechanism == mechanism && a.epsilon == epsilon && a.clusters == clusters)
    }
}

/// Sample mean and standard deviation (zero for a single value).
pub fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

const TIDY_HEADER: &str =
    "mechanism,epsilon_target,epsilon_receipt,clusters,trial,accuracy,normalized_accuracy,phi_proxy,min_cluster_size\n";

fn tidy_line(r: &SweepRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}\n",
        r.mechanism.name(),
        fmt_real(r.epsilon_target),
        fmt_real(r.epsilon_receipt),
        r.clusters,
        r.trial,
        fmt_real(r.accuracy),
        fmt_real(r.normalized_accuracy),
        fmt_real(r.phi_proxy),
        r.min_cluster_size
    )
}

fn receipt_line(r: &SweepRow) -> Result<String> {
    let v = serde_json::json!({
        "mechanism": r.mechanism,
        "epsilon_target": fmt_real(r.epsilon_target),
        "clusters": r.clusters,
        "trial": r.trial,
        "receipt": r.receipt,
    });
    Ok(serde_json::to_string(&v)? + "\n")
}

fn agg_text(result: &SweepResult) -> String {
    let mut s = String::from("mechanism,epsilon,clusters,trials,mean_accuracy,std_accuracy,mean_normalized,std_normalized\n");
    for a in result.aggregate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            a.mechanism.name(),
            fmt_real(a.epsilon),
            a.clusters,
            a.trials,
            fmt_real(a.mean_accuracy),
            fmt_real(a.std_accuracy),
            fmt_real(a.mean_normalized),
            fmt_real(a.std_normalized)
        );
    }
    s
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_all(w: &mut impl Write, path: &Path, text: &str) -> Result<()> {
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn flush(w: &mut impl Write, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `tidy.csv`, `agg.csv`, `receipts.jsonl` and `timings.csv` into `dir`.
pub fn emit_plotdata(result: &SweepResult, dir: impl AsRef<Path>) -> Result<()> {
    if result.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tidy = String::from(TIDY_HEADER);
    let mut receipts = String::new();
    let mut timings = String::from("mechanism,epsilon_target,clusters,trial,runtime_secs\n");
    for r in &result.rows {
        tidy += &tidy_line(r);
        receipts += &receipt_line(r)?;
        let _ = writeln!(
            timings,
            "{},{},{},{},{}",
            r.mechanism.name(),
            fmt_real(r.epsilon_target),
            r.clusters,
            r.trial,
            r.runtime_secs
        );
    }
    for (name, text) in [
        ("tidy.csv", tidy),
        ("agg.csv", agg_text(result)),
        ("receipts.jsonl", receipts),
        ("timings.csv", timings),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Loads or generates the configured data, then runs [`run_sweep_with_data`].
pub fn run_sweep(config: &SweepConfig, out_dir: Option<&Path>) -> Result<SweepResult> {
    config.validate()?;
    let (train_set, test_set) = match (&config.synthetic, &config.dataset, &config.test) {
        (Some(s), _, _) => generate(s)?,
        (None, Some(d), Some(t)) => {
            let schema = CsvSchema {
                num_labels: config.num_labels,
                ..Default::default()
            };
            let train_set = load_csv(d, &schema)?;
            let test_schema = CsvSchema {
                num_labels: config.num_labels.or(train_set.label_names().map(|_| train_set.num_labels())),
                label_names: train_set.label_names().map(<[String]>::to_vec),
                ..Default::default()
            };
            let test_set = load_csv(t, &test_schema)?;
            (train_set, test_set)
        }
        _ => unreachable!("validated"),
    };
    run_sweep_with_data(config, &train_set, &test_set, out_dir)
}

/// Runs the grid in a fixed order (mechanism, cluster count, epsilon) with
/// the trials of each point in parallel. With `out_dir`, rows of every
/// finished grid point are appended to `tidy.csv` and `receipts.jsonl` as the
/// sweep goes, and the full outputs are written at the end.
pub fn run_sweep_with_data(
    config: &SweepConfig,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    out_dir: Option<&Path>,
) -> Result<SweepResult> {
    config.validate()?;
    let k = config.num_labels.unwrap_or(train_set.num_labels().max(test_set.num_labels()));
    if train_set.num_labels() > k || test_set.num_labels() > k {
        return Err(Error::Config(format!("data has more labels than num_labels = {k}")));
    }
    let relabel = |d: &LabeledDataset| LabeledDataset::from_flat(d.features_flat().to_vec(), d.dim(), d.labels().to_vec(), k);
    let (train_set, test_set) = (relabel(train_set)?, relabel(test_set)?);
    for m in &config.mechanisms {
        for &e in &config.epsilons {
            m.params(e, config.phi, k)?;
        }
    }
    let root = RngStream::from_seed(config.seed);
    let baseline = train_baseline(&train_set, &config.train)?;
    let baseline_accuracy = accuracy(&baseline, &test_set)?;
    if baseline_accuracy <= 0.0 {
        return Err(Error::Config("the clean baseline has zero test accuracy; cannot normalize".into()));
    }

    let mut progress = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let (tp, rp) = (dir.join("tidy.csv"), dir.join("receipts.jsonl"));
            let mut t = create(&tp)?;
            write_all(&mut t, &tp, TIDY_HEADER)?;
            flush(&mut t, &tp)?;
            Some((t, tp, create(&rp)?, rp))
        }
        None => None,
    };

    let mut rows = Vec::new();
    let mut clusterings: Vec<(usize, ClusterAssignment)> = Vec::new();
    for &mechanism in &config.mechanisms {
        for &count in &config.cluster_counts {
            let assignment = match clusterings.iter().find(|(c, _)| *c == count) {
                Some((_, a)) => a.clone(),
                None => {
                    let km = KMeansConfig {
                        k: count,
                        max_iters: config.kmeans.max_iters,
                        tol: config.kmeans.tol,
                        init: config.kmeans.init,
                    };
                    let a = kmeans(&train_set, &km, &root.derive_tag("sweep/kmeans").derive(count as u64))?.assignment;
                    clusterings.push((count, a.clone()));
                    a
                }
            };
            let clustered = ClusteredDataset::new(train_set.clone(), assignment)?;
            let proxy = empirical_heterogeneity_report(&clustered)?;
            for &epsilon in &config.epsilons {
                let params = mechanism.params(epsilon, config.phi, k)?;
                let point = root
                    .derive_tag(mechanism.name())
                    .derive(epsilon.to_bits())
                    .derive(count as u64);
                let group: Vec<SweepRow> = (0..config.trials)
                    .into_par_iter()
                    .map(|trial| {
                        let start = Instant::now();
                        let out = run_central(&clustered, &params, &point.derive(trial as u64))?;
                        let spec = if config.modified_loss {
                            LossSpec::modified(LossKind::CrossEntropy, out.per_cluster_qinv.clone())
                        } else {
                            LossSpec::plain(LossKind::CrossEntropy)
                        };
                        let hp = TrainConfig {
                            seed: config.train.seed.wrapping_add(trial as u64),
                            ..config.train
                        };
                        let h = train(&out.noisy_data, Some(clustered.assignment()), &spec, &hp)?;
                        let acc = accuracy(&h, &test_set)?;
                        let mut receipt = out.receipt;
                        receipt.target_epsilon = Some(epsilon);
                        Ok(SweepRow {
                            mechanism,
                            epsilon_target: epsilon,
                            epsilon_receipt: receipt.epsilon,
                            clusters: count,
                            trial,
                            accuracy: acc,
                            normalized_accuracy: acc / baseline_accuracy,
                            phi_proxy: proxy.phi_proxy,
                            min_cluster_size: proxy.min_cluster_size,
                            receipt,
                            runtime_secs: start.elapsed().as_secs_f64(),
                        })
                    })
                    .collect::<Result<_>>()?;
                if let Some((t, tp, r, rp)) = progress.as_mut() {
                    for row in &group {
                        write_all(t, tp, &tidy_line(row))?;
                        write_all(r, rp, &receipt_line(row)?)?;
                    }
                    flush(t, tp)?;
                    flush(r, rp)?;
                }
                rows.extend(group);
            }
        }
    }
    drop(progress);
    let result = SweepResult { baseline_accuracy, rows };
    if let Some(dir) = out_dir {
        emit_plotdata(&result, dir)?;
    }
    Ok(result)
}
