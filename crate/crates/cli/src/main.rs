//! `clusterdp`: cluster-based label differential privacy from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use clusterdp::central::{preset_cluster_rr, preset_uniform_rr, run_central, CentralParams, NoiseScale, QinvFile};
use clusterdp::clustering::{kmeans, ClusterAssignment, ClusteredDataset, Initialization, KMeansConfig};
use clusterdp::data::{load_csv, CsvSchema, LabeledDataset};
use clusterdp::harness::{run_sweep, SweepConfig};
use clusterdp::lap::{measure, parse_epsilon_grid};
use clusterdp::learner::{evaluate, train, LinearHypothesis, LossKind, LossSpec, TrainConfig};
use clusterdp::metrics::empirical_heterogeneity_report;
use clusterdp::p2p::{audit_grid, binomial_audit, p2p_privacy, run_p2p, P2PParams};
use clusterdp::rng::RngStream;
use clusterdp::synthetic::{generate, SyntheticConfig};

#[derive(Parser)]
#[command(name = "clusterdp", version, about = "Cluster-based label differential privacy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// k-means over the feature columns; writes one cluster id per row.
    Cluster(ClusterArgs),
    /// Heterogeneity proxy and cluster sizes of a clustered dataset.
    Metrics(MetricsArgs),
    /// Centralized cluster randomized response.
    PrivatizeCentral(CentralArgs),
    /// Simulated peer-to-peer label exchange (binary labels).
    PrivatizeP2p(P2pArgs),
    /// Exact binomial audit of the peer-to-peer accountant.
    AuditP2p(AuditArgs),
    /// Multinomial logistic regression, optionally on the reweighted loss.
    Train(TrainArgs),
    /// Accuracy and losses of a trained model on a test file.
    Eval(EvalArgs),
    /// Label association benchmark against the hardness bound.
    Lap(LapArgs),
    /// Privacy/utility sweep described by a JSON config.
    Sweep(SweepArgs),
    /// Gaussian-blob training and test files.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Pick initial centroids uniformly instead of by k-means++.
    #[arg(long)]
    random_init: bool,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Cluster ids; defaults to the input's `cluster` column.
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Uniform,
    Cluster,
}

#[derive(Args)]
struct CentralArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Heterogeneity estimate for the cluster preset.
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// A number or `inf`.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    num_labels: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    qinv: PathBuf,
}

#[derive(Args)]
struct P2pArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    theta: f64,
    #[arg(long, conflicts_with = "auto_alpha")]
    alpha: Option<f64>,
    /// Use the default flip probability for the smallest cluster.
    #[arg(long)]
    auto_alpha: bool,
    #[arg(long)]
    xi: Option<f64>,
    /// Cluster size the guarantee is stated for; defaults to the smallest cluster.
    #[arg(long)]
    s: Option<usize>,
    /// Write outputs even when the accountant gives no finite guarantee.
    #[arg(long)]
    allow_unaccounted: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    receipt: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    s: usize,
    #[arg(long)]
    theta: f64,
    /// Defaults to `4 sqrt(2) ln s / sqrt(theta s)`.
    #[arg(long)]
    alpha: Option<f64>,
    /// Defaults to `4 sqrt(ln s)`, capped at its admissible maximum.
    #[arg(long)]
    xi: Option<f64>,
    /// Audit cluster sizes s, 2s, 4s, a spread of p and three xi values.
    #[arg(long)]
    grid: bool,
    /// Cluster size for a single audit.
    #[arg(long)]
    n: Option<usize>,
    /// Flipped-label fraction for a single audit.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Ce,
    TruncCe,
    ZeroOneEval,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    /// Reweight the loss with these per-cluster matrices.
    #[arg(long)]
    qinv: Option<PathBuf>,
    /// Cluster ids for the reweighting; defaults to the input's `cluster` column.
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ce")]
    loss: LossArg,
    #[arg(long, default_value_t = 1.0)]
    cap: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    num_labels: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct LapArgs {
    #[arg(long = "C")]
    clusters: usize,
    #[arg(long)]
    s: usize,
    #[arg(long = "K")]
    labels: usize,
    /// `start:end:count`, geometrically spaced.
    #[arg(long, default_value = "0.25:8:12")]
    epsilon_grid: String,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out_train: PathBuf,
    #[arg(long)]
    out_test: PathBuf,
    #[arg(long, default_value_t = 5000)]
    n_train: usize,
    #[arg(long, default_value_t = 2000)]
    n_test: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    blobs: usize,
    #[arg(long, default_value_t = 0.5)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 0.05)]
    label_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Cluster(a) => cluster(a),
        Command::Metrics(a) => metrics(a),
        Command::PrivatizeCentral(a) => privatize_central(a),
        Command::PrivatizeP2p(a) => privatize_p2p(a),
        Command::AuditP2p(a) => return audit(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Lap(a) => lap(a),
        Command::Sweep(a) => sweep(a),
        Command::Generate(a) => generate_cmd(a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load(path: &Path, num_labels: Option<usize>) -> Result<LabeledDataset> {
    let schema = CsvSchema {
        num_labels,
        read_clusters: true,
        label_names: None,
    };
    load_csv(path, &schema).with_context(|| format!("reading {}", path.display()))
}

/// The dataset with its clusters, taken from a separate file or the `cluster` column.
fn load_clustered(input: &Path, clusters: Option<&Path>, num_labels: Option<usize>) -> Result<ClusteredDataset> {
    let data = load(input, num_labels)?;
    Ok(match clusters {
        Some(p) => {
            let a = ClusterAssignment::load_csv(p).with_context(|| format!("reading {}", p.display()))?;
            ensure!(
                a.len() == data.len(),
                "{} has {} rows but {} has {}",
                p.display(),
                a.len(),
                input.display(),
                data.len()
            );
            ClusteredDataset::new(data.without_cluster_column(), a)?
        }
        None => ClusteredDataset::from_column(data)
            .with_context(|| format!("{} has no `cluster` column; pass --clusters", input.display()))?,
    })
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let data = load(&a.input, None)?;
    let cfg = KMeansConfig {
        max_iters: a.max_iters,
        init: if a.random_init { Initialization::Random } else { Initialization::PlusPlus },
        ..KMeansConfig::new(a.k)
    };
    let km = kmeans(&data, &cfg, &RngStream::from_seed(a.seed))?;
    km.assignment.save_csv(&a.out)?;
    eprintln!(
        "{} clusters, smallest has {} rows, {} iterations{}",
        a.k,
        km.assignment.min_cluster_size(),
        km.iterations,
        if km.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let data = load_clustered(&a.input, a.clusters.as_deref(), None)?;
    let r = empirical_heterogeneity_report(&data)?;
    if a.json {
        print_json(&r)?;
    } else {
        println!("phi_proxy        {}", r.phi_proxy);
        println!("min_cluster_size {}", r.min_cluster_size);
        for (c, tv) in r.per_cluster_tv.iter().enumerate() {
            println!("cluster {c:>4}     {tv}");
        }
    }
    Ok(())
}

fn central_params(a: &CentralArgs, k: usize) -> Result<CentralParams> {
    let manual = [a.tau, a.sigma, a.lambda, a.beta];
    match a.preset {
        Some(preset) => {
            ensure!(manual.iter().all(Option::is_none), "--preset cannot be combined with --tau/--sigma/--lambda/--beta");
            let eps = a.epsilon.context("--preset needs --epsilon")?;
            Ok(match preset {
                Preset::Uniform => {
                    ensure!(a.phi.is_none(), "--phi only applies to the cluster preset");
                    preset_uniform_rr(eps, k)?
                }
                Preset::Cluster => preset_cluster_rr(eps, a.phi.context("the cluster preset needs --phi")?, k)?,
            })
        }
        None => {
            let [Some(tau), Some(sigma), Some(lambda), Some(beta)] = manual else {
                bail!("give --preset with --epsilon, or all of --tau --sigma --lambda --beta");
            };
            ensure!(a.epsilon.is_none() && a.phi.is_none(), "--epsilon and --phi need --preset");
            Ok(CentralParams::new(tau, NoiseScale::from_f64(sigma), lambda, beta)?)
        }
    }
}

fn privatize_central(a: CentralArgs) -> Result<()> {
    let data = load_clustered(&a.input, a.clusters.as_deref(), a.num_labels)?;
    let params = central_params(&a, data.num_labels())?;
    let mut out = run_central(&data, &params, &RngStream::from_seed(a.seed))?;
    if a.preset.is_some() {
        out.receipt.target_epsilon = a.epsilon;
    }
    out.noisy_data.save_csv(&a.out)?;
    write_json(&a.qinv, &QinvFile::from_output(&out, &params))?;
    eprintln!("{}", out.receipt);
    Ok(())
}

fn privatize_p2p(a: P2pArgs) -> Result<()> {
    let data = load_clustered(&a.input, a.clusters.as_deref(), Some(2))?;
    let smallest = data.assignment().min_cluster_size();
    let s = a.s.unwrap_or(smallest);
    let params = if a.auto_alpha {
        let mut p = P2PParams::default_for(s, a.theta)?;
        if let Some(xi) = a.xi {
            p.xi = xi;
        }
        p
    } else {
        let alpha = a.alpha.context("give --alpha or --auto-alpha")?;
        let xi = a.xi.unwrap_or_else(|| default_xi(s, a.theta, alpha));
        P2PParams::new(alpha, a.theta, xi, s)?
    };
    let out = run_p2p(&data, &params, &RngStream::from_seed(a.seed))?;
    if !out.receipt.is_finite() && !a.allow_unaccounted {
        bail!(
            "no finite guarantee: {}; pass --allow-unaccounted to write the outputs anyway",
            out.receipt.notes.join("; ")
        );
    }
    out.noisy_data.save_csv(&a.out)?;
    write_json(&a.receipt, &out.receipt)?;
    if let Some(t) = &a.trace {
        out.trace.save_jsonl(t)?;
    }
    eprintln!("{} of {} users reported; {}", out.included.len(), data.data().len(), out.receipt);
    Ok(())
}

/// `4 sqrt(ln s)`, capped at the largest tail parameter the accountant admits.
fn default_xi(s: usize, theta: f64, alpha: f64) -> f64 {
    let cap = 3.0 * alpha * (theta * s as f64 * (1.0 - alpha)).sqrt();
    (4.0 * (s as f64).ln().max(0.0).sqrt()).min(cap).max(0.0)
}

fn audit(a: AuditArgs) -> Result<ExitCode> {
    let alpha = match a.alpha {
        Some(alpha) => alpha,
        None => P2PParams::default_for(a.s, a.theta)?.alpha,
    };
    let pass = if a.grid {
        ensure!(a.xi.is_none() && a.n.is_none(), "--grid chooses xi and n itself");
        let report = audit_grid(a.s, a.theta, alpha)?;
        print_json(&report)?;
        report.pass
    } else {
        let xi = a.xi.unwrap_or_else(|| default_xi(a.s, a.theta, alpha));
        let receipt = p2p_privacy(a.s, a.theta, alpha, xi)?;
        let n = a.n.unwrap_or(a.s);
        ensure!(n >= a.s, "--n must be at least --s");
        let report = binomial_audit(n, a.p, a.theta, receipt.epsilon, receipt.delta, xi)?;
        print_json(&serde_json::json!({ "receipt": receipt, "audit": report }))?;
        report.pass
    };
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn loss_kind(l: LossArg, cap: f64) -> LossKind {
    match l {
        LossArg::Ce => LossKind::CrossEntropy,
        LossArg::TruncCe => LossKind::TruncatedCe { cap },
        LossArg::ZeroOneEval => LossKind::ZeroOne,
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let kind = loss_kind(a.loss, a.cap);
    ensure!(
        kind != LossKind::ZeroOne,
        "zero-one-eval is an evaluation loss; train with ce or trunc-ce and pass it to eval"
    );
    let hp = TrainConfig {
        lr: a.lr,
        epochs: a.epochs,
        batch: a.batch,
        l2: a.l2,
        seed: a.seed,
    };
    let h = match &a.qinv {
        Some(q) => {
            let text = std::fs::read_to_string(q).with_context(|| format!("reading {}", q.display()))?;
            let qf: QinvFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", q.display()))?;
            let schema = CsvSchema {
                num_labels: Some(qf.num_labels),
                read_clusters: true,
                label_names: qf.label_names.clone(),
            };
            let data = load_csv(&a.input, &schema).with_context(|| format!("reading {}", a.input.display()))?;
            let data = match &a.clusters {
                Some(p) => data.without_cluster_column().with_cluster_column(ClusterAssignment::load_csv(p)?.ids().to_vec())?,
                None => data,
            };
            let clustered = ClusteredDataset::from_column(data)
                .with_context(|| "the reweighted loss needs cluster ids: pass --clusters or keep the `cluster` column")?;
            ensure!(
                clustered.num_clusters() <= qf.clusters.len(),
                "{} clusters in the data but {} matrices in {}",
                clustered.num_clusters(),
                qf.clusters.len(),
                q.display()
            );
            train(clustered.data(), Some(clustered.assignment()), &LossSpec::modified(kind, qf.clusters), &hp)?
        }
        None => {
            let data = load(&a.input, a.num_labels)?;
            train(&data, None, &LossSpec::plain(kind), &hp)?
        }
    };
    h.save_json(&a.out)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    n: usize,
    accuracy: f64,
    zero_one_risk: f64,
    cross_entropy: f64,
}

fn eval(a: EvalArgs) -> Result<()> {
    let h = LinearHypothesis::load_json(&a.model)?;
    let schema = CsvSchema {
        num_labels: Some(h.num_labels()),
        read_clusters: false,
        label_names: h.label_names.clone(),
    };
    let test = load_csv(&a.test, &schema).with_context(|| format!("reading {}", a.test.display()))?;
    let zero_one_risk = evaluate(&h, &test, None, &LossSpec::plain(LossKind::ZeroOne))?;
    let r = EvalReport {
        n: test.len(),
        accuracy: 1.0 - zero_one_risk,
        zero_one_risk,
        cross_entropy: evaluate(&h, &test, None, &LossSpec::plain(LossKind::CrossEntropy))?,
    };
    if a.json {
        print_json(&r)?;
    } else {
        println!("n              {}", r.n);
        println!("accuracy       {}", r.accuracy);
        println!("cross_entropy  {}", r.cross_entropy);
    }
    Ok(())
}

fn lap(a: LapArgs) -> Result<()> {
    let grid = parse_epsilon_grid(&a.epsilon_grid)?;
    let root = RngStream::from_seed(a.seed);
    let rows = grid
        .iter()
        .map(|&eps| measure(a.clusters, a.s, a.labels, eps, a.trials, &root.derive(eps.to_bits())))
        .collect::<clusterdp::error::Result<Vec<_>>>()?;
    if a.json {
        print_json(&rows)?;
    } else {
        println!("{:>8} {:>10} {:>10} {:>12} {:>10} {:>10}  ok", "epsilon", "precision", "recall", "product", "bound", "margin");
        for r in &rows {
            println!(
                "{:>8.4} {:>10.5} {:>10.5} {:>12.6} {:>10.5} {:>10.5}  {}",
                r.epsilon, r.precision, r.recall, r.product, r.bound, r.margin, r.pass
            );
        }
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = SweepConfig::load(&a.config)?;
    let r = run_sweep(&cfg, Some(&a.out))?;
    eprintln!("clean baseline accuracy {}", r.baseline_accuracy);
    for g in r.aggregate() {
        eprintln!(
            "{:>8} eps={:<6} clusters={:<4} normalized {:.4} ± {:.4}",
            g.mechanism.name(),
            g.epsilon,
            g.clusters,
            g.mean_normalized,
            g.std_normalized
        );
    }
    Ok(())
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_train: a.n_train,
        n_test: a.n_test,
        dim: a.dim,
        blobs: a.blobs,
        separation: a.separation,
        spread: a.spread,
        label_noise: a.label_noise,
        seed: a.seed,
    };
    let (train_set, test_set) = generate(&cfg)?;
    train_set.save_csv(&a.out_train)?;
    test_set.save_csv(&a.out_test)?;
    Ok(())
}
