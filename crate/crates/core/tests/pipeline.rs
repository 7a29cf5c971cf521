//! End-to-end runs through clustering, privatization and training.

use clusterdp::central::{preset_cluster_rr, preset_uniform_rr, run_central, CentralParams, NoiseScale, QinvFile};
use clusterdp::clustering::{kmeans, ClusteredDataset, KMeansConfig};
use clusterdp::learner::{accuracy, train, LossKind, LossSpec, TrainConfig};
use clusterdp::metrics::empirical_heterogeneity_report;
use clusterdp::p2p::{run_p2p, P2PParams};
use clusterdp::rng::RngStream;
use clusterdp::synthetic::{generate, SyntheticConfig};

fn blobs(blobs: usize) -> (ClusteredDataset, clusterdp::data::LabeledDataset) {
    let cfg = SyntheticConfig {
        n_train: 1500,
        n_test: 500,
        dim: 8,
        blobs,
        separation: 4.0,
        ..Default::default()
    };
    let (train_set, test_set) = generate(&cfg).unwrap();
    let km = kmeans(&train_set, &KMeansConfig::new(blobs), &RngStream::from_seed(1)).unwrap();
    (ClusteredDataset::new(train_set, km.assignment).unwrap(), test_set)
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 15,
        ..Default::default()
    }
}

#[test]
fn well_separated_blobs_cluster_nearly_pure() {
    let (data, _) = blobs(5);
    let r = empirical_heterogeneity_report(&data).unwrap();
    // 5% noise over other labels alone gives about 0.95 * 0.1 + 0.05 * 1.9 = 0.19.
    assert!(r.phi_proxy < 0.25, "{}", r.phi_proxy);
}

#[test]
fn cluster_rr_beats_uniform_rr_on_pure_clusters() {
    let (data, test) = blobs(5);
    let k = data.num_labels();
    let arms = [preset_uniform_rr(0.5, k).unwrap(), preset_cluster_rr(0.5, 0.01, k).unwrap()];
    let accs: Vec<f64> = arms
        .iter()
        .map(|p| {
            let out = run_central(&data, p, &RngStream::from_seed(2)).unwrap();
            let h = train(&out.noisy_data, None, &LossSpec::plain(LossKind::CrossEntropy), &quick()).unwrap();
            accuracy(&h, &test).unwrap()
        })
        .collect();
    assert!(accs[1] > accs[0] + 0.05, "{accs:?}");
}

#[test]
fn reweighted_loss_trains_on_noisy_labels() {
    let (data, test) = blobs(4);
    let k = data.num_labels();
    let p = CentralParams::new(1.0 / k as f64, NoiseScale::Infinite, 0.5, 0.5).unwrap();
    let out = run_central(&data, &p, &RngStream::from_seed(3)).unwrap();
    let spec = LossSpec::modified(LossKind::CrossEntropy, out.per_cluster_qinv.clone());
    let h = train(&out.noisy_data, Some(data.assignment()), &spec, &quick()).unwrap();
    let acc = accuracy(&h, &test).unwrap();
    assert!(acc > 0.8, "{acc}");
}

#[test]
fn qinv_file_round_trips() {
    let (data, _) = blobs(3);
    let p = preset_cluster_rr(1.0, 0.05, data.num_labels()).unwrap();
    let out = run_central(&data, &p, &RngStream::from_seed(4)).unwrap();
    let f = QinvFile::from_output(&out, &p);
    let text = serde_json::to_string(&f).unwrap();
    let back: QinvFile = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
    assert_eq!(back.clusters.len(), 3);
}

#[test]
fn central_run_is_reproducible() {
    let (data, _) = blobs(3);
    let p = preset_uniform_rr(1.0, data.num_labels()).unwrap();
    let a = run_central(&data, &p, &RngStream::from_seed(5)).unwrap();
    let b = run_central(&data, &p, &RngStream::from_seed(5)).unwrap();
    let c = run_central(&data, &p, &RngStream::from_seed(6)).unwrap();
    assert_eq!(a.noisy_data.labels(), b.noisy_data.labels());
    assert_ne!(a.noisy_data.labels(), c.noisy_data.labels());
}

#[test]
fn p2p_reports_subsample_of_each_cluster() {
    let (train_set, _) = generate(&SyntheticConfig {
        n_train: 2000,
        n_test: 10,
        blobs: 2,
        dim: 3,
        separation: 3.0,
        ..Default::default()
    })
    .unwrap();
    let km = kmeans(&train_set, &KMeansConfig::new(2), &RngStream::from_seed(0)).unwrap();
    let data = ClusteredDataset::new(train_set, km.assignment).unwrap();
    let s = data.assignment().min_cluster_size();
    let p = P2PParams::new(0.2, 0.5, 2.0, s).unwrap();
    let out = run_p2p(&data, &p, &RngStream::from_seed(1)).unwrap();
    out.trace.verify().unwrap();
    // Inclusion is an independent coin per user, so the count is Binomial(n, theta).
    let n = data.data().len() as f64;
    let got = out.included.len() as f64;
    assert!((got - 0.5 * n).abs() < 4.0 * (0.25 * n).sqrt(), "{got} of {n}");
    assert_eq!(out.noisy_data.len(), out.included.len());
    assert!(out.receipt.is_finite());
}
