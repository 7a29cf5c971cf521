//! k-means clustering and the example-to-cluster assignment every mechanism
//! consumes.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::dist::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Which cluster each example belongs to, with cached cluster sizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    cluster_of: Vec<usize>,
    sizes: Vec<usize>,
}

impl ClusterAssignment {
    /// Clusters `0..num_clusters`; ids outside that range are rejected.
    /// Clusters with no members are allowed here and rejected by the
    /// mechanisms that need them populated.
    pub fn new(cluster_of: Vec<usize>, num_clusters: usize) -> Result<Self> {
        if cluster_of.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sizes = vec![0usize; num_clusters];
        for (i, &c) in cluster_of.iter().enumerate() {
            if c >= num_clusters {
                return Err(Error::BadClusterId {
                    row: i,
                    value: c.to_string(),
                });
            }
            sizes[c] += 1;
        }
        Ok(Self { cluster_of, sizes })
    }

    /// Number of clusters is taken as the largest id plus one.
    pub fn from_ids(cluster_of: Vec<usize>) -> Result<Self> {
        let num_clusters = cluster_of.iter().max().map_or(0, |m| m + 1);
        Self::new(cluster_of, num_clusters)
    }

    pub fn len(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster_of.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.cluster_of[i]
    }

    pub fn ids(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Example indices of each cluster, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members: Vec<Vec<usize>> = self.sizes.iter().map(|&n| Vec::with_capacity(n)).collect();
        for (i, &c) in self.cluster_of.iter().enumerate() {
            members[c].push(i);
        }
        members
    }

    pub fn min_cluster_size(&self) -> usize {
        self.sizes.iter().copied().min().unwrap_or(0)
    }

    pub fn require_nonempty(&self) -> Result<()> {
        match self.sizes.iter().position(|&n| n == 0) {
            Some(c) => Err(Error::EmptyCluster(c)),
            None => Ok(()),
        }
    }

    /// Fails with the first cluster whose size is below `required`.
    pub fn require_min_size(&self, required: f64) -> Result<()> {
        match self.sizes.iter().position(|&n| (n as f64) < required) {
            Some(c) => Err(Error::ClusterTooSmall {
                cluster: c,
                size: self.sizes[c],
                required,
            }),
            None => Ok(()),
        }
    }

    /// Single-column CSV with header `cluster`, one row per example.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cluster"])?;
        for c in &self.cluster_of {
            w.write_record([c.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let col = rdr
            .headers()?
            .iter()
            .position(|h| h.trim() == "cluster")
            .ok_or_else(|| Error::MissingColumn("cluster".into()))?;
        let mut ids = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let cell = rec.get(col).unwrap_or("").trim();
            ids.push(cell.parse::<usize>().map_err(|_| Error::BadClusterId {
                row,
                value: cell.to_string(),
            })?);
        }
        Self::from_ids(ids)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }

    /// True when both assignments induce the same partition of the examples,
    /// whatever the cluster numbering.
    pub fn same_partition(&self, other: &ClusterAssignment) -> bool {
        if self.len() != other.len() {
            return false;
        }
        let mut fwd = vec![usize::MAX; self.num_clusters()];
        let mut back = vec![usize::MAX; other.num_clusters()];
        for (&a, &b) in self.cluster_of.iter().zip(&other.cluster_of) {
            if fwd[a] == usize::MAX && back[b] == usize::MAX {
                fwd[a] = b;
                back[b] = a;
            } else if fwd[a] != b || back[b] != a {
                return false;
            }
        }
        true
    }
}

pub fn min_cluster_size(assignment: &ClusterAssignment) -> usize {
    assignment.min_cluster_size()
}

/// A dataset together with the cluster of each example.
#[derive(Clone, Debug)]
pub struct ClusteredDataset {
    data: LabeledDataset,
    assignment: ClusterAssignment,
}

impl ClusteredDataset {
    pub fn new(data: LabeledDataset, assignment: ClusterAssignment) -> Result<Self> {
        if assignment.len() != data.len() {
            return Err(Error::LengthMismatch {
                expected: data.len(),
                got: assignment.len(),
            });
        }
        Ok(Self { data, assignment })
    }

    /// Uses the `cluster` column the dataset was loaded with.
    pub fn from_column(data: LabeledDataset) -> Result<Self> {
        let ids = data
            .cluster_column()
            .ok_or_else(|| Error::MissingColumn("cluster".into()))?
            .to_vec();
        let assignment = ClusterAssignment::from_ids(ids)?;
        Self::new(data, assignment)
    }

    pub fn data(&self) -> &LabeledDataset {
        &self.data
    }

    pub fn assignment(&self) -> &ClusterAssignment {
        &self.assignment
    }

    pub fn num_clusters(&self) -> usize {
        self.assignment.num_clusters()
    }

    pub fn num_labels(&self) -> usize {
        self.data.num_labels()
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.assignment.cluster_of(i)
    }

    /// Empirical label distribution of every cluster; fails on the first empty one.
    pub fn empirical_distributions(&self) -> Result<Vec<DiscreteDistribution>> {
        self.assignment.require_nonempty()?;
        let k = self.data.num_labels();
        let mut counts = vec![vec![0usize; k]; self.num_clusters()];
        for (i, &y) in self.data.labels().iter().enumerate() {
            counts[self.cluster_of(i)][y] += 1;
        }
        counts
            .into_iter()
            .zip(self.assignment.sizes())
            .map(|(row, &n)| DiscreteDistribution::new(row.into_iter().map(|c| c as f64 / n as f64).collect()))
            .collect()
    }
}

pub fn attach_clusters(data: LabeledDataset, assignment: ClusterAssignment) -> Result<ClusteredDataset> {
    ClusteredDataset::new(data, assignment)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// D^2 sampling.
    #[default]
    PlusPlus,
    /// `k` distinct points chosen uniformly.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    pub init: Initialization,
}

impl KMeansConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iters: 100,
            tol: 1e-6,
            init: Initialization::PlusPlus,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KMeans {
    pub assignment: ClusterAssignment,
    /// Row-major `k x d`.
    pub centroids: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared distances to the assigned centroid after every
    /// assignment step, final assignment included.
    pub objective_history: Vec<f64>,
}

/// Lloyd's algorithm over the dataset's features.
pub fn kmeans(data: &LabeledDataset, config: &KMeansConfig, rng: &RngStream) -> Result<KMeans> {
    kmeans_flat(data.features_flat(), data.dim(), config, rng)
}

/// Lloyd's algorithm over row-major `n x dim` points.
pub fn kmeans_flat(points: &[f64], dim: usize, config: &KMeansConfig, rng: &RngStream) -> Result<KMeans> {
    if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
        return Err(Error::EmptyDataset);
    }
    let n = points.len() / dim;
    let k = config.k;
    if k < 1 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    if config.max_iters < 1 {
        return Err(Error::param("max_iters", "at least one iteration is required"));
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut centroids = initial_centroids(points, dim, k, config.init, rng);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut assign;
    loop {
        let (a, objective) = assign_points(points, dim, &mut centroids, k);
        assign = a;
        history.push(objective);
        if iterations == config.max_iters || converged {
            break;
        }
        iterations += 1;

        let mut next = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (acc, x) in next[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *acc += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let row = &mut next[c * dim..(c + 1) * dim];
            row.iter_mut().for_each(|x| *x /= counts[c] as f64);
            shift = shift.max(sq_dist(row, &centroids[c * dim..(c + 1) * dim]).sqrt());
        }
        centroids = next;
        converged = shift < config.tol;
    }

    Ok(KMeans {
        assignment: ClusterAssignment::new(assign, k)?,
        centroids,
        iterations,
        converged,
        objective_history: history,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn initial_centroids(points: &[f64], dim: usize, k: usize, init: Initialization, rng: &RngStream) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = rng.rng();
    let chosen: Vec<usize> = match init {
        Initialization::Random => index::sample(&mut rng, n, k).into_vec(),
        Initialization::PlusPlus => {
            let mut chosen = vec![rng.random_range(0..n)];
            let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(chosen[0]))).collect();
            while chosen.len() < k {
                let total: f64 = d2.iter().sum();
                let next = if total > 0.0 {
                    let target = rng.random::<f64>() * total;
                    let mut acc = 0.0;
                    let mut pick = None;
                    for (i, &w) in d2.iter().enumerate() {
                        acc += w;
                        if w > 0.0 && target < acc {
                            pick = Some(i);
                            break;
                        }
                    }
                    pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive total"))
                } else {
                    // every point coincides with a chosen centre
                    let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
                    free[rng.random_range(0..free.len())]
                };
                chosen.push(next);
                for (i, d) in d2.iter_mut().enumerate() {
                    *d = d.min(sq_dist(point(i), point(next)));
                }
            }
            chosen
        }
    };
    chosen.iter().flat_map(|&i| point(i).iter().copied()).collect()
}

/// Nearest-centroid assignment, then repair of empty clusters by moving
/// each empty centroid onto the point farthest from its own centroid.
fn assign_points(points: &[f64], dim: usize, centroids: &mut [f64], k: usize) -> (Vec<usize>, f64) {
    let n = points.len() / dim;
    let nearest: Vec<(usize, f64)> = {
        let centroids = &*centroids;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let p = &points[i * dim..(i + 1) * dim];
                let mut best = (0, f64::INFINITY);
                for c in 0..k {
                    let d = sq_dist(p, &centroids[c * dim..(c + 1) * dim]);
                    if d < best.1 {
                        best = (c, d);
                    }
                }
                best
            })
            .collect()
    };
    let (mut assign, mut dist): (Vec<usize>, Vec<f64>) = nearest.into_iter().unzip();

    let mut counts = vec![0usize; k];
    for &c in &assign {
        counts[c] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        // pigeonhole: with k <= n some cluster holds at least two points
        let far = (0..n)
            .filter(|&i| counts[assign[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n");
        counts[assign[far]] -= 1;
        counts[empty] += 1;
        assign[far] = empty;
        dist[far] = 0.0;
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(&points[far * dim..(far + 1) * dim]);
    }
    (assign, dist.iter().sum())
}
