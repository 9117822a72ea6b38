//! Cluster-centroid and hard-instance memory banks.
//!
//! Both banks are rebuilt from pseudo labels at the start of every epoch and
//! updated once per iteration after the optimizer step. Neither is touched
//! by backpropagation.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{EmbeddingMatrix, PseudoLabeling};

/// Norm below which a mean vector counts as degenerate.
const DEGENERATE_NORM: f64 = 1e-12;

/// Groups batch rows by cluster id, preserving batch order within a group.
fn group_by_cluster(batch_labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &c) in batch_labels.iter().enumerate() {
        groups.entry(c).or_default().push(row);
    }
    groups
}

fn check_batch(rows: usize, labels: &[usize], clusters: usize) -> Result<()> {
    if rows != labels.len() {
        return Err(Error::Parameter(format!(
            "batch has {rows} embeddings but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= clusters) {
        return Err(Error::Parameter(format!(
            "batch label {bad} is not a valid cluster id (C={clusters})"
        )));
    }
    Ok(())
}

fn mean_of(emb: ArrayView2<'_, f64>, rows: &[usize]) -> Array1<f64> {
    let mut acc = Array1::zeros(emb.ncols());
    for &r in rows {
        acc += &emb.row(r);
    }
    acc / rows.len() as f64
}

/// `C × D` matrix of unit-norm cluster centroids.
#[derive(Debug)]
pub struct ClusterBank {
    centroids: Array2<f64>,
    alpha: f64,
    reads: AtomicU64,
}

impl ClusterBank {
    /// Centroid `i` is the normalized mean of the embeddings labeled `i`.
    pub fn init(emb: &EmbeddingMatrix, labels: &PseudoLabeling, alpha: f64) -> Result<Self> {
        if labels.len() != emb.rows() {
            return Err(Error::Parameter(format!(
                "{} labels for {} embeddings",
                labels.len(),
                emb.rows()
            )));
        }
        if labels.num_clusters() == 0 {
            return Err(Error::Parameter("cannot build a cluster bank with zero clusters".into()));
        }
        let members = labels.members();
        let mut centroids = Array2::zeros((labels.num_clusters(), emb.dims()));
        for (c, rows) in members.iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::Validation(format!("cluster {c} has no members")));
            }
            let mean = mean_of(emb.view(), rows);
            let norm = mean.dot(&mean).sqrt();
            if norm <= DEGENERATE_NORM {
                return Err(Error::DegenerateMean { cluster: c });
            }
            centroids.row_mut(c).assign(&(mean / norm));
        }
        Ok(Self {
            centroids,
            alpha,
            reads: AtomicU64::new(0),
        })
    }

    /// `c ← α c + (1 − α) mean(batch rows of c)`, then renormalized, for
    /// every cluster present in the batch. With `α = 1` nothing changes.
    ///
    /// If the blended vector is (numerically) zero the previous centroid is
    /// kept and a warning is logged.
    pub fn update(&mut self, batch_emb: &EmbeddingMatrix, batch_labels: &[usize]) -> Result<()> {
        check_batch(batch_emb.rows(), batch_labels, self.num_clusters())?;
        if self.alpha == 1.0 {
            return Ok(());
        }
        for (c, rows) in group_by_cluster(batch_labels) {
            let mean = mean_of(batch_emb.view(), &rows);
            let mut row = self.centroids.row_mut(c);
            let blended = &row * self.alpha + &mean * (1.0 - self.alpha);
            let norm = blended.dot(&blended).sqrt();
            if norm <= DEGENERATE_NORM {
                log::warn!("centroid {c} update has zero norm; keeping previous centroid");
                continue;
            }
            row.assign(&(blended / norm));
        }
        Ok(())
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dims(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn centroid(&self, c: usize) -> ArrayView1<'_, f64> {
        self.centroids.row(c)
    }

    pub fn centroids(&self) -> ArrayView2<'_, f64> {
        self.centroids.view()
    }

    /// Marks one read by a loss computation.
    pub(crate) fn record_read(&self) {
        self.reads.fetch_add(1, Ordering::Relaxed);
    }

    /// Number of loss computations that have read this bank.
    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }
}

/// `C × S × D` store of instance features, `S` slots per cluster.
#[derive(Debug)]
pub struct InstanceBank {
    slots: Array3<f64>,
    cursors: Vec<usize>,
    reads: AtomicU64,
}

impl InstanceBank {
    /// Fills each cluster's `S` slots with member embeddings drawn uniformly
    /// without replacement, or with replacement when the cluster has fewer
    /// than `S` members.
    pub fn init(
        emb: &EmbeddingMatrix,
        labels: &PseudoLabeling,
        slots_per_cluster: usize,
        seed: u64,
    ) -> Result<Self> {
        if slots_per_cluster == 0 {
            return Err(Error::Parameter("slots per cluster must be >= 1".into()));
        }
        if labels.len() != emb.rows() {
            return Err(Error::Parameter(format!(
                "{} labels for {} embeddings",
                labels.len(),
                emb.rows()
            )));
        }
        let s = slots_per_cluster;
        let members = labels.members();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut slots = Array3::zeros((labels.num_clusters(), s, emb.dims()));
        for (c, rows) in members.iter().enumerate() {
            let picks: Vec<usize> = if rows.len() >= s {
                index::sample(&mut rng, rows.len(), s).into_iter().map(|i| rows[i]).collect()
            } else {
                (0..s).map(|_| rows[rng.random_range(0..rows.len())]).collect()
            };
            for (k, &r) in picks.iter().enumerate() {
                slots.slice_mut(ndarray::s![c, k, ..]).assign(&emb.row(r));
            }
        }
        Ok(Self {
            slots,
            cursors: vec![0; labels.num_clusters()],
            reads: AtomicU64::new(0),
        })
    }

    /// Replaces the slots of every cluster present in the batch with that
    /// cluster's batch embeddings.
    ///
    /// When a cluster contributes exactly `S` rows, slot `k` receives its
    /// `k`-th row. Otherwise rows are written round-robin from a per-cluster
    /// cursor that persists between calls.
    pub fn update(&mut self, batch_emb: &EmbeddingMatrix, batch_labels: &[usize]) -> Result<()> {
        check_batch(batch_emb.rows(), batch_labels, self.num_clusters())?;
        let s = self.slots_per_cluster();
        for (c, rows) in group_by_cluster(batch_labels) {
            if rows.len() == s {
                for (k, &r) in rows.iter().enumerate() {
                    self.slots.slice_mut(ndarray::s![c, k, ..]).assign(&batch_emb.row(r));
                }
            } else {
                for &r in &rows {
                    let k = self.cursors[c];
                    self.slots.slice_mut(ndarray::s![c, k, ..]).assign(&batch_emb.row(r));
                    self.cursors[c] = (k + 1) % s;
                }
            }
        }
        Ok(())
    }

    pub fn num_clusters(&self) -> usize {
        self.slots.shape()[0]
    }

    pub fn slots_per_cluster(&self) -> usize {
        self.slots.shape()[1]
    }

    pub fn dims(&self) -> usize {
        self.slots.shape()[2]
    }

    /// The `S × D` slots of cluster `c`.
    pub fn cluster_slots(&self, c: usize) -> ArrayView2<'_, f64> {
        self.slots.index_axis(ndarray::Axis(0), c)
    }

    pub fn slot(&self, c: usize, k: usize) -> ArrayView1<'_, f64> {
        self.slots.slice(ndarray::s![c, k, ..])
    }

    pub(crate) fn record_read(&self) {
        self.reads.fetch_add(1, Ordering::Relaxed);
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }
}

/// Slot of `cluster` least similar to `query` (lowest dot product; first
/// slot wins ties).
pub fn select_hard_positive<'a>(
    query: ArrayView1<'_, f64>,
    bank: &'a InstanceBank,
    cluster: usize,
) -> (usize, ArrayView1<'a, f64>) {
    let slots = bank.cluster_slots(cluster);
    let mut best = 0;
    let mut best_sim = f64::INFINITY;
    for (k, slot) in slots.outer_iter().enumerate() {
        let sim = query.dot(&slot);
        if sim < best_sim {
            best = k;
            best_sim = sim;
        }
    }
    (best, bank.slot(cluster, best))
}

/// Slot of `cluster` most similar to `query` (highest dot product; first
/// slot wins ties).
pub fn select_hard_negative<'a>(
    query: ArrayView1<'_, f64>,
    bank: &'a InstanceBank,
    cluster: usize,
) -> (usize, ArrayView1<'a, f64>) {
    let slots = bank.cluster_slots(cluster);
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (k, slot) in slots.outer_iter().enumerate() {
        let sim = query.dot(&slot);
        if sim > best_sim {
            best = k;
            best_sim = sim;
        }
    }
    (best, bank.slot(cluster, best))
}
