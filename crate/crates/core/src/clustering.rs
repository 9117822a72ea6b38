//! Pseudo-label generation.
//!
//! Embeddings are compared with Euclidean distance, each sample's
//! k-reciprocal neighbor set is built from it, sets are compared with the
//! Jaccard distance, and DBSCAN runs on the resulting precomputed matrix.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{EmbeddingMatrix, PseudoLabeling};

/// Square, symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    data: Array2<f64>,
}

impl DistanceMatrix {
    /// Validates symmetry (within 1e-9), zero diagonal and non-negative
    /// finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let n = data.nrows();
        if data.ncols() != n {
            return Err(Error::Validation(format!(
                "distance matrix must be square, got {n}x{}",
                data.ncols()
            )));
        }
        for i in 0..n {
            if data[[i, i]] != 0.0 {
                return Err(Error::Validation(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..i {
                let (a, b) = (data[[i, j]], data[[j, i]]);
                if !(a.is_finite() && a >= 0.0) || (a - b).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "entries ({i},{j})={a} and ({j},{i})={b} are not a valid distance pair"
                    )));
                }
            }
        }
        Ok(Self { data })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }
}

/// `(i, j) -> ||row_i - row_j||`, computed from coordinate differences.
pub fn pairwise_euclidean(emb: &EmbeddingMatrix) -> DistanceMatrix {
    let n = emb.rows();
    let view = emb.view();
    let mut data = Array2::zeros((n, n));
    data.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut out)| {
            let a = view.row(i);
            for j in 0..n {
                if j != i {
                    let b = view.row(j);
                    let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                    out[j] = sq.sqrt();
                }
            }
        });
    DistanceMatrix { data }
}

/// Indices of the `k` nearest neighbors of every sample, self excluded,
/// ordered by (distance, index).
pub fn k_nearest(dist: &DistanceMatrix, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = dist.len();
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!(
            "k must satisfy 1 <= k < n, got k={k} with n={n}"
        )));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let row = dist.data.row(i);
            let by_distance = |a: &usize, b: &usize| row[*a].total_cmp(&row[*b]).then(a.cmp(b));
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.select_nth_unstable_by(k - 1, by_distance);
            others.truncate(k);
            others.sort_by(by_distance);
            others
        })
        .collect())
}

/// `R(i) = { j in kNN(i) : i in kNN(j) }`, each set sorted ascending.
pub fn k_reciprocal_neighbors(dist: &DistanceMatrix, k: usize) -> Result<Vec<Vec<usize>>> {
    let knn = k_nearest(dist, k)?;
    let sorted: Vec<Vec<usize>> = knn
        .iter()
        .map(|set| {
            let mut s = set.clone();
            s.sort_unstable();
            s
        })
        .collect();
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, set)| {
            set.iter()
                .copied()
                .filter(|&j| sorted[j].binary_search(&i).is_ok())
                .collect()
        })
        .collect())
}

/// `1 - |S_i ∩ S_j| / |S_i ∪ S_j|` where `S_i = sets[i] ∪ {i}`.
pub fn jaccard_distance(sets: &[Vec<usize>]) -> Result<DistanceMatrix> {
    let n = sets.len();
    let mut full: Vec<Vec<usize>> = Vec::with_capacity(n);
    for (i, set) in sets.iter().enumerate() {
        if let Some(&bad) = set.iter().find(|&&j| j >= n) {
            return Err(Error::Parameter(format!(
                "neighbor set {i} references index {bad} outside 0..{n}"
            )));
        }
        let mut s = set.clone();
        s.push(i);
        s.sort_unstable();
        s.dedup();
        full.push(s);
    }
    // members[m] = every i whose set contains m
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, s) in full.iter().enumerate() {
        for &m in s {
            members[m].push(i);
        }
    }

    let mut data = Array2::from_elem((n, n), 1.0);
    data.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut out)| {
            let mut shared = vec![0usize; n];
            for &m in &full[i] {
                for &j in &members[m] {
                    shared[j] += 1;
                }
            }
            for (j, &inter) in shared.iter().enumerate() {
                if inter > 0 {
                    let union = full[i].len() + full[j].len() - inter;
                    out[j] = 1.0 - inter as f64 / union as f64;
                }
            }
            out[i] = 0.0;
        });
    Ok(DistanceMatrix { data })
}

/// `(1 - w) * primary + w * secondary`, entrywise.
pub fn blend(primary: &DistanceMatrix, secondary: &DistanceMatrix, w: f64) -> Result<DistanceMatrix> {
    if primary.len() != secondary.len() {
        return Err(Error::Parameter("blended matrices differ in size".into()));
    }
    if w == 0.0 {
        return Ok(primary.clone());
    }
    let data = &primary.data * (1.0 - w) + &secondary.data * w;
    Ok(DistanceMatrix { data })
}

/// DBSCAN on a precomputed distance matrix.
///
/// A point is core when at least `min_pts` other points lie within `eps`
/// (inclusive). Clusters are grown from cores in ascending index order and
/// a border point belongs to the first cluster that reaches it.
pub fn dbscan(dist: &DistanceMatrix, eps: f64, min_pts: usize) -> Result<PseudoLabeling> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Parameter(format!("eps must be > 0, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::Parameter("min_pts must be >= 1".into()));
    }
    let n = dist.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let row = dist.data.row(i);
            (0..n).filter(|&j| j != i && row[j] <= eps).collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0usize;
    let mut stack = Vec::new();
    for seed in 0..n {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        let cluster = next;
        next += 1;
        labels[seed] = Some(cluster);
        stack.push(seed);
        while let Some(p) = stack.pop() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(cluster);
                    if core[q] {
                        stack.push(q);
                    }
                }
            }
        }
    }
    PseudoLabeling::new(labels, next)
}

/// Parameters of the full embedding → pseudo-label pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub k: usize,
    pub eps: f64,
    pub min_pts: usize,
    pub euclidean_blend: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            k: 30,
            eps: 0.45,
            min_pts: 4,
            euclidean_blend: 0.0,
        }
    }
}

/// Euclidean → k-reciprocal → Jaccard (optionally blended) → DBSCAN.
///
/// `k` is clamped to `n - 1` for small inputs.
pub fn pseudo_labels(emb: &EmbeddingMatrix, params: &ClusterParams) -> Result<PseudoLabeling> {
    let n = emb.rows();
    if n < 2 {
        return PseudoLabeling::new(vec![None; n], 0);
    }
    let k = params.k.min(n - 1);
    if k != params.k {
        log::debug!("clamping k-reciprocal k from {} to {k} for {n} samples", params.k);
    }
    let euclid = pairwise_euclidean(emb);
    let sets = k_reciprocal_neighbors(&euclid, k)?;
    let jaccard = jaccard_distance(&sets)?;
    let dist = blend(&jaccard, &euclid, params.euclidean_blend)?;
    dbscan(&dist, params.eps, params.min_pts)
}
