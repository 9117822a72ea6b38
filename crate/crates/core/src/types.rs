use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Epsilon added under the square root when normalizing vectors.
pub const NORM_EPS: f64 = 1e-12;

/// Allowed deviation of a stored row norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// One raw observation: an input feature vector plus its metadata.
///
/// `identity` is ground truth. Only the evaluator and the synthetic
/// generator look at it; training goes through [`UnlabeledSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub feature: Vec<f32>,
    pub identity: i64,
    pub camera: u32,
}

impl Sample {
    pub fn new(feature: Vec<f32>, identity: i64, camera: u32) -> Self {
        Self {
            feature,
            identity,
            camera,
        }
    }
}

/// Checks that every sample has the same, finite, feature dimension and
/// returns it (`None` for an empty list).
pub fn common_dim(samples: &[Sample]) -> Result<Option<usize>> {
    let Some(first) = samples.first() else {
        return Ok(None);
    };
    let dim = first.feature.len();
    for (i, s) in samples.iter().enumerate() {
        if s.feature.len() != dim {
            return Err(Error::Validation(format!(
                "sample {i} has {} features, expected {dim}",
                s.feature.len()
            )));
        }
        if s.feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "sample {i} has a non-finite feature"
            )));
        }
    }
    Ok(Some(dim))
}

/// Features and cameras of a training set with identities stripped.
///
/// This is the only view of the data the trainer accepts, so pseudo labels
/// are the sole supervision signal it can ever see.
#[derive(Debug, Clone)]
pub struct UnlabeledSet {
    features: Array2<f64>,
    cameras: Vec<u32>,
}

impl UnlabeledSet {
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let dim = common_dim(samples)?.unwrap_or(0);
        let mut features = Array2::zeros((samples.len(), dim));
        for (mut row, s) in features.outer_iter_mut().zip(samples) {
            for (dst, &src) in row.iter_mut().zip(&s.feature) {
                *dst = f64::from(src);
            }
        }
        Ok(Self {
            features,
            cameras: samples.iter().map(|s| s.camera).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn cameras(&self) -> &[u32] {
        &self.cameras
    }
}

/// Converts samples to an `N × D_in` f64 matrix.
pub fn feature_matrix(samples: &[Sample]) -> Result<Array2<f64>> {
    Ok(UnlabeledSet::from_samples(samples)?.features)
}

/// Row-wise L2 normalization `v / sqrt(|v|^2 + eps)`.
pub fn normalize_rows(data: &mut Array2<f64>) {
    for mut row in data.outer_iter_mut() {
        let norm = (row.dot(&row) + NORM_EPS).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
}

/// `N × D` matrix whose rows are unit-norm embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
}

impl EmbeddingMatrix {
    /// Wraps `data`, checking that every row is finite and unit-norm.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        for (i, row) in data.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("embedding row {i} is not finite")));
            }
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Numeric(format!(
                    "embedding row {i} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self { data })
    }

    /// Normalizes each row of `data` and wraps the result.
    pub fn normalized(mut data: Array2<f64>) -> Result<Self> {
        normalize_rows(&mut data);
        Self::new(data)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dims(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    /// Gathers the given rows (repeats allowed) into a new matrix.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(0), indices),
        }
    }
}

/// Per-sample cluster assignment; `None` marks an outlier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabeling {
    assignment: Vec<Option<usize>>,
    num_clusters: usize,
}

impl PseudoLabeling {
    pub fn new(assignment: Vec<Option<usize>>, num_clusters: usize) -> Result<Self> {
        let mut counts = vec![0usize; num_clusters];
        for (i, label) in assignment.iter().enumerate() {
            if let Some(c) = *label {
                if c >= num_clusters {
                    return Err(Error::Validation(format!(
                        "sample {i} has cluster id {c} but only {num_clusters} clusters exist"
                    )));
                }
                counts[c] += 1;
            }
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Validation(format!("cluster {c} has no members")));
        }
        Ok(Self {
            assignment,
            num_clusters,
        })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[Option<usize>] {
        &self.assignment
    }

    pub fn num_outliers(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_none()).count()
    }

    /// Member indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, label) in self.assignment.iter().enumerate() {
            if let Some(c) = *label {
                out[c].push(i);
            }
        }
        out
    }

    /// Assignment with `-1` for outliers, as written to CSV.
    pub fn to_signed(&self) -> Vec<i64> {
        self.assignment
            .iter()
            .map(|a| a.map_or(-1, |c| c as i64))
            .collect()
    }
}
