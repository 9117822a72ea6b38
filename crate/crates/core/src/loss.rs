//! Contrastive losses over the memory banks and their gradients with
//! respect to the query embedding.
//!
//! All losses share one kernel: a temperature-scaled softmax cross-entropy
//! over a set of keys with one designated positive. Bank entries are
//! constants as far as differentiation is concerned, and hard-sample
//! selection is treated as fixed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::memory::{select_hard_negative, select_hard_positive, ClusterBank, InstanceBank};
use crate::types::EmbeddingMatrix;

/// Loss value and its gradient with respect to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_query: Array1<f64>,
}

impl LossOutput {
    pub fn zero(dims: usize) -> Self {
        Self {
            value: 0.0,
            grad_query: Array1::zeros(dims),
        }
    }
}

/// `-log softmax(keys · query / tau)[positive]`.
///
/// The gradient is `(Σ p_i key_i − key_positive) / tau`.
pub fn softmax_contrastive(
    query: ArrayView1<'_, f64>,
    keys: ArrayView2<'_, f64>,
    positive: usize,
    tau: f64,
) -> Result<LossOutput> {
    let m = keys.nrows();
    if m == 0 {
        return Err(Error::Parameter("at least one key is required".into()));
    }
    if positive >= m {
        return Err(Error::Parameter(format!("positive index {positive} out of range for {m} keys")));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Parameter(format!("temperature must be > 0, got {tau}")));
    }
    if keys.ncols() != query.len() {
        return Err(Error::Parameter(format!(
            "query has {} dims but keys have {}",
            query.len(),
            keys.ncols()
        )));
    }

    let logits = keys.dot(&query) / tau;
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp = logits.mapv(|l| (l - max).exp());
    let sum = exp.sum();
    let value = (max + sum.ln() - logits[positive]).max(0.0);
    let probs = exp / sum;

    let mut grad = probs.dot(&keys);
    grad -= &keys.row(positive);
    grad /= tau;
    Ok(LossOutput {
        value,
        grad_query: grad,
    })
}

/// Centroid contrast: keys are all centroids, the positive is the query's
/// own cluster.
pub fn cluster_loss(
    query: ArrayView1<'_, f64>,
    bank: &ClusterBank,
    own_cluster: usize,
    tau_c: f64,
) -> Result<LossOutput> {
    bank.record_read();
    softmax_contrastive(query, bank.centroids(), own_cluster, tau_c)
}

/// One key per cluster: the hardest positive from the query's own cluster
/// and the hardest negative from every other cluster.
pub fn hard_keys(query: ArrayView1<'_, f64>, bank: &InstanceBank, own_cluster: usize) -> Array2<f64> {
    let c = bank.num_clusters();
    let mut keys = Array2::zeros((c, bank.dims()));
    for i in 0..c {
        let (_, feat) = if i == own_cluster {
            select_hard_positive(query, bank, i)
        } else {
            select_hard_negative(query, bank, i)
        };
        keys.row_mut(i).assign(&feat);
    }
    keys
}

/// Hard-instance contrast over the keys from [`hard_keys`].
pub fn hard_instance_loss(
    query: ArrayView1<'_, f64>,
    bank: &InstanceBank,
    own_cluster: usize,
    tau_ins: f64,
) -> Result<LossOutput> {
    if own_cluster >= bank.num_clusters() {
        return Err(Error::Parameter(format!(
            "cluster {own_cluster} out of range for {} clusters",
            bank.num_clusters()
        )));
    }
    bank.record_read();
    let keys = hard_keys(query, bank, own_cluster);
    softmax_contrastive(query, keys.view(), own_cluster, tau_ins)
}

/// `mu * cls + (1 - mu) * ins`, value and gradient alike.
pub fn hybrid_loss(cls: &LossOutput, ins: &LossOutput, mu: f64) -> LossOutput {
    LossOutput {
        value: mu * cls.value + (1.0 - mu) * ins.value,
        grad_query: &cls.grad_query * mu + &ins.grad_query * (1.0 - mu),
    }
}

/// Settings for [`batch_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mu: f64,
    pub tau_c: f64,
    pub tau_ins: f64,
}

/// Mean losses over a batch and the per-row gradient of the mean hybrid
/// loss with respect to each embedding.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub value: f64,
    pub cluster: f64,
    pub instance: f64,
    pub grad: Array2<f64>,
}

/// Evaluates the hybrid loss for every row of `emb` against the current
/// banks. A branch whose weight is zero is not evaluated and its bank is
/// not read; its reported mean is 0.
pub fn batch_loss(
    emb: &EmbeddingMatrix,
    labels: &[usize],
    cluster_bank: &ClusterBank,
    instance_bank: &InstanceBank,
    w: &LossWeights,
) -> Result<BatchLoss> {
    let b = emb.rows();
    if b == 0 || labels.len() != b {
        return Err(Error::Parameter(format!("batch of {b} rows with {} labels", labels.len())));
    }
    let d = emb.dims();
    let use_cls = w.mu > 0.0;
    let use_ins = w.mu < 1.0;

    let per_row: Vec<(LossOutput, f64, f64)> = (0..b)
        .into_par_iter()
        .map(|r| {
            let q = emb.row(r);
            let cls = if use_cls {
                cluster_loss(q, cluster_bank, labels[r], w.tau_c)?
            } else {
                LossOutput::zero(d)
            };
            let ins = if use_ins {
                hard_instance_loss(q, instance_bank, labels[r], w.tau_ins)?
            } else {
                LossOutput::zero(d)
            };
            let (cv, iv) = (cls.value, ins.value);
            Ok((hybrid_loss(&cls, &ins, w.mu), cv, iv))
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / b as f64;
    let mut grad = Array2::zeros((b, d));
    let (mut value, mut cluster, mut instance) = (0.0, 0.0, 0.0);
    for (r, (out, cv, iv)) in per_row.iter().enumerate() {
        value += out.value;
        cluster += cv;
        instance += iv;
        grad.row_mut(r).assign(&(&out.grad_query * scale));
    }
    Ok(BatchLoss {
        value: value * scale,
        cluster: cluster * scale,
        instance: instance * scale,
        grad,
    })
}
