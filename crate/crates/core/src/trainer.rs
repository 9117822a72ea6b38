//! Epoch loop: embed → cluster → build banks → PK batches with the hybrid
//! loss, backward, Adam, then bank updates.

use std::time::Instant;

use ndarray::{concatenate, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{pseudo_labels, ClusterParams};
use crate::config::TrainConfig;
use crate::encoder::{adam_step, EncoderModel, OptimizerState};
use crate::error::{Error, Result};
use crate::loss::{batch_loss, LossWeights};
use crate::memory::{ClusterBank, InstanceBank};
use crate::sampler::build_epoch_batches;
use crate::types::{EmbeddingMatrix, UnlabeledSet};

/// Rows per forward pass in [`embed_all`].
pub const EMBED_CHUNK: usize = 256;

/// Consecutive epochs without any cluster before training gives up.
pub const MAX_EMPTY_EPOCHS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub num_clusters: usize,
    pub num_outliers: usize,
    /// Mean hybrid loss over the epoch's iterations (0 if none ran).
    pub loss: f64,
    pub loss_cls: f64,
    pub loss_ins: f64,
    pub iterations: usize,
    pub seconds: f64,
}

/// Observable steps of the training loop, in the order they happen.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    EpochStart { epoch: usize },
    Clustered { epoch: usize, num_clusters: usize, num_outliers: usize },
    EpochSkipped { epoch: usize, num_clusters: usize },
    BanksInitialized { epoch: usize },
    /// The centroid loss read the cluster bank `reads` times this iteration.
    ClusterLossRead { iteration: usize, reads: u64 },
    InstanceLossRead { iteration: usize, reads: u64 },
    /// `loss` is the batch loss that produced this step.
    OptimizerStep { iteration: usize, step: u64, loss: f64 },
    ClusterBankWrite { iteration: usize },
    InstanceBankWrite { iteration: usize },
    EpochEnd(EpochReport),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    pub optimizer: OptimizerState,
    pub reports: Vec<EpochReport>,
}

/// Embeds every row of `features`, [`EMBED_CHUNK`] rows at a time.
pub fn embed_all(model: &EncoderModel, features: ArrayView2<'_, f64>) -> Result<EmbeddingMatrix> {
    embed_all_chunked(model, features, EMBED_CHUNK)
}

pub fn embed_all_chunked(model: &EncoderModel, features: ArrayView2<'_, f64>, chunk: usize) -> Result<EmbeddingMatrix> {
    if features.nrows() == 0 {
        return model.embed(features);
    }
    let parts = features
        .axis_chunks_iter(Axis(0), chunk.max(1))
        .map(|c| model.embed(c).map(EmbeddingMatrix::into_inner))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let stacked = concatenate(Axis(0), &views).expect("chunks share a width");
    EmbeddingMatrix::new(stacked)
}

pub fn train(data: &UnlabeledSet, cfg: &TrainConfig, model: EncoderModel) -> Result<TrainOutcome> {
    train_with_observer(data, cfg, model, &mut |_| {})
}

/// [`train`], reporting every [`TrainEvent`] to `observer`.
pub fn train_with_observer(
    data: &UnlabeledSet,
    cfg: &TrainConfig,
    mut model: EncoderModel,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::Parameter(format!("need at least 2 training samples, got {}", data.len())));
    }
    if data.dim() != model.input_dim() {
        return Err(Error::Parameter(format!(
            "features have {} dims, encoder expects {}",
            data.dim(),
            model.input_dim()
        )));
    }

    let cluster_params = ClusterParams {
        k: cfg.kreciprocal_k,
        eps: cfg.dbscan_eps,
        min_pts: cfg.dbscan_min_pts,
        euclidean_blend: cfg.euclidean_blend,
    };
    let weights = LossWeights {
        mu: cfg.mu,
        tau_c: cfg.tau_c,
        tau_ins: cfg.tau_ins,
    };
    let mut optimizer = OptimizerState::new(
        model.params().len(),
        cfg.lr,
        cfg.weight_decay,
        cfg.lr_decay_factor,
        cfg.lr_decay_every as u64,
    );
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let features = data.features();
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut empty_streak = 0;
    let mut iteration = 0usize;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let bank_seed = seeds.next_u64();
        let batch_seed = seeds.next_u64();
        observer(&TrainEvent::EpochStart { epoch });

        let emb = embed_all(&model, features)?;
        let labels = pseudo_labels(&emb, &cluster_params)?;
        let c = labels.num_clusters();
        observer(&TrainEvent::Clustered {
            epoch,
            num_clusters: c,
            num_outliers: labels.num_outliers(),
        });

        let mut report = EpochReport {
            epoch,
            num_clusters: c,
            num_outliers: labels.num_outliers(),
            loss: 0.0,
            loss_cls: 0.0,
            loss_ins: 0.0,
            iterations: 0,
            seconds: 0.0,
        };

        empty_streak = if c == 0 { empty_streak + 1 } else { 0 };
        if empty_streak >= MAX_EMPTY_EPOCHS {
            return Err(Error::ClusteringCollapse(format!(
                "no clusters for {MAX_EMPTY_EPOCHS} consecutive epochs (last epoch {epoch}: \
                 {} samples, all outliers; eps={}, min_pts={})",
                labels.len(),
                cfg.dbscan_eps,
                cfg.dbscan_min_pts
            )));
        }
        if c < cfg.num_identities_per_batch {
            log::warn!(
                "epoch {epoch}: {c} clusters < {} identities per batch, skipping",
                cfg.num_identities_per_batch
            );
            observer(&TrainEvent::EpochSkipped { epoch, num_clusters: c });
            report.seconds = started.elapsed().as_secs_f64();
            observer(&TrainEvent::EpochEnd(report.clone()));
            reports.push(report);
            continue;
        }

        let mut cluster_bank = ClusterBank::init(&emb, &labels, cfg.alpha)?;
        let mut instance_bank = InstanceBank::init(&emb, &labels, cfg.slots_per_cluster, bank_seed)?;
        observer(&TrainEvent::BanksInitialized { epoch });

        optimizer.epoch = epoch as u64;
        let batches = build_epoch_batches(&labels, cfg.num_identities_per_batch, cfg.instances_per_identity, batch_seed)?;
        for batch in &batches {
            let inputs = features.select(Axis(0), &batch.indices);
            let (batch_emb, cache) = model.forward(inputs.view())?;

            let (cls_before, ins_before) = (cluster_bank.reads(), instance_bank.reads());
            let loss = batch_loss(&batch_emb, &batch.clusters, &cluster_bank, &instance_bank, &weights)?;
            if !loss.value.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
            }
            let cls_reads = cluster_bank.reads() - cls_before;
            let ins_reads = instance_bank.reads() - ins_before;
            if cls_reads > 0 {
                observer(&TrainEvent::ClusterLossRead { iteration, reads: cls_reads });
            }
            if ins_reads > 0 {
                observer(&TrainEvent::InstanceLossRead { iteration, reads: ins_reads });
            }

            let grads = model.backward(&cache, loss.grad.view())?;
            adam_step(model.params_mut(), &grads, &mut optimizer)?;
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric(format!("non-finite parameter after step {}", optimizer.step)));
            }
            observer(&TrainEvent::OptimizerStep {
                iteration,
                step: optimizer.step,
                loss: loss.value,
            });

            cluster_bank.update(&batch_emb, &batch.clusters)?;
            observer(&TrainEvent::ClusterBankWrite { iteration });
            instance_bank.update(&batch_emb, &batch.clusters)?;
            observer(&TrainEvent::InstanceBankWrite { iteration });

            report.loss += loss.value;
            report.loss_cls += loss.cluster;
            report.loss_ins += loss.instance;
            report.iterations += 1;
            iteration += 1;
        }
        if report.iterations > 0 {
            let n = report.iterations as f64;
            report.loss /= n;
            report.loss_cls /= n;
            report.loss_ins /= n;
        }
        report.seconds = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: C={c} outliers={} loss={:.4} (cls {:.4}, ins {:.4})",
            report.num_outliers,
            report.loss,
            report.loss_cls,
            report.loss_ins
        );
        observer(&TrainEvent::EpochEnd(report.clone()));
        reports.push(report);
    }

    Ok(TrainOutcome {
        model,
        optimizer,
        reports,
    })
}
