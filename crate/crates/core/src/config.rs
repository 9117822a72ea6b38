use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters for one training run.
///
/// Serialized as JSON with exactly these field names; missing fields take
/// their default values, unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the centroid loss; the hard-instance loss gets `1 - mu`.
    pub mu: f64,
    pub tau_c: f64,
    pub tau_ins: f64,
    /// Momentum of the centroid update.
    pub alpha: f64,
    pub num_identities_per_batch: usize,
    pub instances_per_identity: usize,
    pub slots_per_cluster: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub kreciprocal_k: usize,
    /// Weight of the Euclidean distance when blended with the Jaccard
    /// distance before DBSCAN. Zero means pure Jaccard.
    pub euclidean_blend: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mu: 0.5,
            tau_c: 0.05,
            tau_ins: 0.05,
            alpha: 0.2,
            num_identities_per_batch: 16,
            instances_per_identity: 16,
            slots_per_cluster: 16,
            epochs: 50,
            lr: 3.5e-4,
            weight_decay: 5e-4,
            lr_decay_every: 20,
            lr_decay_factor: 0.1,
            dbscan_eps: 0.45,
            dbscan_min_pts: 4,
            kreciprocal_k: 30,
            euclidean_blend: 0.0,
            seed: 0,
        }
    }
}

fn unit_interval(field: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config {
            field,
            reason: format!("{v} is outside [0, 1]"),
        })
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config {
            field,
            reason: format!("{v} must be finite and > 0"),
        })
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config {
            field,
            reason: format!("{v} must be finite and >= 0"),
        })
    }
}

fn nonzero(field: &'static str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::Config {
            field,
            reason: "must be at least 1".into(),
        })
    }
}

impl TrainConfig {
    /// Checks every field invariant, reporting the first offending field.
    pub fn validate(&self) -> Result<()> {
        unit_interval("mu", self.mu)?;
        positive("tau_c", self.tau_c)?;
        positive("tau_ins", self.tau_ins)?;
        unit_interval("alpha", self.alpha)?;
        nonzero("num_identities_per_batch", self.num_identities_per_batch)?;
        nonzero("instances_per_identity", self.instances_per_identity)?;
        nonzero("slots_per_cluster", self.slots_per_cluster)?;
        nonzero("epochs", self.epochs)?;
        positive("lr", self.lr)?;
        non_negative("weight_decay", self.weight_decay)?;
        nonzero("lr_decay_every", self.lr_decay_every)?;
        positive("lr_decay_factor", self.lr_decay_factor)?;
        positive("dbscan_eps", self.dbscan_eps)?;
        nonzero("dbscan_min_pts", self.dbscan_min_pts)?;
        nonzero("kreciprocal_k", self.kreciprocal_k)?;
        unit_interval("euclidean_blend", self.euclidean_blend)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
