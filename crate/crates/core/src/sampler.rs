//! Identity-balanced (PK) mini-batches over pseudo labels.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::PseudoLabeling;

/// `n_id` clusters × `n_inst` sample indices, grouped cluster by cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub clusters: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Shuffles the cluster ids, takes them `n_id` at a time (dropping the
/// remainder) and draws `n_inst` members from each selected cluster.
///
/// Members are drawn without replacement when the cluster has at least
/// `n_inst` of them and with replacement otherwise.
pub fn build_epoch_batches(labels: &PseudoLabeling, n_id: usize, n_inst: usize, seed: u64) -> Result<Vec<Batch>> {
    let c = labels.num_clusters();
    if n_id == 0 || n_inst == 0 {
        return Err(Error::Parameter("n_id and n_inst must be >= 1".into()));
    }
    if c < n_id {
        return Err(Error::Parameter(format!(
            "{c} clusters cannot fill batches of {n_id} identities"
        )));
    }
    let members = labels.members();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut rng);

    let batches = order
        .chunks_exact(n_id)
        .map(|group| {
            let mut indices = Vec::with_capacity(n_id * n_inst);
            let mut clusters = Vec::with_capacity(n_id * n_inst);
            for &cid in group {
                let pool = &members[cid];
                if pool.len() >= n_inst {
                    indices.extend(index::sample(&mut rng, pool.len(), n_inst).into_iter().map(|i| pool[i]));
                } else {
                    indices.extend((0..n_inst).map(|_| pool[rng.random_range(0..pool.len())]));
                }
                clusters.extend(std::iter::repeat_n(cid, n_inst));
            }
            Batch { indices, clusters }
        })
        .collect();
    Ok(batches)
}
