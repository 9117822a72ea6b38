//! Bank invariants under long random update sequences.

use hhcl::memory::{ClusterBank, InstanceBank};
use hhcl::types::EmbeddingMatrix;
use ndarray::{Array2, Array3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradients::{labeled, unit_rows};
use crate::Outcome;

const STEPS: usize = 1000;

fn centroids(bank: &ClusterBank) -> Array2<f64> {
    bank.centroids().to_owned()
}

fn slots(bank: &InstanceBank) -> Array3<f64> {
    let (c, s, d) = (bank.num_clusters(), bank.slots_per_cluster(), bank.dims());
    Array3::from_shape_fn((c, s, d), |(i, k, j)| bank.slot(i, k)[j])
}

fn bits_equal(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> bool {
    a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (c, d, s) = (12, 16, 5);
    let (emb, labels) = labeled(&mut rng, c * 6, c, d);
    let mut cbank = ClusterBank::init(&emb, &labels, 0.2).unwrap();
    let mut ibank = InstanceBank::init(&emb, &labels, s, 3).unwrap();
    let mut frozen = ClusterBank::init(&emb, &labels, 1.0).unwrap();
    let frozen_start = centroids(&frozen);
    let mut worst_norm: f64 = 0.0;

    for step in 0..STEPS {
        let amount = rng.random_range(1..=c);
        let present = index::sample(&mut rng, c, amount).into_vec();
        let mut rows_per = Vec::new();
        let mut batch_labels = Vec::new();
        for &cl in &present {
            // sometimes exactly S rows, sometimes not, to cover both update paths
            let n = if rng.random_bool(0.5) { s } else { rng.random_range(1..2 * s) };
            rows_per.push(n);
            batch_labels.extend(std::iter::repeat_n(cl, n));
        }
        let batch = EmbeddingMatrix::new(unit_rows(&mut rng, batch_labels.len(), d)).unwrap();

        let (c_before, i_before) = (centroids(&cbank), slots(&ibank));
        cbank.update(&batch, &batch_labels).unwrap();
        ibank.update(&batch, &batch_labels).unwrap();
        frozen.update(&batch, &batch_labels).unwrap();

        for cl in 0..c {
            let n = cbank.centroid(cl).dot(&cbank.centroid(cl)).sqrt();
            worst_norm = worst_norm.max((n - 1.0).abs());
            for k in 0..s {
                let v = ibank.slot(cl, k);
                worst_norm = worst_norm.max((v.dot(&v).sqrt() - 1.0).abs());
            }
            if !present.contains(&cl) {
                if !bits_equal(cbank.centroid(cl), c_before.row(cl)) {
                    return Err(format!("absent centroid {cl} changed at step {step}"));
                }
                for k in 0..s {
                    if !bits_equal(ibank.slot(cl, k), i_before.slice(ndarray::s![cl, k, ..])) {
                        return Err(format!("absent instance slot ({cl}, {k}) changed at step {step}"));
                    }
                }
            }
        }
    }
    if worst_norm > 1e-6 {
        return Err(format!("row norm deviates by {worst_norm:.1e}"));
    }
    let frozen_now = centroids(&frozen);
    if frozen_now.iter().zip(frozen_start.iter()).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err("alpha = 1 changed a centroid".into());
    }
    Ok(format!(
        "{STEPS} steps, max |norm - 1| {worst_norm:.1e}, absent clusters bitwise unchanged, alpha = 1 exact identity"
    ))
}
