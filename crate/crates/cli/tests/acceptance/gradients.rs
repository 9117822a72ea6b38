//! Analytic gradients against central finite differences.

use hhcl::encoder::EncoderModel;
use hhcl::loss::{batch_loss, cluster_loss, hard_instance_loss, hybrid_loss, softmax_contrastive, LossWeights};
use hhcl::memory::{select_hard_negative, select_hard_positive, ClusterBank, InstanceBank};
use hhcl::types::{EmbeddingMatrix, PseudoLabeling};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;
const CONFIGS: usize = 100;
/// Below this gradient norm the loss is numerically flat and a relative
/// error is meaningless.
const FLAT: f64 = 1e-6;

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0f64..1.0));
    for mut r in m.outer_iter_mut() {
        let norm = r.dot(&r).sqrt();
        r /= norm;
    }
    m
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    unit_rows(rng, 1, d).row(0).to_owned()
}

/// `n` embeddings labeled round-robin over `c` clusters.
pub fn labeled(rng: &mut ChaCha8Rng, n: usize, c: usize, d: usize) -> (EmbeddingMatrix, PseudoLabeling) {
    let emb = EmbeddingMatrix::new(unit_rows(rng, n, d)).unwrap();
    let labels = PseudoLabeling::new((0..n).map(|i| Some(i % c)).collect(), c).unwrap();
    (emb, labels)
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> Option<f64> {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    (scale >= FLAT).then(|| diff / scale)
}

fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let up = f(&p);
            p[i] = x[i] - H;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Hard-sample choices for a query: `(positive slot, negative slot per cluster)`.
fn selections(q: ArrayView1<'_, f64>, bank: &InstanceBank, own: usize) -> Vec<usize> {
    (0..bank.num_clusters())
        .map(|i| {
            if i == own {
                select_hard_positive(q, bank, i).0
            } else {
                select_hard_negative(q, bank, i).0
            }
        })
        .collect()
}

/// Worst relative error and number of flat configurations skipped.
#[derive(Default)]
struct Tally {
    worst: f64,
    checked: usize,
    skipped: usize,
}

impl Tally {
    fn add(&mut self, err: Option<f64>) {
        match err {
            Some(e) => {
                self.worst = self.worst.max(e);
                self.checked += 1;
            }
            None => self.skipped += 1,
        }
    }

    fn done(&self) -> bool {
        self.checked >= CONFIGS
    }
}

fn check_softmax(rng: &mut ChaCha8Rng) -> Tally {
    let mut t = Tally::default();
    while !t.done() {
        let d = rng.random_range(2..12);
        let m = rng.random_range(2..20);
        let keys = unit_rows(rng, m, d);
        let q = unit(rng, d);
        let pos = rng.random_range(0..m);
        let tau = rng.random_range(0.05..1.0);
        let out = softmax_contrastive(q.view(), keys.view(), pos, tau).unwrap();
        let num = central_diff(q.as_slice().unwrap(), |x| {
            softmax_contrastive(ArrayView1::from(x), keys.view(), pos, tau).unwrap().value
        });
        t.add(rel_err(out.grad_query.as_slice().unwrap(), &num));
    }
    t
}

fn check_cluster(rng: &mut ChaCha8Rng) -> Tally {
    let mut t = Tally::default();
    while !t.done() {
        let d = rng.random_range(2..12);
        let c = rng.random_range(2..10);
        let (emb, labels) = labeled(rng, c * 3, c, d);
        let bank = ClusterBank::init(&emb, &labels, 0.2).unwrap();
        let q = unit(rng, d);
        let own = rng.random_range(0..c);
        let tau = rng.random_range(0.05..1.0);
        let out = cluster_loss(q.view(), &bank, own, tau).unwrap();
        let num = central_diff(q.as_slice().unwrap(), |x| {
            cluster_loss(ArrayView1::from(x), &bank, own, tau).unwrap().value
        });
        t.add(rel_err(out.grad_query.as_slice().unwrap(), &num));
    }
    t
}

/// Whether any coordinate perturbation of `q` changes a hard selection.
fn selection_switches(q: &Array1<f64>, bank: &InstanceBank, own: usize) -> bool {
    let base = selections(q.view(), bank, own);
    let mut p = q.clone();
    for i in 0..q.len() {
        for step in [H, -H] {
            p[i] = q[i] + step;
            if selections(p.view(), bank, own) != base {
                return true;
            }
        }
        p[i] = q[i];
    }
    false
}

fn check_instance(rng: &mut ChaCha8Rng, hybrid: bool) -> (Tally, usize) {
    let mut t = Tally::default();
    let mut switched = 0;
    while !t.done() {
        let d = rng.random_range(2..12);
        let c = rng.random_range(2..8);
        let s = rng.random_range(1..6);
        let (emb, labels) = labeled(rng, c * 4, c, d);
        let ibank = InstanceBank::init(&emb, &labels, s, rng.random()).unwrap();
        let cbank = ClusterBank::init(&emb, &labels, 0.2).unwrap();
        let q = unit(rng, d);
        let own = rng.random_range(0..c);
        let (tc, ti) = (rng.random_range(0.05..1.0), rng.random_range(0.05..1.0));
        let mu = rng.random_range(0.0..1.0);
        if selection_switches(&q, &ibank, own) {
            switched += 1;
            continue;
        }
        let f = |x: ArrayView1<'_, f64>| {
            let ins = hard_instance_loss(x, &ibank, own, ti).unwrap();
            if hybrid {
                hybrid_loss(&cluster_loss(x, &cbank, own, tc).unwrap(), &ins, mu)
            } else {
                ins
            }
        };
        let out = f(q.view());
        let num = central_diff(q.as_slice().unwrap(), |x| f(ArrayView1::from(x)).value);
        t.add(rel_err(out.grad_query.as_slice().unwrap(), &num));
    }
    (t, switched)
}

fn check_chain(rng: &mut ChaCha8Rng) -> (Tally, usize) {
    let mut t = Tally::default();
    let mut switched = 0;
    while !t.done() {
        let d_in = rng.random_range(2..7);
        let hidden = rng.random_range(2..8);
        let d_out = rng.random_range(2..6);
        let widths = if rng.random_bool(0.5) { vec![d_in, hidden, d_out] } else { vec![d_in, d_out] };
        let model = EncoderModel::new(&widths, rng.random()).unwrap();
        let b = rng.random_range(1..6);
        let x = Array2::from_shape_fn((b, d_in), |_| rng.random_range(-1.0..1.0));
        let c = rng.random_range(2..5);
        let (emb, labels) = labeled(rng, c * 3, c, d_out);
        let cbank = ClusterBank::init(&emb, &labels, 0.2).unwrap();
        let ibank = InstanceBank::init(&emb, &labels, 3, rng.random()).unwrap();
        let batch_labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let w = LossWeights {
            mu: rng.random_range(0.0..1.0),
            tau_c: rng.random_range(0.05..1.0),
            tau_ins: rng.random_range(0.05..1.0),
        };

        let signature = |params: &[f64]| {
            let m = EncoderModel::from_parts(widths.clone(), params.to_vec()).unwrap();
            let e = m.embed(x.view()).unwrap();
            (0..b).map(|r| selections(e.row(r), &ibank, batch_labels[r])).collect::<Vec<_>>()
        };
        let loss_at = |params: &[f64]| {
            let m = EncoderModel::from_parts(widths.clone(), params.to_vec()).unwrap();
            let e = m.embed(x.view()).unwrap();
            batch_loss(&e, &batch_labels, &cbank, &ibank, &w).unwrap().value
        };

        let theta = model.params().to_vec();
        let base = signature(&theta);
        let mut p = theta.clone();
        let mut switches = false;
        'outer: for i in 0..theta.len() {
            for step in [H, -H] {
                p[i] = theta[i] + step;
                if signature(&p) != base {
                    switches = true;
                    break 'outer;
                }
            }
            p[i] = theta[i];
        }
        if switches {
            switched += 1;
            continue;
        }

        let (e, cache) = model.forward(x.view()).unwrap();
        let bl = batch_loss(&e, &batch_labels, &cbank, &ibank, &w).unwrap();
        let analytic = model.backward(&cache, bl.grad.view()).unwrap();
        let num = central_diff(&theta, loss_at);
        t.add(rel_err(&analytic, &num));
    }
    (t, switched)
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let softmax = check_softmax(&mut rng);
    let cluster = check_cluster(&mut rng);
    let (instance, sw_i) = check_instance(&mut rng, false);
    let (hybrid, sw_h) = check_instance(&mut rng, true);
    let (chain, sw_c) = check_chain(&mut rng);
    let parts = [
        ("softmax_contrastive", &softmax),
        ("cluster_loss", &cluster),
        ("hard_instance_loss", &instance),
        ("hybrid_loss", &hybrid),
        ("encoder chain", &chain),
    ];
    let summary = parts
        .iter()
        .map(|(n, t)| format!("{n} max rel err {:.2e} over {}", t.worst, t.checked))
        .collect::<Vec<_>>()
        .join(", ");
    let skipped: usize = parts.iter().map(|(_, t)| t.skipped).sum();
    let detail = format!(
        "{summary}; skipped {} selection switches and {skipped} flat losses",
        sw_i + sw_h + sw_c
    );
    if parts.iter().all(|(_, t)| t.worst < TOL) {
        Ok(detail)
    } else {
        Err(detail)
    }
}
