//! DBSCAN, retrieval metrics and hard selection against brute-force
//! references written independently of the library.

use std::collections::HashMap;

use hhcl::clustering::{dbscan, DistanceMatrix};
use hhcl::eval::{evaluate, SampleMeta};
use hhcl::memory::{select_hard_negative, select_hard_positive, InstanceBank};
use hhcl::types::EmbeddingMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradients::{labeled, unit_rows};
use crate::Outcome;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Union-find over core points; a border point joins the adjacent
/// component whose smallest core index is lowest.
fn reference_dbscan(d: &Array2<f64>, eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = d.nrows();
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && d[[i, j]] <= eps).count() >= min_pts)
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && d[[i, j]] <= eps {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    // with the min-root union above, every root is its component's smallest core
    let root: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    (0..n)
        .map(|j| {
            if core[j] {
                Some(root[j])
            } else {
                (0..n).filter(|&i| core[i] && d[[i, j]] <= eps).map(|i| root[i]).min()
            }
        })
        .collect()
}

fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter().zip(b).all(|(x, y)| match (x, y) {
        (None, None) => true,
        (Some(x), Some(y)) => *fwd.entry(*x).or_insert(*y) == *y && *back.entry(*y).or_insert(*x) == *x,
        _ => false,
    })
}

fn blobs(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let centers: Vec<(f64, f64)> = (0..rng.random_range(2..7))
        .map(|_| (rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)))
        .collect();
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            if rng.random_bool(0.15) {
                (rng.random_range(0.0..4.0), rng.random_range(0.0..4.0))
            } else {
                let (cx, cy) = centers[rng.random_range(0..centers.len())];
                (cx + rng.random_range(-0.4..0.4), cy + rng.random_range(-0.4..0.4))
            }
        })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
        (dx * dx + dy * dy).sqrt()
    })
}

fn check_dbscan() -> Result<String, String> {
    let mut clusters = 0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = blobs(&mut rng, 200);
        let eps = rng.random_range(0.1..0.35);
        let min_pts = rng.random_range(1..8);
        let ours = dbscan(&DistanceMatrix::new(d.clone()).unwrap(), eps, min_pts).unwrap();
        let reference = reference_dbscan(&d, eps, min_pts);
        if !same_partition(ours.assignment(), &reference) {
            return Err(format!("dbscan partition differs at seed {seed}"));
        }
        clusters += ours.num_clusters();
    }
    Ok(format!("dbscan 50/50 partitions equal ({clusters} clusters)"))
}

struct Brute {
    aps: Vec<Option<f64>>,
    first: Vec<Option<usize>>,
}

/// Scores each query by counting, for every relevant item, the kept items
/// that precede it in (distance, index) order.
fn brute_scores(q: &Array2<f64>, g: &Array2<f64>, qm: &[SampleMeta], gm: &[SampleMeta]) -> Brute {
    let mut aps = Vec::new();
    let mut first = Vec::new();
    for (qi, qmeta) in qm.iter().enumerate() {
        let dist: Vec<f64> = (0..g.nrows())
            .map(|j| (&q.row(qi) - &g.row(j)).mapv(|v| v * v).sum().sqrt())
            .collect();
        let kept: Vec<usize> = (0..g.nrows())
            .filter(|&j| !(gm[j].identity == qmeta.identity && gm[j].camera == qmeta.camera))
            .collect();
        let before = |a: usize, b: usize| dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
        let relevant: Vec<usize> = kept.iter().copied().filter(|&j| gm[j].identity == qmeta.identity).collect();
        if relevant.is_empty() {
            aps.push(None);
            first.push(None);
            continue;
        }
        let mut precision_sum = 0.0;
        let mut best = usize::MAX;
        for &j in &relevant {
            let rank = 1 + kept.iter().filter(|&&i| before(i, j)).count();
            let hits = 1 + relevant.iter().filter(|&&i| before(i, j)).count();
            precision_sum += hits as f64 / rank as f64;
            best = best.min(rank);
        }
        aps.push(Some(precision_sum / relevant.len() as f64));
        first.push(Some(best));
    }
    Brute { aps, first }
}

fn check_eval() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let nq = rng.random_range(1..=20);
        let ng = rng.random_range(1..=50);
        let d = rng.random_range(2..6);
        let ids = rng.random_range(1..8);
        let cams = rng.random_range(1..4);
        let meta = |rng: &mut ChaCha8Rng| SampleMeta {
            identity: rng.random_range(0..ids),
            camera: rng.random_range(0..cams),
        };
        let qm: Vec<SampleMeta> = (0..nq).map(|_| meta(&mut rng)).collect();
        let gm: Vec<SampleMeta> = (0..ng).map(|_| meta(&mut rng)).collect();
        let q = unit_rows(&mut rng, nq, d);
        let mut g = unit_rows(&mut rng, ng, d);
        // exact duplicates exercise the index tie-break
        for j in 1..ng {
            if rng.random_bool(0.1) {
                let src = g.row(rng.random_range(0..j)).to_owned();
                g.row_mut(j).assign(&src);
            }
        }
        let ours = evaluate(
            &EmbeddingMatrix::new(q.clone()).unwrap(),
            &EmbeddingMatrix::new(g.clone()).unwrap(),
            &qm,
            &gm,
            true,
        );
        let brute = brute_scores(&q, &g, &qm, &gm);
        let valid: Vec<f64> = brute.aps.iter().flatten().copied().collect();
        let ours = match ours {
            Ok(r) => r,
            Err(_) if valid.is_empty() => continue,
            Err(e) => return Err(format!("evaluate failed at instance {seed}: {e}")),
        };
        let map = valid.iter().sum::<f64>() / valid.len() as f64;
        worst = worst.max((ours.map - map).abs());
        let firsts: Vec<usize> = brute.first.iter().flatten().copied().collect();
        for k in 1..=ng {
            let cmc = firsts.iter().filter(|&&f| f <= k).count() as f64 / firsts.len() as f64;
            worst = worst.max((ours.rank(k) - cmc).abs());
        }
        for (s, ap) in ours.scores.iter().zip(&brute.aps) {
            match (s.average_precision, ap) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => return Err(format!("relevance mismatch at instance {seed}")),
            }
        }
    }
    if worst <= 1e-12 {
        Ok(format!("mAP/CMC max abs diff {worst:.1e} over 50 instances"))
    } else {
        Err(format!("mAP/CMC max abs diff {worst:.1e}"))
    }
}

fn check_hard_selection() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for pair in 0..1000 {
        let d = rng.random_range(2..8);
        let c = rng.random_range(1..6);
        let s = rng.random_range(1..8);
        // few distinct members so slots repeat and ties occur
        let n = c * rng.random_range(1..4);
        let (emb, labels) = labeled(&mut rng, n, c, d);
        let bank = InstanceBank::init(&emb, &labels, s, rng.random()).unwrap();
        let q: Array1<f64> = unit_rows(&mut rng, 1, d).row(0).to_owned();
        for cluster in 0..c {
            let sims: Vec<f64> = (0..s).map(|k| q.dot(&bank.slot(cluster, k))).collect();
            let lo = sims.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let want_pos = sims.iter().position(|&v| v == lo).unwrap();
            let want_neg = sims.iter().position(|&v| v == hi).unwrap();
            let (pos, pv) = select_hard_positive(q.view(), &bank, cluster);
            let (neg, nv) = select_hard_negative(q.view(), &bank, cluster);
            if pos != want_pos || neg != want_neg || pv != bank.slot(cluster, pos) || nv != bank.slot(cluster, neg) {
                return Err(format!("hard selection differs at pair {pair}, cluster {cluster}"));
            }
        }
    }
    Ok("hard selection 1000/1000 pairs equal".into())
}

pub fn run() -> Outcome {
    let parts = [check_dbscan(), check_eval(), check_hard_selection()];
    let text = parts
        .iter()
        .map(|p| match p {
            Ok(s) | Err(s) => s.clone(),
        })
        .collect::<Vec<_>>()
        .join("; ");
    if parts.iter().all(Result::is_ok) {
        Ok(text)
    } else {
        Err(text)
    }
}
