//! Retrieval protocol: AP on a hand-built ranking and junk filtering.

use hhcl::eval::{average_precision, evaluate, SampleMeta};
use hhcl::types::EmbeddingMatrix;
use ndarray::Array2;

use crate::Outcome;

fn on_circle(angles: &[f64]) -> EmbeddingMatrix {
    EmbeddingMatrix::new(Array2::from_shape_fn((angles.len(), 2), |(i, j)| {
        if j == 0 {
            angles[i].cos()
        } else {
            angles[i].sin()
        }
    }))
    .unwrap()
}

fn meta(identity: i64, camera: u32) -> SampleMeta {
    SampleMeta { identity, camera }
}

pub fn run() -> Outcome {
    let ap = average_precision(&[true, false, true]).unwrap();
    if (ap - 0.8333).abs() >= 5e-5 {
        return Err(format!("AP of relevant ranks (1, 3) is {ap}"));
    }

    // gallery by increasing distance: same id same cam (junk), same id
    // other cam, other id same cam, same id other cam
    let q = on_circle(&[0.0]);
    let g = on_circle(&[0.05, 0.1, 0.2, 0.3]);
    let qm = [meta(1, 0)];
    let gm = [meta(1, 0), meta(1, 1), meta(2, 0), meta(1, 2)];
    let filtered = evaluate(&q, &g, &qm, &gm, true).map_err(|e| e.to_string())?;
    let unfiltered = evaluate(&q, &g, &qm, &gm, false).map_err(|e| e.to_string())?;
    if (filtered.map - 5.0 / 6.0).abs() > 1e-12 {
        return Err(format!("filtered AP {} should be 0.8333", filtered.map));
    }
    // without filtering the junk entry is a hit at rank 1: (1 + 1 + 3/4) / 3
    if (unfiltered.map - 11.0 / 12.0).abs() > 1e-12 {
        return Err(format!("unfiltered AP {} should be 0.9167", unfiltered.map));
    }
    // a query whose only same-id items share its camera has nothing to find
    let lonely = evaluate(&q, &g, &[meta(2, 0)], &gm, true);
    if lonely.is_ok() {
        return Err("query with only junk matches should not be scorable".into());
    }
    Ok(format!(
        "AP(1,3) = {ap:.4}; junk-filtered AP {:.4}, unfiltered {:.4}",
        filtered.map, unfiltered.map
    ))
}
