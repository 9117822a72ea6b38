//! Default training on the default synthetic set.

use hhcl::encoder::EncoderModel;
use hhcl::eval::{evaluate, metadata};
use hhcl::synthdata::{generate, SynthSpec};
use hhcl::trainer::{embed_all, train};
use hhcl::types::{feature_matrix, UnlabeledSet};
use hhcl::TrainConfig;

use crate::Outcome;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn run() -> Outcome {
    let mut maps = Vec::new();
    let mut rank1s = Vec::new();
    for seed in 0..5 {
        let spec = SynthSpec { seed, ..SynthSpec::default() };
        assert!(spec.camera_shift > spec.intra_spread);
        let data = generate(&spec).map_err(|e| e.to_string())?;
        let cfg = TrainConfig { epochs: 20, seed, ..TrainConfig::default() };
        let set = UnlabeledSet::from_samples(&data.train).map_err(|e| e.to_string())?;
        let model = EncoderModel::new(&EncoderModel::default_widths(spec.dims), seed).map_err(|e| e.to_string())?;
        let out = train(&set, &cfg, model).map_err(|e| e.to_string())?;
        let q = embed_all(&out.model, feature_matrix(&data.query).unwrap().view()).unwrap();
        let g = embed_all(&out.model, feature_matrix(&data.gallery).unwrap().view()).unwrap();
        let m = evaluate(&q, &g, &metadata(&data.query), &metadata(&data.gallery), true)
            .map_err(|e| e.to_string())?
            .metrics();
        maps.push(m.map);
        rank1s.push(m.rank1);
    }
    let (map, r1) = (median(maps), median(rank1s));
    let detail = format!("median mAP {map:.4}, median Rank-1 {r1:.4} over 5 seeds, 20 epochs");
    if map >= 0.95 && r1 >= 0.95 {
        Ok(detail)
    } else {
        Err(detail)
    }
}
