use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hhcl::clustering::pseudo_labels;
use hhcl::encoder::{Checkpoint, EncoderModel};
use hhcl::eval::{evaluate as score, metadata, Metrics, RetrievalResult};
use hhcl::io::{load_features, save_features};
use hhcl::synthdata::generate;
use hhcl::trainer::{embed_all, train_with_observer, EpochReport, TrainEvent, TrainOutcome};
use hhcl::types::{feature_matrix, EmbeddingMatrix, Sample, UnlabeledSet};
use hhcl::TrainConfig;
use rayon::prelude::*;

use crate::args::{AblateArgs, ClusterArgs, EvaluateArgs, GenDataArgs, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const METRICS_HEADER: &str = "epoch,C,outliers,loss,loss_cls,loss_ins,seconds";
pub const CLUSTERS_HEADER: &str = "sample_index,cluster_id";
pub const PER_QUERY_HEADER: &str = "query_index,identity,camera,ap,first_match";
pub const SUMMARY_HEADER: &str = "mu,seed,mAP,rank1,rank5,rank10";

fn load(path: &Path) -> CliResult<Vec<Sample>> {
    load_features(path).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn config_json(cfg: &TrainConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn embed(model: Option<&EncoderModel>, samples: &[Sample]) -> CliResult<EmbeddingMatrix> {
    let x = feature_matrix(samples)?;
    Ok(match model {
        Some(m) => {
            if x.ncols() != m.input_dim() {
                return Err(CliError::config(format!(
                    "features have {} dims, model expects {}",
                    x.ncols(),
                    m.input_dim()
                )));
            }
            embed_all(m, x.view())?
        }
        None => EmbeddingMatrix::normalized(x)?,
    })
}

fn retrieval(model: Option<&EncoderModel>, query: &[Sample], gallery: &[Sample], junk: bool) -> CliResult<RetrievalResult> {
    if query.is_empty() || gallery.is_empty() {
        return Err(CliError::config("query and gallery must both be non-empty"));
    }
    let (qd, gd) = (query[0].feature.len(), gallery[0].feature.len());
    if qd != gd {
        return Err(CliError::config(format!("query dimension {qd} differs from gallery dimension {gd}")));
    }
    let q = embed(model, query)?;
    let g = embed(model, gallery)?;
    Ok(score(&q, &g, &metadata(query), &metadata(gallery), junk)?)
}

fn metrics_json(m: &Metrics) -> String {
    serde_json::to_string_pretty(m).expect("metrics serialize") + "\n"
}

pub fn metrics_row(r: &EpochReport, deterministic: bool) -> String {
    let seconds = if deterministic { 0.0 } else { r.seconds };
    format!(
        "{},{},{},{},{},{},{}",
        r.epoch, r.num_clusters, r.num_outliers, r.loss, r.loss_cls, r.loss_ins, seconds
    )
}

pub fn gen_data(a: GenDataArgs) -> CliResult<()> {
    let spec = a.spec();
    spec.validate()?;
    create_dir(&a.out_dir)?;
    let mut manifest = RunManifest::new("gen-data", Some(spec.seed), serde_json::to_value(&spec).expect("spec serializes"));
    let paths = ["train", "query", "gallery"].map(|n| a.out_dir.join(format!("{n}.feat")));
    for p in &paths {
        manifest.output(p);
    }
    manifest.write(&a.out_dir.join("manifest.json"))?;

    let data = generate(&spec)?;
    for (p, samples) in paths.iter().zip([&data.train, &data.query, &data.gallery]) {
        save_features(samples, p).map_err(|e| CliError::io(p, e))?;
    }
    println!(
        "train={} query={} gallery={} dims={}",
        data.train.len(),
        data.query.len(),
        data.gallery.len(),
        spec.dims
    );
    Ok(())
}

pub fn cluster(a: ClusterArgs) -> CliResult<()> {
    create_dir(&a.out_dir)?;
    let out = a.out_dir.join("clusters.csv");
    let params = a.params();
    let mut manifest = RunManifest::new(
        "cluster",
        None,
        serde_json::json!({
            "kreciprocal_k": params.k,
            "dbscan_eps": params.eps,
            "dbscan_min_pts": params.min_pts,
            "euclidean_blend": params.euclidean_blend,
        }),
    );
    manifest.input(&a.input)?;
    if let Some(c) = &a.checkpoint {
        manifest.input(c)?;
    }
    manifest.output(&out);
    manifest.write(&a.out_dir.join("manifest.json"))?;

    let samples = load(&a.input)?;
    let model = match &a.checkpoint {
        Some(p) => Some(Checkpoint::load(p).map_err(|e| CliError::io(p, e))?.model),
        None => None,
    };
    let emb = embed(model.as_ref(), &samples)?;
    let labels = pseudo_labels(&emb, &params)?;

    let mut w = create(&out)?;
    let mut body = String::from(CLUSTERS_HEADER);
    body.push('\n');
    for (i, l) in labels.to_signed().iter().enumerate() {
        body.push_str(&format!("{i},{l}\n"));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| CliError::io(&out, e))?;
    println!("clusters={} outliers={}", labels.num_clusters(), labels.num_outliers());
    Ok(())
}

struct RunPaths {
    checkpoint: PathBuf,
    metrics: PathBuf,
}

/// Trains one model, streaming the metrics CSV as epochs finish.
fn train_run(
    samples: &[Sample],
    cfg: &TrainConfig,
    widths: Option<&[usize]>,
    paths: &RunPaths,
    deterministic: bool,
) -> CliResult<TrainOutcome> {
    if samples.len() < 2 {
        return Err(CliError::config(format!("need at least 2 training samples, got {}", samples.len())));
    }
    let set = UnlabeledSet::from_samples(samples)?;
    let mut layer_widths = vec![set.dim()];
    match widths {
        Some(w) => layer_widths.extend_from_slice(w),
        None => layer_widths = EncoderModel::default_widths(set.dim()),
    }
    let model = EncoderModel::new(&layer_widths, cfg.seed)?;

    let mut csv = create(&paths.metrics)?;
    writeln!(csv, "{METRICS_HEADER}").map_err(|e| CliError::io(&paths.metrics, e))?;
    let mut write_err = None;
    let outcome = train_with_observer(&set, cfg, model, &mut |e| {
        if let TrainEvent::EpochEnd(r) = e {
            if write_err.is_none() {
                if let Err(err) = writeln!(csv, "{}", metrics_row(r, deterministic)).and_then(|_| csv.flush()) {
                    write_err = Some(err);
                }
            }
        }
    });
    if let Some(err) = write_err {
        return Err(CliError::io(&paths.metrics, err));
    }
    let outcome = outcome?;
    let ckpt = Checkpoint {
        model: outcome.model.clone(),
        optimizer: outcome.optimizer.clone(),
        epoch: cfg.epochs as u64,
    };
    ckpt.save(&paths.checkpoint).map_err(|e| CliError::io(&paths.checkpoint, e))?;
    Ok(outcome)
}

pub fn train(a: TrainArgs, deterministic: bool) -> CliResult<()> {
    let cfg = a.config.resolve()?;
    create_dir(&a.out_dir)?;
    let paths = RunPaths {
        checkpoint: a.out_dir.join("checkpoint.bin"),
        metrics: a.out_dir.join("metrics.csv"),
    };
    let eval_path = a.out_dir.join("eval.json");

    let mut manifest = RunManifest::new("train", Some(cfg.seed), config_json(&cfg));
    manifest.input(&a.train)?;
    for p in [&a.query, &a.gallery].into_iter().flatten() {
        manifest.input(p)?;
    }
    manifest.output(&paths.checkpoint);
    manifest.output(&paths.metrics);
    if a.query.is_some() {
        manifest.output(&eval_path);
    }
    manifest.write(&a.out_dir.join("manifest.json"))?;

    let samples = load(&a.train)?;
    let eval_sets = match (&a.query, &a.gallery) {
        (Some(q), Some(g)) => Some((load(q)?, load(g)?)),
        _ => None,
    };
    let outcome = train_run(&samples, &cfg, a.widths.as_deref(), &paths, deterministic)?;

    if let Some((query, gallery)) = eval_sets {
        let m = retrieval(Some(&outcome.model), &query, &gallery, true)?.metrics();
        let text = metrics_json(&m);
        write_text(&eval_path, &text)?;
        print!("{text}");
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        let mut manifest = RunManifest::new("evaluate", None, serde_json::json!({ "junk_filter": !a.no_junk_filter }));
        manifest.input(&a.query)?;
        manifest.input(&a.gallery)?;
        if let Some(c) = &a.checkpoint {
            manifest.input(c)?;
        }
        manifest.output(&dir.join("metrics.json"));
        manifest.output(&dir.join("per_query.csv"));
        manifest.write(&dir.join("manifest.json"))?;
    }

    let query = load(&a.query)?;
    let gallery = load(&a.gallery)?;
    let model = match &a.checkpoint {
        Some(p) => Some(Checkpoint::load(p).map_err(|e| CliError::io(p, e))?.model),
        None => None,
    };
    let result = retrieval(model.as_ref(), &query, &gallery, !a.no_junk_filter)?;
    let text = metrics_json(&result.metrics());

    if let Some(dir) = &a.out_dir {
        write_text(&dir.join("metrics.json"), &text)?;
        let mut csv = String::from(PER_QUERY_HEADER);
        csv.push('\n');
        for (i, (s, q)) in result.scores.iter().zip(&query).enumerate() {
            let ap = s.average_precision.map(|v| v.to_string()).unwrap_or_default();
            let first = s.first_match.map(|v| v.to_string()).unwrap_or_default();
            csv.push_str(&format!("{i},{},{},{ap},{first}\n", q.identity, q.camera));
        }
        write_text(&dir.join("per_query.csv"), &csv)?;
    }
    print!("{text}");
    Ok(())
}

pub fn ablate(a: AblateArgs, deterministic: bool) -> CliResult<()> {
    if a.mu_values.is_empty() {
        return Err(CliError::config("--mu-values needs at least one value"));
    }
    if let Some(bad) = a.mu_values.iter().find(|m| !(0.0..=1.0).contains(*m)) {
        return Err(CliError::config(format!("mu value {bad} is outside [0, 1]")));
    }
    if a.seeds.is_empty() {
        return Err(CliError::config("--seeds needs at least one value"));
    }
    let base = a.config.resolve()?;
    create_dir(&a.out_dir)?;
    let runs_dir = a.out_dir.join("runs");
    create_dir(&runs_dir)?;
    let summary_path = a.out_dir.join("summary.csv");

    let grid: Vec<(f64, u64)> = a.mu_values.iter().flat_map(|&m| a.seeds.iter().map(move |&s| (m, s))).collect();
    let run_paths: Vec<RunPaths> = grid
        .iter()
        .map(|(m, s)| RunPaths {
            checkpoint: runs_dir.join(format!("mu{m}_seed{s}.bin")),
            metrics: runs_dir.join(format!("mu{m}_seed{s}.csv")),
        })
        .collect();

    let mut manifest = RunManifest::new(
        "ablate",
        None,
        serde_json::json!({ "base": config_json(&base), "mu_values": a.mu_values, "seeds": a.seeds }),
    );
    for p in [&a.train, &a.query, &a.gallery] {
        manifest.input(p)?;
    }
    manifest.output(&summary_path);
    for p in &run_paths {
        manifest.output(&p.checkpoint);
        manifest.output(&p.metrics);
    }
    manifest.write(&a.out_dir.join("manifest.json"))?;

    let train_set = load(&a.train)?;
    let query = load(&a.query)?;
    let gallery = load(&a.gallery)?;

    let results: Vec<CliResult<Metrics>> = grid
        .par_iter()
        .zip(&run_paths)
        .map(|(&(mu, seed), paths)| {
            let cfg = TrainConfig { mu, seed, ..base.clone() };
            let outcome = train_run(&train_set, &cfg, a.widths.as_deref(), paths, deterministic)?;
            let m = retrieval(Some(&outcome.model), &query, &gallery, true)?.metrics();
            log::info!("mu={mu} seed={seed}: mAP={:.4} rank1={:.4}", m.map, m.rank1);
            Ok(m)
        })
        .collect();

    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    for (&(mu, seed), r) in grid.iter().zip(results) {
        let m = r?;
        summary.push_str(&format!("{mu},{seed},{},{},{},{}\n", m.map, m.rank1, m.rank5, m.rank10));
    }
    write_text(&summary_path, &summary)?;
    print!("{summary}");
    Ok(())
}
