use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hhcl::clustering::ClusterParams;
use hhcl::synthdata::SynthSpec;
use hhcl::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "hhcl", version, about = "Hybrid hard-mining contrastive learning for unsupervised re-identification")]
pub struct Cli {
    /// Single-threaded execution and zeroed wall times, for byte-identical outputs.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic train/query/gallery feature files.
    GenData(GenDataArgs),
    /// Pseudo-label a feature file.
    Cluster(ClusterArgs),
    /// Train the encoder on unlabeled features.
    Train(TrainArgs),
    /// Score query features against gallery features.
    Evaluate(EvaluateArgs),
    /// Train and evaluate over a grid of mu values and seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Default,
    Hard,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    #[arg(long)]
    pub num_identities: Option<usize>,
    #[arg(long)]
    pub num_test_identities: Option<usize>,
    #[arg(long)]
    pub instances_per_identity: Option<usize>,
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long)]
    pub num_cameras: Option<usize>,
    #[arg(long)]
    pub intra_spread: Option<f64>,
    #[arg(long)]
    pub camera_shift: Option<f64>,
    #[arg(long)]
    pub camera_shared: Option<f64>,
    #[arg(long)]
    pub min_separation: Option<f64>,
    #[arg(long)]
    pub prototype_overlap: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl GenDataArgs {
    pub fn spec(&self) -> SynthSpec {
        let mut s = match self.preset {
            Preset::Default => SynthSpec::default(),
            Preset::Hard => SynthSpec::hard(),
        };
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { s.$f = v; } )* };
        }
        apply!(
            num_identities,
            num_test_identities,
            instances_per_identity,
            dims,
            num_cameras,
            intra_spread,
            camera_shift,
            camera_shared,
            min_separation,
            prototype_overlap,
            seed
        );
        s
    }
}

/// Every [`TrainConfig`] field as an optional override, plus a JSON file.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// JSON file with TrainConfig fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub tau_c: Option<f64>,
    #[arg(long)]
    pub tau_ins: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub num_identities_per_batch: Option<usize>,
    #[arg(long)]
    pub instances_per_identity: Option<usize>,
    #[arg(long)]
    pub slots_per_cluster: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub lr_decay_every: Option<usize>,
    #[arg(long)]
    pub lr_decay_factor: Option<f64>,
    #[arg(long)]
    pub dbscan_eps: Option<f64>,
    #[arg(long)]
    pub dbscan_min_pts: Option<usize>,
    #[arg(long)]
    pub kreciprocal_k: Option<usize>,
    #[arg(long)]
    pub euclidean_blend: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    /// Defaults, then the config file, then flags; validated.
    pub fn resolve(&self) -> CliResult<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                TrainConfig::from_json(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        apply!(
            mu,
            tau_c,
            tau_ins,
            alpha,
            num_identities_per_batch,
            instances_per_identity,
            slots_per_cluster,
            epochs,
            lr,
            weight_decay,
            lr_decay_every,
            lr_decay_factor,
            dbscan_eps,
            dbscan_min_pts,
            kreciprocal_k,
            euclidean_blend,
            seed
        );
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Embed through this model first; raw features are L2-normalized otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub kreciprocal_k: usize,
    #[arg(long, default_value_t = 0.45)]
    pub dbscan_eps: f64,
    #[arg(long, default_value_t = 4)]
    pub dbscan_min_pts: usize,
    #[arg(long, default_value_t = 0.0)]
    pub euclidean_blend: f64,
}

impl ClusterArgs {
    pub fn params(&self) -> ClusterParams {
        ClusterParams {
            k: self.kreciprocal_k,
            eps: self.dbscan_eps,
            min_pts: self.dbscan_min_pts,
            euclidean_blend: self.euclidean_blend,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, requires = "gallery")]
    pub query: Option<PathBuf>,
    #[arg(long, requires = "query")]
    pub gallery: Option<PathBuf>,
    /// Layer widths after the input, e.g. `128,64`.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Also write metrics.json, per_query.csv and a manifest here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Keep same-identity same-camera gallery entries.
    #[arg(long)]
    pub no_junk_filter: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated mu values, e.g. `0,0.25,0.5,0.75,1`.
    #[arg(long = "mu-values", value_delimiter = ',', required = true)]
    pub mu_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[command(flatten)]
    pub config: ConfigArgs,
}
