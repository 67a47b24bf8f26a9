use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iciia::data::{SplitMode, SyntheticSpec};
use iciia::harness::AblationTag;
use iciia::train::TrainConfig;
use iciia::IciiaConfig;

#[derive(Debug, Parser)]
#[command(name = "iciia", version, about = "Client-adaptive attention over image features")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Dataset directory holding train/val/test CSV files and meta.json.
    #[arg(long, global = true, default_value = "data")]
    pub data_dir: PathBuf,
    /// Model checkpoint: written by training commands, read by evaluation.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Report destination (CSV or JSON); standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Arithmetic precision for training and evaluation.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic client dataset into --data-dir.
    GenData(SpecArgs),
    /// Pretrain the global linear classifier on pooled training records.
    TrainBackbone(TrainArgs),
    /// Train the attention module on top of a pretrained classifier.
    TrainIciia {
        /// Checkpoint of the pretrained classifier.
        #[arg(long)]
        backbone: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "none")]
        ablation: AblationTag,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Fine-tune the classifier per client and evaluate on its test records.
    Finetune {
        #[arg(long)]
        backbone: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Evaluate a checkpoint with per-client history windows.
    Evaluate {
        /// Previous images per target.
        #[arg(long, default_value_t = 15)]
        history: usize,
        /// Serve with the classifier alone until a client has this many history images.
        #[arg(long, default_value_t = 0)]
        cold_start: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Parameter and FLOP counts as CSV.
    Overhead {
        #[arg(long, default_value_t = 3)]
        layers: usize,
        /// Window size B.
        #[arg(long, default_value_t = 16)]
        window: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        /// Count a single feature width instead of the listed backbones.
        #[arg(long)]
        feature_dim: Option<usize>,
        /// Partition counts for --feature-dim (default: every divisor).
        #[arg(long, value_delimiter = ',')]
        partitions: Option<Vec<usize>>,
        #[arg(long, requires = "backbone_flops")]
        backbone_params: Option<u64>,
        #[arg(long, requires = "backbone_params")]
        backbone_flops: Option<u64>,
    },
    /// Evaluate a checkpoint at several history sizes.
    SweepHistory {
        #[arg(long, value_delimiter = ',', default_value = "0,1,3,5,7,15,31")]
        m_values: Vec<usize>,
    },
    /// Train and evaluate one module per partition count and depth.
    SweepPartitions {
        #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
        p_values: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2")]
        n_values: Vec<usize>,
        #[command(flatten)]
        repeat: RepeatArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Regenerate data per heterogeneity level and compare methods.
    SweepHeterogeneity {
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
        rho_values: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        repeats: u64,
        #[arg(long, default_value_t = 15)]
        history: usize,
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train one module per ablation tag and report accuracy deltas.
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "no_attention,no_partition,no_shuffle")]
        tags: Vec<AblationTag>,
        #[command(flatten)]
        repeat: RepeatArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
}

/// Generator settings; omitted flags keep the generator defaults.
#[derive(Clone, Debug, Default, Args)]
pub struct SpecArgs {
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Parent categories G.
    #[arg(long)]
    pub num_groups: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub clients_train: Option<usize>,
    #[arg(long)]
    pub clients_val: Option<usize>,
    #[arg(long)]
    pub clients_test: Option<usize>,
    #[arg(long)]
    pub samples_per_client: Option<usize>,
    /// Smallest class count k of a restricted client.
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Fraction of clients restricted to one parent category.
    #[arg(long)]
    pub heterogeneity: Option<f64>,
    #[arg(long)]
    pub split_mode: Option<SplitMode>,
}

impl SpecArgs {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        let d = SyntheticSpec::default();
        SyntheticSpec {
            num_classes: self.num_classes.unwrap_or(d.num_classes),
            num_groups: self.num_groups.unwrap_or(d.num_groups),
            feature_dim: self.feature_dim.unwrap_or(d.feature_dim),
            clients_train: self.clients_train.unwrap_or(d.clients_train),
            clients_val: self.clients_val.unwrap_or(d.clients_val),
            clients_test: self.clients_test.unwrap_or(d.clients_test),
            samples_per_client: self.samples_per_client.unwrap_or(d.samples_per_client),
            classes_per_client: (
                self.k_min.unwrap_or(d.classes_per_client.0),
                self.k_max.unwrap_or(d.classes_per_client.1),
            ),
            noise_sigma: self.noise_sigma.unwrap_or(d.noise_sigma),
            heterogeneity: self.heterogeneity.unwrap_or(d.heterogeneity),
            split_mode: self.split_mode.unwrap_or(d.split_mode),
            seed,
        }
    }
}

/// Optimizer settings; omitted flags keep the training defaults.
#[derive(Clone, Debug, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Update the classifier together with the module.
    #[arg(long)]
    pub unfreeze_classifier: bool,
}

impl TrainArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            momentum: self.momentum.unwrap_or(d.momentum),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            patience: self.patience.unwrap_or(d.patience),
            seed,
            freeze_classifier: !self.unfreeze_classifier,
            ..d
        }
    }
}

/// Module shape; the feature width comes from the data.
#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 1)]
    pub partitions: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long)]
    pub train_window: Option<usize>,
    #[arg(long)]
    pub max_history: Option<usize>,
}

impl ModelArgs {
    pub fn config(&self, feature_dim: usize) -> IciiaConfig {
        let d = IciiaConfig::default();
        IciiaConfig {
            train_window: self.train_window.unwrap_or(d.train_window),
            max_history: self.max_history.unwrap_or(d.max_history),
            ..IciiaConfig::new(feature_dim, self.heads, self.partitions, self.layers)
        }
    }
}

/// Repeated runs over consecutive seeds starting at --seed.
#[derive(Clone, Debug, Args)]
pub struct RepeatArgs {
    #[arg(long, default_value_t = 3)]
    pub repeats: u64,
    /// Images of history at evaluation.
    #[arg(long, default_value_t = 15)]
    pub history: usize,
    /// Generate fresh synthetic data per seed instead of reading --data-dir.
    #[arg(long)]
    pub synthetic: bool,
    #[command(flatten)]
    pub spec: SpecArgs,
}
