//! Command-line surface. Every config key has a flag of the same name in
//! kebab case; flags win over the config file.

use std::path::PathBuf;

use ccc_core::inversion::InversionMode;
use ccc_core::models::{AxisChoice, Downsample};
use clap::{Args, Parser, Subcommand};

use crate::config::{parse_value, DatasetKind, RunConfig};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "ccc", version, about = "Train a classifier, invert it into confidently classified counterfeits, audit them")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the classifier; writes classifier.ccck and metrics.json.
    TrainClassifier(RunArgs),
    /// Train a generator against the frozen classifier; writes generator.ccck and loss_history.jsonl.
    Invert(RunArgs),
    /// Emit one-hot conditioned samples for every class; writes samples.cccs.
    GenerateCcc(RunArgs),
    /// Confidence, bypass and nearest-neighbour audit; writes report.jsonl.
    Audit(RunArgs),
    /// Tile the emitted samples into a PGM/PPM grid with a confidence sidecar.
    ExportGrid(RunArgs),
}

impl Command {
    pub fn args(&self) -> &RunArgs {
        match self {
            Command::TrainClassifier(a)
            | Command::Invert(a)
            | Command::GenerateCcc(a)
            | Command::Audit(a)
            | Command::ExportGrid(a) => a,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML config file.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Shorthand for `--mode soft`.
    #[arg(long)]
    pub soft: bool,
    /// Shorthand for `--mode one_hot_ccc`.
    #[arg(long)]
    pub ccc: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, value_parser = parse_value::<DatasetKind>)]
    pub dataset: Option<DatasetKind>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long)]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long)]
    pub cifar_dir: Option<PathBuf>,
    #[arg(long)]
    pub train_limit: Option<usize>,
    #[arg(long, short = 'o')]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<PathBuf>,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub classifier_seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub conv_channels: Option<Vec<usize>>,
    #[arg(long)]
    pub fc_width: Option<usize>,
    #[arg(long, value_parser = parse_value::<Downsample>)]
    pub downsample: Option<Downsample>,
    #[arg(long)]
    pub dropout: Option<f64>,

    #[arg(long, value_parser = parse_value::<InversionMode>)]
    pub mode: Option<InversionMode>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub inversion_batch_size: Option<usize>,
    #[arg(long)]
    pub inversion_lr: Option<f64>,
    #[arg(long)]
    pub inversion_seed: Option<u64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub generator_dropout: Option<f64>,
    #[arg(long, value_parser = parse_value::<AxisChoice>)]
    pub axis: Option<AxisChoice>,

    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub emit_seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long)]
    pub nn_reference: Option<usize>,
    #[arg(long)]
    pub nn_seed: Option<u64>,
    #[arg(long)]
    pub baseline_count: Option<usize>,
    #[arg(long)]
    pub grid_columns: Option<usize>,
}

macro_rules! apply {
    ($cfg:ident, $o:ident; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $o.$field.clone() { $cfg.$field = v; })*
    };
}

macro_rules! apply_opt {
    ($cfg:ident, $o:ident; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $o.$field.clone() { $cfg.$field = Some(v); })*
    };
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let o = self;
        apply!(cfg, o; dataset, train_limit, output_dir, epochs, batch_size, lr, classifier_seed,
            conv_channels, fc_width, downsample, dropout, mode, alpha, beta, gamma, steps,
            inversion_batch_size, inversion_lr, inversion_seed, latent_dim, generator_dropout, axis,
            samples_per_class, emit_seed, thresholds, nn_reference, nn_seed, baseline_count, grid_columns);
        apply_opt!(cfg, o; data_root, train_images, train_labels, test_images, test_labels, cifar_dir,
            classifier, generator, samples);
    }
}

impl RunArgs {
    /// The mode requested on the command line, if any.
    fn mode(&self) -> Result<Option<InversionMode>> {
        let mut requested = Vec::new();
        if let Some(m) = self.overrides.mode {
            requested.push(m);
        }
        if self.soft {
            requested.push(InversionMode::Soft);
        }
        if self.ccc {
            requested.push(InversionMode::OneHotCcc);
        }
        match requested.split_first() {
            None => Ok(None),
            Some((first, rest)) if rest.iter().all(|m| m == first) => Ok(Some(*first)),
            Some(_) => Err(Error::Config("conflicting mode flags".into())),
        }
    }

    /// File, then flags, then derived paths. Seeds always come from the
    /// file or flags, never the clock.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mode = self.mode()?;
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.overrides.apply(&mut cfg);
        if let Some(m) = mode {
            cfg.mode = m;
        }
        cfg.resolve();
        Ok(cfg)
    }
}
