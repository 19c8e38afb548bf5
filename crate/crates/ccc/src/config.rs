//! Run configuration: a flat TOML file, overridden key by key from the
//! command line.

use std::path::{Path, PathBuf};

use ccc_core::audit::DEFAULT_THRESHOLDS;
use ccc_core::autograd::AdamConfig;
use ccc_core::data::ImageShape;
use ccc_core::inversion::{InversionConfig, InversionMode, LossWeights};
use ccc_core::models::{AxisChoice, ClassifierConfig, Downsample, GeneratorConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming the default data root.
pub const DATA_ROOT_ENV: &str = "CCC_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion_mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    pub fn shape(self) -> ImageShape {
        match self {
            DatasetKind::Cifar10 => ImageShape::RGB_32,
            _ => ImageShape::GRAY_28,
        }
    }

    /// Directory under the data root.
    fn dir(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion-mnist",
            DatasetKind::Cifar10 => "cifar-10-batches-bin",
        }
    }
}

/// Every knob of the pipeline. Field names are the TOML keys; each has a
/// `--kebab-case` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_root: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub cifar_dir: Option<PathBuf>,
    /// Use only the first `train_limit` training images (0 = all).
    pub train_limit: usize,
    pub output_dir: PathBuf,
    pub classifier: Option<PathBuf>,
    pub generator: Option<PathBuf>,
    pub samples: Option<PathBuf>,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub classifier_seed: u64,
    pub conv_channels: Vec<usize>,
    pub fc_width: usize,
    pub downsample: Downsample,
    pub dropout: f64,

    pub mode: InversionMode,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub steps: usize,
    pub inversion_batch_size: usize,
    pub inversion_lr: f64,
    pub inversion_seed: u64,
    pub latent_dim: usize,
    pub generator_dropout: f64,
    pub axis: AxisChoice,

    pub samples_per_class: usize,
    pub emit_seed: u64,
    pub thresholds: Vec<f64>,
    /// Training images scanned for nearest neighbours (0 = all).
    pub nn_reference: usize,
    pub nn_seed: u64,
    /// Held-out test images measured as the in-distribution baseline.
    pub baseline_count: usize,
    pub grid_columns: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let inv = InversionConfig::default();
        let train = TrainConfig::default();
        let cls = ClassifierConfig::standard(ImageShape::GRAY_28, 10);
        Self {
            dataset: DatasetKind::Mnist,
            data_root: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            cifar_dir: None,
            train_limit: 0,
            output_dir: PathBuf::from("runs/default"),
            classifier: None,
            generator: None,
            samples: None,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.adam.lr,
            classifier_seed: 0,
            conv_channels: cls.conv_channels,
            fc_width: cls.fc_widths[0],
            downsample: cls.downsample,
            dropout: cls.dropout,
            mode: inv.mode,
            alpha: inv.weights.alpha,
            beta: inv.weights.beta,
            gamma: inv.weights.gamma,
            steps: inv.steps,
            inversion_batch_size: inv.batch_size,
            inversion_lr: inv.adam.lr,
            inversion_seed: 0,
            latent_dim: 64,
            generator_dropout: 0.3,
            axis: inv.axis,
            samples_per_class: 100,
            emit_seed: 0,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            nn_reference: 10_000,
            nn_seed: 0,
            baseline_count: 1000,
            grid_columns: 10,
        }
    }
}

/// Paths of one dataset split.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitPaths {
    Idx { images: PathBuf, labels: PathBuf },
    Cifar(Vec<PathBuf>),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Data root from the config, else the environment, else `data`.
    pub fn resolved_data_root(&self) -> PathBuf {
        self.data_root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    /// Fills every defaulted path so the echoed config is self-contained.
    pub fn resolve(&mut self) {
        let root = self.resolved_data_root();
        let dir = root.join(self.dataset.dir());
        match self.dataset {
            DatasetKind::Cifar10 => {
                self.cifar_dir.get_or_insert(dir);
            }
            _ => {
                self.train_images.get_or_insert_with(|| dir.join("train-images-idx3-ubyte"));
                self.train_labels.get_or_insert_with(|| dir.join("train-labels-idx1-ubyte"));
                self.test_images.get_or_insert_with(|| dir.join("t10k-images-idx3-ubyte"));
                self.test_labels.get_or_insert_with(|| dir.join("t10k-labels-idx1-ubyte"));
            }
        }
        self.data_root = Some(root);
        let out = self.output_dir.clone();
        self.classifier.get_or_insert_with(|| out.join("classifier.ccck"));
        self.generator.get_or_insert_with(|| out.join("generator.ccck"));
        self.samples.get_or_insert_with(|| out.join("samples.cccs"));
    }

    fn existing(key: &'static str, path: &Option<PathBuf>) -> Result<PathBuf> {
        let path = path.clone().ok_or(Error::Config(format!("`{key}` is not set")))?;
        if !path.exists() {
            return Err(Error::MissingPath { key, path });
        }
        Ok(path)
    }

    /// Paths of the training split; each must exist.
    pub fn train_paths(&self) -> Result<SplitPaths> {
        match self.dataset {
            DatasetKind::Cifar10 => {
                let dir = Self::existing("cifar_dir", &self.cifar_dir)?;
                let files = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
                Self::cifar_files("cifar_dir", files)
            }
            _ => Ok(SplitPaths::Idx {
                images: Self::existing("train_images", &self.train_images)?,
                labels: Self::existing("train_labels", &self.train_labels)?,
            }),
        }
    }

    pub fn test_paths(&self) -> Result<SplitPaths> {
        match self.dataset {
            DatasetKind::Cifar10 => {
                let dir = Self::existing("cifar_dir", &self.cifar_dir)?;
                Self::cifar_files("cifar_dir", vec![dir.join("test_batch.bin")])
            }
            _ => Ok(SplitPaths::Idx {
                images: Self::existing("test_images", &self.test_images)?,
                labels: Self::existing("test_labels", &self.test_labels)?,
            }),
        }
    }

    fn cifar_files(key: &'static str, files: Vec<PathBuf>) -> Result<SplitPaths> {
        if let Some(missing) = files.iter().find(|p| !p.exists()) {
            return Err(Error::MissingPath {
                key,
                path: missing.clone(),
            });
        }
        Ok(SplitPaths::Cifar(files))
    }

    pub fn classifier_config(&self) -> Result<ClassifierConfig> {
        let mut c = ClassifierConfig::standard(self.dataset.shape(), 10);
        c.conv_channels = self.conv_channels.clone();
        c.fc_widths = vec![self.fc_width, 10];
        c.downsample = self.downsample;
        c.dropout = self.dropout;
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig::with_lr(self.lr),
            seed: self.classifier_seed,
        }
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let mut g = GeneratorConfig::standard(10, self.dataset.shape())?;
        g.latent_dim = self.latent_dim;
        g.dropout = self.generator_dropout;
        g.validate()?;
        Ok(g)
    }

    pub fn inversion_config(&self) -> Result<InversionConfig> {
        let c = InversionConfig {
            mode: self.mode,
            weights: LossWeights::new(self.alpha, self.beta, self.gamma)?,
            steps: self.steps,
            batch_size: self.inversion_batch_size,
            adam: AdamConfig::with_lr(self.inversion_lr),
            seed: self.inversion_seed,
            axis: self.axis,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate_thresholds(&self) -> Result<()> {
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::Config("`thresholds` must be non-empty values in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Parses a flag value through the same names the config file uses.
pub fn parse_value<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(text)).map_err(|e| e.to_string())
}
