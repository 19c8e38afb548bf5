//! The five pipeline stages. Each reads its inputs from the run config,
//! writes its artifacts under the output directory and records their hashes
//! in `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ccc_core::audit::{self, CccBatch, CccReport, GridImage, TileAnnotation};
use ccc_core::data::{epoch_permutation, LabeledDataset};
use ccc_core::inversion::{run_inversion, LossBreakdown};
use ccc_core::models::{train_classifier as fit, Checkpoint, Classifier, Generator};
use ccc_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::cli::Command;
use crate::config::{RunConfig, SplitPaths};
use crate::error::{Error, Result};
use crate::io;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const LOSS_HISTORY_FILE: &str = "loss_history.jsonl";
pub const REPORT_FILE: &str = "report.jsonl";
pub const GRID_SIDECAR_FILE: &str = "grid.json";

/// Hash of one artifact, keyed by artifact name in the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: PathBuf,
    pub sha256: String,
}

pub type Manifest = BTreeMap<String, ArtifactEntry>;

/// Resolves the config and runs the command.
pub fn run(command: &Command) -> Result<()> {
    let cfg = command.args().resolve()?;
    match command {
        Command::TrainClassifier(_) => train_classifier(&cfg).map(drop),
        Command::Invert(_) => invert(&cfg).map(drop),
        Command::GenerateCcc(_) => generate_ccc(&cfg).map(drop),
        Command::Audit(_) => audit(&cfg).map(drop),
        Command::ExportGrid(_) => export_grid(&cfg).map(drop),
    }
}

fn path<'a>(key: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("`{key}` is not set")))
}

/// Echoes the resolved config into the output directory.
fn prepare(cfg: &RunConfig) -> Result<()> {
    io::write(&cfg.output_dir.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())
}

pub fn read_manifest(output_dir: &Path) -> Result<Manifest> {
    let path = output_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(Manifest::new());
    }
    serde_json::from_slice(&io::read(&path)?).map_err(|e| Error::format(&path, e.to_string()))
}

fn record(cfg: &RunConfig, name: &str, path: &Path, bytes: &[u8]) -> Result<()> {
    let mut manifest = read_manifest(&cfg.output_dir)?;
    manifest.insert(
        name.to_string(),
        ArtifactEntry {
            path: path.to_path_buf(),
            sha256: io::sha256_hex(bytes),
        },
    );
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    io::write(&cfg.output_dir.join(MANIFEST_FILE), text.as_bytes())
}

fn write_artifact(cfg: &RunConfig, name: &str, path: &Path, bytes: &[u8]) -> Result<()> {
    io::write(path, bytes)?;
    record(cfg, name, path, bytes)
}

fn load_split(cfg: &RunConfig, paths: SplitPaths, split: &str) -> Result<LabeledDataset> {
    let name = format!("{}-{split}", cfg.dataset.name());
    match paths {
        SplitPaths::Idx { images, labels } => io::load_idx(&name, &images, &labels),
        SplitPaths::Cifar(files) => io::load_cifar10(&name, &files),
    }
}

pub fn load_train(cfg: &RunConfig) -> Result<LabeledDataset> {
    let data = load_split(cfg, cfg.train_paths()?, "train")?;
    if cfg.train_limit > 0 && cfg.train_limit < data.len() {
        return Ok(data.head(cfg.train_limit)?);
    }
    Ok(data)
}

pub fn load_test(cfg: &RunConfig) -> Result<LabeledDataset> {
    load_split(cfg, cfg.test_paths()?, "test")
}

/// Loads the classifier and checks it against the hash recorded when it was
/// trained into this run directory.
pub fn load_classifier(cfg: &RunConfig) -> Result<Classifier<f32>> {
    let path = path("classifier", &cfg.classifier)?;
    let checkpoint = io::load_checkpoint(path, "classifier")?;
    if let Some(entry) = read_manifest(&cfg.output_dir)?.get("classifier") {
        if entry.path == path && entry.sha256 != io::sha256_hex(&io::read(path)?) {
            return Err(Error::ClassifierModified("loading"));
        }
    }
    Ok(Classifier::from_checkpoint(&checkpoint)?)
}

pub fn load_generator(cfg: &RunConfig) -> Result<Generator<f32>> {
    let checkpoint = io::load_checkpoint(path("generator", &cfg.generator)?, "generator")?;
    Ok(Generator::from_checkpoint(&checkpoint)?)
}

pub fn load_samples(cfg: &RunConfig) -> Result<Vec<CccBatch>> {
    let path = path("samples", &cfg.samples)?;
    if !path.exists() {
        return Err(Error::MissingArtifact("samples"));
    }
    Ok(io::load_samples(path)?.1)
}

fn checkpoint_bytes(checkpoint: &Checkpoint) -> Result<Vec<u8>> {
    crate::format::encode_checkpoint(checkpoint)
}

pub fn train_classifier(cfg: &RunConfig) -> Result<Classifier<f32>> {
    let config = cfg.classifier_config()?;
    let train = load_train(cfg)?;
    let test = load_test(cfg)?;
    prepare(cfg)?;
    let hyper = cfg.train_config();
    let steps_per_epoch = train.len().div_ceil(hyper.batch_size.max(1)) as u64;
    let model = fit(&train, Some(&test), config, &hyper, |p| {
        if p.step % 100 == 0 || p.step % steps_per_epoch == 0 {
            eprintln!("epoch {} step {} loss {:.4}", p.epoch + 1, p.step, p.loss);
        }
    })?;
    let bytes = checkpoint_bytes(&model.to_checkpoint())?;
    write_artifact(cfg, "classifier", path("classifier", &cfg.classifier)?, &bytes)?;
    let metrics = serde_json::to_string_pretty(&model.metrics).expect("metrics serialize");
    let metrics_path = cfg.output_dir.join(METRICS_FILE);
    write_artifact(cfg, "metrics", &metrics_path, metrics.as_bytes())?;
    if let Some(acc) = model.metrics.get("test_accuracy") {
        eprintln!("test accuracy {acc:.4}");
    }
    Ok(model)
}

/// One JSON object per line, in step order.
pub fn loss_history_jsonl(history: &[LossBreakdown]) -> String {
    history
        .iter()
        .map(|b| serde_json::to_string(b).expect("loss breakdown serializes") + "\n")
        .collect()
}

pub fn invert(cfg: &RunConfig) -> Result<Vec<LossBreakdown>> {
    let classifier = load_classifier(cfg)?;
    let inversion = cfg.inversion_config()?;
    let generator_config = cfg.generator_config()?;
    prepare(cfg)?;
    let before = classifier.fingerprint();
    let outcome = run_inversion(&classifier, generator_config, &inversion, |b| {
        if (b.step + 1) % 100 == 0 {
            eprintln!(
                "step {} total {:.4} kl {:.4} cos {:.4} confidence {:.4}",
                b.step + 1,
                b.total,
                b.kl,
                b.cosine,
                b.mean_confidence
            );
        }
    })?;
    if classifier.fingerprint() != before {
        return Err(Error::ClassifierModified("inversion"));
    }
    let bytes = checkpoint_bytes(&outcome.generator.to_checkpoint())?;
    write_artifact(cfg, "generator", path("generator", &cfg.generator)?, &bytes)?;
    let history = loss_history_jsonl(&outcome.history);
    write_artifact(cfg, "loss_history", &cfg.output_dir.join(LOSS_HISTORY_FILE), history.as_bytes())?;
    Ok(outcome.history)
}

/// Class `c` draws from `derive_seed(emit_seed, c)`.
pub fn emit(generator: &Generator<f32>, classifier: &Classifier<f32>, count: usize, seed: u64) -> Result<Vec<CccBatch>> {
    (0..generator.config().classes)
        .map(|c| Ok(audit::generate_ccc(generator, classifier, c, count, derive_seed(seed, c as u64))?))
        .collect()
}

pub fn generate_ccc(cfg: &RunConfig) -> Result<Vec<CccBatch>> {
    let classifier = load_classifier(cfg)?;
    let generator = load_generator(cfg)?;
    prepare(cfg)?;
    let before = classifier.fingerprint();
    let batches = emit(&generator, &classifier, cfg.samples_per_class, cfg.emit_seed)?;
    if classifier.fingerprint() != before {
        return Err(Error::ClassifierModified("generation"));
    }
    let bytes = io::encode_samples(&batches, generator.config().output, cfg.emit_seed)?;
    write_artifact(cfg, "samples", path("samples", &cfg.samples)?, &bytes)?;
    Ok(batches)
}

/// Reference rows for nearest-neighbour search: `n` training images drawn
/// without replacement by `seed`, kept in index order (0 = all).
pub fn nn_reference(train: &LabeledDataset, n: usize, seed: u64) -> Vec<f32> {
    if n == 0 || n >= train.len() {
        return train.images().data().to_vec();
    }
    let mut picked = epoch_permutation(train.len(), seed, 0);
    picked.truncate(n);
    picked.sort_unstable();
    train.gather(&picked).0
}

/// Trailing line of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFooter {
    pub aggregates: audit::Aggregates,
    pub reference_images: usize,
    pub baseline_images: usize,
    pub classifier_fingerprint: String,
}

/// Records one per line, then the aggregates.
pub fn report_jsonl(report: &CccReport, footer: &ReportFooter) -> String {
    let mut out: String = report
        .records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect();
    out += &serde_json::to_string(footer).expect("aggregates serialize");
    out.push('\n');
    out
}

pub fn audit(cfg: &RunConfig) -> Result<CccReport> {
    cfg.validate_thresholds()?;
    let classifier = load_classifier(cfg)?;
    let batches = load_samples(cfg)?;
    let train = load_train(cfg)?;
    let test = load_test(cfg)?;
    prepare(cfg)?;
    let before = classifier.fingerprint();
    let dim = train.image_shape().len();
    if batches.iter().any(|b| b.shape.len() != dim) {
        return Err(Error::Config("samples do not match the dataset image shape".into()));
    }
    let reference = nn_reference(&train, cfg.nn_reference, cfg.nn_seed);
    let queries: Vec<f32> = batches.iter().flat_map(|b| b.pixels.iter().copied()).collect();
    let distances = audit::nn_distance(&queries, &reference, dim)?;
    let baseline_images = cfg.baseline_count.min(test.len());
    let baseline = if baseline_images > 0 {
        let held_out = &test.images().data()[..baseline_images * dim];
        let d = audit::nn_distance(held_out, &reference, dim)?;
        Some(d.iter().sum::<f64>() / d.len() as f64)
    } else {
        None
    };
    let report = CccReport::build(&batches, Some(&distances), baseline, &cfg.thresholds)?;
    if classifier.fingerprint() != before {
        return Err(Error::ClassifierModified("audit"));
    }
    let footer = ReportFooter {
        aggregates: report.aggregates.clone(),
        reference_images: reference.len() / dim,
        baseline_images,
        classifier_fingerprint: format!("{before:016x}"),
    };
    let text = report_jsonl(&report, &footer);
    write_artifact(cfg, "report", &cfg.output_dir.join(REPORT_FILE), text.as_bytes())?;
    let a = &report.aggregates;
    eprintln!(
        "samples {} mean confidence {:.4} fidelity {:.4} nn {:.3} baseline {:.3}",
        a.count,
        a.mean_confidence,
        a.label_fidelity,
        a.mean_nn_distance.unwrap_or(f64::NAN),
        a.baseline_nn_distance.unwrap_or(f64::NAN)
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub image: String,
    pub rows: usize,
    pub columns: usize,
    pub tiles: Vec<TileAnnotation>,
}

pub fn export_grid(cfg: &RunConfig) -> Result<GridImage> {
    let batches = load_samples(cfg)?;
    prepare(cfg)?;
    let grid = GridImage::tile(&batches, cfg.grid_columns)?;
    let name = if grid.channels == 1 { "grid.pgm" } else { "grid.ppm" };
    write_artifact(cfg, "grid", &cfg.output_dir.join(name), &grid.to_pnm()?)?;
    let sidecar = GridSidecar {
        image: name.to_string(),
        rows: batches.len(),
        columns: cfg.grid_columns,
        tiles: grid.annotations.clone(),
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    write_artifact(cfg, "grid_sidecar", &cfg.output_dir.join(GRID_SIDECAR_FILE), text.as_bytes())?;
    Ok(grid)
}
