use std::fs;
use std::path::{Path, PathBuf};

use ccc_core::audit::CccBatch;
use ccc_core::data::{self, ImageShape, LabeledDataset};
use ccc_core::models::{Checkpoint, NamedTensor, TensorData};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::format;

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating parent directories.
pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// An IDX image file with its label file.
pub fn load_idx(name: &str, images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let (i, l) = (read(images)?, read(labels)?);
    data::parse_idx(name, &i, &l).map_err(|e| Error::format(images, e.to_string()))
}

/// CIFAR-10 binary batches, concatenated in the given order.
pub fn load_cifar10(name: &str, files: &[PathBuf]) -> Result<LabeledDataset> {
    let bytes = files.iter().map(|p| read(p)).collect::<Result<Vec<_>>>()?;
    let slices: Vec<&[u8]> = bytes.iter().map(Vec::as_slice).collect();
    data::parse_cifar10(name, &slices).map_err(|e| Error::format(&files[0], e.to_string()))
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<Vec<u8>> {
    let bytes = format::encode_checkpoint(checkpoint)?;
    write(path, &bytes)?;
    Ok(bytes)
}

/// Reads a checkpoint; `artifact` names it in the error when absent.
pub fn load_checkpoint(path: &Path, artifact: &'static str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingArtifact(artifact));
    }
    format::decode_checkpoint(&read(path)?, path)
}

pub const SAMPLES_VERSION: u32 = 1;

/// Header of a sample file: everything about each class batch but pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesHeader {
    pub shape: ImageShape,
    pub seed: u64,
    pub classes: Vec<ClassEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class: usize,
    pub predicted: Vec<usize>,
    pub confidences: Vec<f64>,
}

pub fn encode_samples(batches: &[CccBatch], shape: ImageShape, seed: u64) -> Result<Vec<u8>> {
    let header = SamplesHeader {
        shape,
        seed,
        classes: batches
            .iter()
            .map(|b| ClassEntry {
                class: b.class,
                predicted: b.predicted.clone(),
                confidences: b.confidences.clone(),
            })
            .collect(),
    };
    let tensors: Vec<NamedTensor> = batches
        .iter()
        .map(|b| NamedTensor {
            name: format!("pixels.class{}", b.class),
            shape: shape.with_batch(b.len()).to_vec(),
            data: TensorData::F32(b.pixels.clone()),
        })
        .collect();
    format::encode(format::SAMPLES_MAGIC, SAMPLES_VERSION, &header, &tensors)
}

pub fn load_samples(path: &Path) -> Result<(SamplesHeader, Vec<CccBatch>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact("samples"));
    }
    let (header, tensors): (SamplesHeader, _) =
        format::decode(format::SAMPLES_MAGIC, SAMPLES_VERSION, &read(path)?, path)?;
    if tensors.len() != header.classes.len() {
        return Err(Error::format(path, "one pixel tensor per class expected"));
    }
    let mut batches = Vec::with_capacity(tensors.len());
    for (entry, t) in header.classes.iter().zip(tensors) {
        let TensorData::F32(pixels) = t.data else {
            return Err(Error::format(path, "pixels must be f32"));
        };
        let n = entry.confidences.len();
        if entry.predicted.len() != n || t.shape != header.shape.with_batch(n) {
            return Err(Error::format(path, format!("class {} entries disagree", entry.class)));
        }
        batches.push(CccBatch {
            class: entry.class,
            shape: header.shape,
            pixels,
            predicted: entry.predicted.clone(),
            confidences: entry.confidences.clone(),
        });
    }
    Ok((header, batches))
}
