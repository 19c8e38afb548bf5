//! Labeled image datasets decoded from their published binary layouts.
//!
//! Decoding works on byte slices; reading files is left to the caller.
//!
//! * IDX (MNIST, FashionMNIST): big-endian `u32` magic (`0x00000803` for
//!   images, `0x00000801` for labels), then one big-endian `u32` per
//!   dimension, then unsigned bytes.
//! * CIFAR-10 binary: 3073-byte records, one label byte followed by the
//!   32×32 red, green and blue planes.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::rng;
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;
const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const GRAY_28: ImageShape = ImageShape::new(1, 28, 28);
    pub const RGB_32: ImageShape = ImageShape::new(3, 32, 32);

    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_batch(&self, batch: usize) -> [usize; 4] {
        [batch, self.channels, self.height, self.width]
    }
}

/// Images in `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    images: Tensor<f32>,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, images: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let &[n, c, h, w] = images.shape() else {
            return Err(Error::invalid("dataset", "images must be [N, C, H, W]"));
        };
        let shape = ImageShape::new(c, h, w);
        if shape != ImageShape::GRAY_28 && shape != ImageShape::RGB_32 {
            return Err(Error::invalid("dataset", "images must be 1×28×28 or 3×32×32"));
        }
        if labels.len() != n {
            return Err(Error::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn image_shape(&self) -> ImageShape {
        let s = self.images.shape();
        ImageShape::new(s[1], s[2], s[3])
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let len = self.image_shape().len();
        &self.images.data()[index * len..(index + 1) * len]
    }

    /// Copies the selected samples into a contiguous batch.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f32>, Vec<usize>) {
        let mut images = Vec::with_capacity(indices.len() * self.image_shape().len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// First `n` samples (all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        let indices: Vec<usize> = (0..n).collect();
        let (images, labels) = self.gather(&indices);
        let images = Tensor::from_vec(&self.image_shape().with_batch(n), images)?;
        Self::new(self.name.clone(), images, labels, self.classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.classes];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or(Error::Truncated {
            expected: end,
            found: self.bytes.len(),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
    }

    fn rest(&self, expected: usize) -> Result<&'a [u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < expected {
            return Err(Error::Truncated {
                expected: self.pos + expected,
                found: self.bytes.len(),
            });
        }
        Ok(&rest[..expected])
    }
}

fn expect_magic(reader: &mut Reader<'_>, expected: u32) -> Result<()> {
    let found = reader.u32()?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

/// Decodes an IDX image file and its label file.
pub fn parse_idx(name: &str, images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let mut img = Reader { bytes: images, pos: 0 };
    expect_magic(&mut img, IDX_IMAGES_MAGIC)?;
    let n = img.u32()? as usize;
    let (h, w) = (img.u32()? as usize, img.u32()? as usize);

    let mut lab = Reader { bytes: labels, pos: 0 };
    expect_magic(&mut lab, IDX_LABELS_MAGIC)?;
    let n_labels = lab.u32()? as usize;
    if n != n_labels {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    if n == 0 {
        return Err(Error::Empty { op: "parse_idx" });
    }
    let pixels = img.rest(n * h * w)?;
    let label_bytes = lab.rest(n)?;
    let data = pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
    let images = Tensor::from_vec(&[n, 1, h, w], data)?;
    let labels = label_bytes.iter().map(|&l| usize::from(l)).collect();
    LabeledDataset::new(name, images, labels, CLASSES)
}

/// Decodes one or more CIFAR-10 binary batch files into a single dataset.
pub fn parse_cifar10(name: &str, files: &[&[u8]]) -> Result<LabeledDataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for bytes in files {
        if bytes.len() % CIFAR_RECORD_LEN != 0 {
            return Err(Error::WrongRecordSize {
                len: bytes.len(),
                record: CIFAR_RECORD_LEN,
            });
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            let label = usize::from(record[0]);
            if label >= CLASSES {
                return Err(Error::LabelOutOfRange { label, classes: CLASSES });
            }
            labels.push(label);
            data.extend(record[1..].iter().map(|&p| f32::from(p) / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::Empty { op: "parse_cifar10" });
    }
    let images = Tensor::from_vec(&ImageShape::RGB_32.with_batch(labels.len()), data)?;
    LabeledDataset::new(name, images, labels, CLASSES)
}

/// Per-channel `(x − mean) / std` constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::invalid("normalize", "mean and std need one entry per channel"));
        }
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("normalize", "std must be positive"));
        }
        Ok(Self { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            mean: alloc::vec![0.0; channels],
            std: alloc::vec![1.0; channels],
        }
    }

    /// Population mean and standard deviation of each channel.
    pub fn fit(dataset: &LabeledDataset) -> Result<Self> {
        let shape = dataset.image_shape();
        let plane = shape.height * shape.width;
        let mut mean = Vec::with_capacity(shape.channels);
        let mut std = Vec::with_capacity(shape.channels);
        for c in 0..shape.channels {
            let values = || {
                (0..dataset.len()).flat_map(move |i| dataset.image(i)[c * plane..(c + 1) * plane].iter())
            };
            let count = (dataset.len() * plane) as f64;
            let mu = values().map(|v| f64::from(*v)).sum::<f64>() / count;
            let var = values().map(|v| Float::powi(f64::from(*v) - mu, 2)).sum::<f64>() / count;
            mean.push(mu);
            std.push(var.sqrt());
        }
        Self::new(mean, std)
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `(scale, shift)` such that `normalized = x · scale + shift`.
    pub fn affine(&self) -> (Vec<f64>, Vec<f64>) {
        let scale = self.std.iter().map(|s| 1.0 / s).collect();
        let shift = self.mean.iter().zip(&self.std).map(|(m, s)| -m / s).collect();
        (scale, shift)
    }

    pub fn apply(&self, images: &[f32], shape: ImageShape) -> Vec<f32> {
        self.map(images, shape, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, images: &[f32], shape: ImageShape) -> Vec<f32> {
        self.map(images, shape, |v, m, s| v * s + m)
    }

    fn map(&self, images: &[f32], shape: ImageShape, f: impl Fn(f64, f64, f64) -> f64) -> Vec<f32> {
        let plane = shape.height * shape.width;
        images
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = (i / plane) % shape.channels;
                f(f64::from(*v), self.mean[c], self.std[c]) as f32
            })
            .collect()
    }
}

/// Normalized copy of every image in `dataset`.
pub fn normalize(dataset: &LabeledDataset, norm: &Normalization) -> Result<Tensor<f32>> {
    let shape = dataset.image_shape();
    if norm.channels() != shape.channels {
        return Err(Error::invalid("normalize", "channel count differs"));
    }
    Tensor::from_vec(dataset.images().shape(), norm.apply(dataset.images().data(), shape))
}

pub fn denormalize(images: &Tensor<f32>, norm: &Normalization) -> Result<Tensor<f32>> {
    let &[_, c, h, w] = images.shape() else {
        return Err(Error::invalid("denormalize", "images must be [N, C, H, W]"));
    };
    if norm.channels() != c {
        return Err(Error::invalid("denormalize", "channel count differs"));
    }
    Tensor::from_vec(images.shape(), norm.invert(images.data(), ImageShape::new(c, h, w)))
}

/// Order in which epoch `epoch` visits `0..len`; a pure function of its
/// arguments.
pub fn epoch_permutation(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::rng(rng::derive_seed(seed, epoch)));
    order
}

/// One mini-batch of raw (un-normalized) images.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
}

/// Seeded epoch-wise shuffling over a dataset.
#[derive(Debug, Clone)]
pub struct BatchIterator<'a> {
    dataset: &'a LabeledDataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
}

impl<'a> BatchIterator<'a> {
    pub fn new(dataset: &'a LabeledDataset, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batches", "batch size must be at least 1"));
        }
        Ok(Self {
            dataset,
            batch_size,
            seed,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Batches of the current epoch (the last one may be short); advances
    /// the epoch counter.
    pub fn next_epoch(&mut self) -> impl Iterator<Item = Batch> + 'a {
        let order = epoch_permutation(self.dataset.len(), self.seed, self.epoch);
        self.epoch += 1;
        let dataset = self.dataset;
        let size = self.batch_size;
        let count = order.len().div_ceil(size);
        (0..count).map(move |i| {
            let indices = order[i * size..((i + 1) * size).min(order.len())].to_vec();
            let (images, labels) = dataset.gather(&indices);
            Batch {
                indices,
                images,
                labels,
            }
        })
    }
}
