//! Measuring counterfeits: emission, confidence statistics, threshold
//! bypass rates, nearest-neighbour distances to the training set, and grid
//! tiling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::data::ImageShape;
use crate::inversion::GeneratorInputs;
use crate::models::{argmax, AxisChoice, Classifier, Generator};
use crate::real::Real;
use crate::rng;
use crate::{Error, Result};

/// Max-softmax thresholds audited by default.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.9, 0.95, 0.99];

/// Samples are emitted through the networks in chunks of this size.
const EMIT_CHUNK: usize = 100;

/// Counterfeits for one class: `[0, 1]` pixels and the classifier's verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct CccBatch {
    pub class: usize,
    pub shape: ImageShape,
    /// `count × C × H × W` raw pixels.
    pub pixels: Vec<f32>,
    pub predicted: Vec<usize>,
    pub confidences: Vec<f64>,
}

impl CccBatch {
    pub fn len(&self) -> usize {
        self.confidences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidences.is_empty()
    }
}

/// Emits `count` samples conditioned one-hot on `class`, with generator
/// dropout off and running statistics in both networks. A pure function of
/// its arguments.
pub fn generate_ccc<T: Real>(
    generator: &Generator<T>,
    classifier: &Classifier<T>,
    class: usize,
    count: usize,
    seed: u64,
) -> Result<CccBatch> {
    let config = generator.config();
    let k = config.classes;
    if class >= k {
        return Err(Error::LabelOutOfRange { label: class, classes: k });
    }
    if classifier.config().classes != k || classifier.config().input != config.output {
        return Err(Error::invalid("generate_ccc", "generator does not match classifier"));
    }
    let shape = config.output;
    let mut batch = CccBatch {
        class,
        shape,
        pixels: Vec::with_capacity(count * shape.len()),
        predicted: Vec::with_capacity(count),
        confidences: Vec::with_capacity(count),
    };
    let mut rng = rng::rng(seed);
    let mut remaining = count;
    while remaining > 0 {
        let n = remaining.min(EMIT_CHUNK);
        remaining -= n;
        let inputs = GeneratorInputs::one_hot(config, &vec![class; n], AxisChoice::Random, &mut rng)?;
        let mut tape = Tape::new();
        let gen_bound = generator.bind(&mut tape, false);
        let (z, c, h) = inputs.constants(&mut tape, config)?;
        let out = generator.forward(&mut tape, &gen_bound, z, c, h)?;
        let cls_bound = classifier.bind(&mut tape, false);
        let probs = classifier.forward(&mut tape, &cls_bound, out.images)?.probs;
        batch.pixels.extend(tape.data(out.pixels).iter().map(|v| v.as_f64() as f32));
        for row in tape.data(probs).chunks(k) {
            let p = argmax(row);
            batch.predicted.push(p);
            batch.confidences.push(row[p].as_f64());
        }
    }
    Ok(batch)
}

/// Fraction of `confidences` at or above `tau`.
pub fn bypass_rate(confidences: &[f64], tau: f64) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::Empty { op: "bypass_rate" });
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid("bypass_rate", "threshold must lie in (0, 1]"));
    }
    Ok(confidences.iter().filter(|&&c| c >= tau).count() as f64 / confidences.len() as f64)
}

/// Exact squared distance accumulated in `f64`.
fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum()
}

/// Nearest-neighbour Euclidean distance from each of `queries` to
/// `reference` (both row-major, `dim` values per image), by exhaustive scan.
pub fn nn_distance_exhaustive(queries: &[f32], reference: &[f32], dim: usize) -> Result<Vec<f64>> {
    check_nn(queries, reference, dim)?;
    Ok(queries
        .chunks(dim)
        .map(|q| {
            let best = reference
                .chunks(dim)
                .map(|r| squared_distance(q, r))
                .fold(f64::INFINITY, f64::min);
            libm::sqrt(best)
        })
        .collect())
}

fn check_nn(queries: &[f32], reference: &[f32], dim: usize) -> Result<()> {
    if reference.is_empty() {
        return Err(Error::Empty { op: "nn_distance" });
    }
    if dim == 0 || queries.len() % dim != 0 || reference.len() % dim != 0 {
        return Err(Error::invalid("nn_distance", "image lengths differ"));
    }
    Ok(())
}

/// Same result as [`nn_distance_exhaustive`], faster: candidates are screened
/// with `‖q‖² + ‖r‖² − 2 q·r` in single precision, and every reference
/// within the screening error of the best is rescored exactly.
pub fn nn_distance(queries: &[f32], reference: &[f32], dim: usize) -> Result<Vec<f64>> {
    check_nn(queries, reference, dim)?;
    const BLOCK: usize = 1024;
    let nq = queries.len() / dim;
    let norms = |x: &[f32]| -> Vec<f32> { x.chunks(dim).map(|r| r.iter().map(|v| v * v).sum()).collect() };
    let q_norm = norms(queries);
    let r_norm = norms(reference);
    // Bound on the single-precision error of one screened distance, relative
    // to ‖q‖² + ‖r‖²; generous so that no true minimizer is discarded.
    let rel = 8.0 * dim as f64 * f64::from(f32::EPSILON);
    let mut approx = vec![0f32; nq * BLOCK];
    // Per query: the least upper bound on any true squared distance seen so
    // far, and the references whose lower bound does not exceed it.
    let mut upper = vec![f64::INFINITY; nq];
    let mut candidates: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nq];
    for (block, refs) in reference.chunks(BLOCK * dim).enumerate() {
        let nr = refs.len() / dim;
        f32::gemm(nq, dim, nr, -2.0, queries, (dim, 1), refs, (1, dim), 0.0, &mut approx, (nr, 1));
        for (qi, list) in candidates.iter_mut().enumerate() {
            let qn = f64::from(q_norm[qi]);
            for (j, dot2) in approx[qi * nr..(qi + 1) * nr].iter().enumerate() {
                let ri = block * BLOCK + j;
                let rn = f64::from(r_norm[ri]);
                let d = qn + rn + f64::from(*dot2);
                let slack = rel * (qn + rn) + 1e-6;
                if d - slack <= upper[qi] {
                    upper[qi] = upper[qi].min(d + slack);
                    list.push((ri, d - slack));
                }
            }
            let bound = upper[qi];
            list.retain(|&(_, lower)| lower <= bound);
        }
    }
    Ok(candidates
        .iter()
        .enumerate()
        .map(|(qi, list)| {
            let q = &queries[qi * dim..(qi + 1) * dim];
            let exact = list
                .iter()
                .map(|&(ri, _)| squared_distance(q, &reference[ri * dim..(ri + 1) * dim]))
                .fold(f64::INFINITY, f64::min);
            libm::sqrt(exact)
        })
        .collect())
}

/// One audited sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub conditioned: usize,
    pub predicted: usize,
    pub confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nn_distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: usize,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bypass {
    pub tau: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    pub mean_confidence: f64,
    pub min_confidence: f64,
    pub max_confidence: f64,
    pub per_class: Vec<ClassStats>,
    pub label_fidelity: f64,
    pub bypass: Vec<Bypass>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_nn_distance: Option<f64>,
    /// Mean NN distance of held-out test images, the in-distribution yardstick.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_nn_distance: Option<f64>,
}

/// Per-class and overall confidence statistics, label fidelity and bypass
/// rates. Classes without records are omitted from `per_class`.
pub fn confidence_stats(records: &[SampleRecord], thresholds: &[f64]) -> Result<Aggregates> {
    if records.is_empty() {
        return Err(Error::Empty { op: "confidence_stats" });
    }
    let mut per_class: Vec<ClassStats> = Vec::new();
    for r in records {
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(Error::invalid("confidence_stats", format!("confidence {} outside [0, 1]", r.confidence)));
        }
        match per_class.iter_mut().find(|s| s.class == r.conditioned) {
            Some(s) => {
                s.count += 1;
                s.mean += r.confidence;
                s.min = s.min.min(r.confidence);
                s.max = s.max.max(r.confidence);
            }
            None => per_class.push(ClassStats {
                class: r.conditioned,
                count: 1,
                mean: r.confidence,
                min: r.confidence,
                max: r.confidence,
            }),
        }
    }
    per_class.sort_by_key(|s| s.class);
    per_class.iter_mut().for_each(|s| s.mean /= s.count as f64);
    let confidences: Vec<f64> = records.iter().map(|r| r.confidence).collect();
    let n = records.len() as f64;
    let mut bypass = Vec::with_capacity(thresholds.len());
    for &tau in thresholds {
        bypass.push(Bypass {
            tau,
            rate: bypass_rate(&confidences, tau)?,
        });
    }
    let distances: Option<Vec<f64>> = records.iter().map(|r| r.nn_distance).collect();
    Ok(Aggregates {
        count: records.len(),
        mean_confidence: confidences.iter().sum::<f64>() / n,
        min_confidence: confidences.iter().copied().fold(f64::INFINITY, f64::min),
        max_confidence: confidences.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        per_class,
        label_fidelity: records.iter().filter(|r| r.predicted == r.conditioned).count() as f64 / n,
        bypass,
        mean_nn_distance: distances.map(|d| d.iter().sum::<f64>() / n),
        baseline_nn_distance: None,
    })
}

/// Per-sample records plus aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CccReport {
    pub records: Vec<SampleRecord>,
    pub aggregates: Aggregates,
}

impl CccReport {
    /// Builds records from emitted batches, in batch order. `distances`,
    /// when given, holds one NN distance per sample in the same order.
    pub fn build(
        batches: &[CccBatch],
        distances: Option<&[f64]>,
        baseline: Option<f64>,
        thresholds: &[f64],
    ) -> Result<Self> {
        let total: usize = batches.iter().map(CccBatch::len).sum();
        if distances.is_some_and(|d| d.len() != total) {
            return Err(Error::invalid("ccc_report", "one distance per sample expected"));
        }
        let mut records = Vec::with_capacity(total);
        for batch in batches {
            for (p, c) in batch.predicted.iter().zip(&batch.confidences) {
                let index = records.len();
                records.push(SampleRecord {
                    index,
                    conditioned: batch.class,
                    predicted: *p,
                    confidence: *c,
                    nn_distance: distances.map(|d| d[index]),
                });
            }
        }
        let mut aggregates = confidence_stats(&records, thresholds)?;
        aggregates.baseline_nn_distance = baseline;
        Ok(Self { records, aggregates })
    }
}

/// Confidence annotation of one grid tile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileAnnotation {
    pub row: usize,
    pub col: usize,
    pub class: usize,
    pub predicted: usize,
    pub confidence: f64,
}

/// Tiles laid out row-major with no gaps; pixels in `[0, 1]`, interleaved
/// per pixel when there are several channels.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
    pub annotations: Vec<TileAnnotation>,
}

impl GridImage {
    /// One row per batch, `columns` samples each (batches must hold at
    /// least that many).
    pub fn tile(batches: &[CccBatch], columns: usize) -> Result<Self> {
        let Some(first) = batches.first() else {
            return Err(Error::Empty { op: "grid" });
        };
        if columns == 0 {
            return Err(Error::invalid("grid", "need at least one column"));
        }
        let shape = first.shape;
        if batches.iter().any(|b| b.shape != shape || b.len() < columns) {
            return Err(Error::invalid("grid", "tiles must share a shape and fill every column"));
        }
        let (c, th, tw) = (shape.channels, shape.height, shape.width);
        let (width, height) = (columns * tw, batches.len() * th);
        let mut pixels = vec![0f32; width * height * c];
        let mut annotations = Vec::with_capacity(batches.len() * columns);
        for (row, batch) in batches.iter().enumerate() {
            for col in 0..columns {
                let tile = &batch.pixels[col * shape.len()..(col + 1) * shape.len()];
                for y in 0..th {
                    for x in 0..tw {
                        let dst = ((row * th + y) * width + col * tw + x) * c;
                        for ch in 0..c {
                            pixels[dst + ch] = tile[(ch * th + y) * tw + x];
                        }
                    }
                }
                annotations.push(TileAnnotation {
                    row,
                    col,
                    class: batch.class,
                    predicted: batch.predicted[col],
                    confidence: batch.confidences[col],
                });
            }
        }
        Ok(Self {
            width,
            height,
            channels: c,
            pixels,
            annotations,
        })
    }

    /// Binary PGM (one channel) or PPM (three channels) bytes, maxval 255.
    pub fn to_pnm(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            _ => return Err(Error::invalid("grid", "only 1 or 3 channels can be written")),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8));
        Ok(out)
    }
}
