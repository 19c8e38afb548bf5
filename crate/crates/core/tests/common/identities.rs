//! Closed-form loss values, shared by the integration tests and the
//! acceptance harness.

#![allow(dead_code)]

use ccc_core::autograd::{Tape, Var};
use ccc_core::data::{ImageShape, Normalization};
use ccc_core::inversion::{composite_step, GeneratorInputs, InversionMode, LossWeights};
use ccc_core::models::{one_hot, AxisChoice, Classifier, ClassifierConfig, Generator, GeneratorConfig};
use ccc_core::rng;

/// Name, computed value, expected value, absolute tolerance.
pub struct Identity {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
}

impl Identity {
    pub fn holds(&self) -> bool {
        (self.value - self.expected).abs() <= self.tolerance
    }
}

fn id(name: impl Into<String>, value: f64, expected: f64, tolerance: f64) -> Identity {
    Identity {
        name: name.into(),
        value,
        expected,
        tolerance,
    }
}

fn probs(tape: &mut Tape<f64>, rows: &[Vec<f64>]) -> Var {
    let k = rows[0].len();
    tape.constant(&[rows.len(), k], rows.concat()).unwrap()
}

fn kl(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let mut t = Tape::new();
    let qv = probs(&mut t, q);
    let l = t.kl_loss(&p.concat(), qv).unwrap();
    t.item(l)
}

fn ce(labels: &[usize], q: &[Vec<f64>]) -> f64 {
    let mut t = Tape::new();
    let qv = probs(&mut t, q);
    let l = t.ce_loss(labels, qv).unwrap();
    t.item(l)
}

fn cosine(rows: &[Vec<f64>]) -> f64 {
    let mut t = Tape::new();
    let f = t.constant(&[rows.len(), rows[0].len()], rows.concat()).unwrap();
    let l = t.cosine_diversity_loss(f).unwrap();
    t.item(l)
}

fn random_simplex(r: &mut rng::Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| 0.01 + rng::uniform(r)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Every closed-form identity of the inversion losses.
pub fn all() -> Vec<Identity> {
    let mut out = Vec::new();
    let mut r = rng::rng(2024);

    for trial in 0..5 {
        let p: Vec<Vec<f64>> = (0..3).map(|_| random_simplex(&mut r, 10)).collect();
        out.push(id(format!("KL(P,P) = 0 [{trial}]"), kl(&p, &p), 0.0, 1e-12));
    }
    out.push(id(
        "KL([1,0],[0.5,0.5]) = ln 2",
        kl(&[vec![1.0, 0.0]], &[vec![0.5, 0.5]]),
        core::f64::consts::LN_2,
        1e-9,
    ));
    for trial in 0..5 {
        let q: Vec<Vec<f64>> = (0..4).map(|_| random_simplex(&mut r, 10)).collect();
        let labels: Vec<usize> = (0..4).map(|_| rng::below(&mut r, 10)).collect();
        let p: Vec<Vec<f64>> = labels.iter().map(|&l| one_hot(l, 10).unwrap().values().to_vec()).collect();
        let expected = labels.iter().zip(&q).map(|(&l, row)| -row[l].ln()).sum::<f64>() / 4.0;
        let (k, c) = (kl(&p, &q), ce(&labels, &q));
        out.push(id(format!("one-hot KL = CE [{trial}]"), k, c, 1e-12));
        out.push(id(format!("one-hot KL = -ln Q[c] [{trial}]"), k, expected, 1e-12));
    }
    out.push(id("CE of uniform over 10 = ln 10", ce(&[3], &[vec![0.1; 10]]), 10f64.ln(), 1e-12));
    out.push(id("CE with Q[label] = 1 is 0", ce(&[1], &[vec![0.0, 1.0, 0.0]]), 0.0, 1e-12));

    out.push(id("cosine of identical rows = 1", cosine(&[vec![0.3, -1.2, 2.0], vec![0.3, -1.2, 2.0]]), 1.0, 1e-9));
    out.push(id("cosine of orthogonal rows = 0", cosine(&[vec![1.5, 0.0, 0.0], vec![0.0, -2.0, 0.0]]), 0.0, 1e-9));
    out.push(id("cosine of antipodal rows = -1", cosine(&[vec![0.7, -0.4, 1.1], vec![-0.7, 0.4, -1.1]]), -1.0, 1e-9));
    out.push(id(
        "cosine invariant to positive row scaling",
        cosine(&[vec![1.0, 2.0, 0.5], vec![-0.3, 0.8, 1.0], vec![2.0, -1.0, 0.1]]),
        cosine(&[vec![3.0, 6.0, 1.5], vec![-0.03, 0.08, 0.1], vec![2.0, -1.0, 0.1]]),
        1e-9,
    ));

    let w = LossWeights::new(1.0, 1.0, 1.0).unwrap();
    out.push(id("combine(0.5, 1.0, -0.2) with unit weights", w.combine(0.5, 1.0, -0.2), 1.3, 1e-12));
    let w = LossWeights::new(1.0, 0.0, 0.0).unwrap();
    out.push(id("combine with alpha only equals KL", w.combine(0.37, 5.0, 0.9), 0.37, 1e-12));
    out.push(id("combine of zero parts", LossWeights::default().combine(0.0, 0.0, 0.0), 0.0, 0.0));

    out.extend(composite_reconstruction());
    out
}

/// `total` of composite steps on a small untrained pair, rebuilt from its
/// parts and compared to the differentiated value as well.
fn composite_reconstruction() -> Vec<Identity> {
    let shape = ImageShape::new(1, 8, 8);
    let mut cc = ClassifierConfig::standard(shape, 4);
    cc.conv_channels = vec![3, 4];
    cc.fc_widths = vec![6, 4];
    let norm = Normalization::new(vec![0.2], vec![0.3]).unwrap();
    let classifier = Classifier::<f32>::new(cc, norm.clone(), 4).unwrap();
    let mut gc = GeneratorConfig::standard(4, shape).unwrap();
    gc.latent_dim = 8;
    gc.seed_channels = 8;
    let mut generator = Generator::<f32>::new(gc, norm, 5).unwrap();
    let mut out = Vec::new();
    for (step, (mode, (a, b, g))) in [
        (InversionMode::OneHotCcc, (1.0, 1.0, 0.1)),
        (InversionMode::Soft, (0.7, 0.2, 0.5)),
        (InversionMode::OneHotCcc, (2.0, 0.0, 1.0)),
    ]
    .into_iter()
    .enumerate()
    {
        let weights = LossWeights::new(a, b, g).unwrap();
        let mut r = rng::rng(step as u64);
        let inputs = GeneratorInputs::sample(generator.config(), mode, 6, AxisChoice::Random, &mut r).unwrap();
        let mut t = Tape::new();
        let bound = generator.bind(&mut t, true);
        let (total, parts) = composite_step(&mut t, &mut generator, &bound, &classifier, &inputs, &weights, 3, step).unwrap();
        let rebuilt = a * parts.kl + b * parts.ce + g * parts.cosine;
        out.push(id(format!("composite total from parts [{step}]"), parts.total, rebuilt, 1e-6));
        out.push(id(format!("composite tape total [{step}]"), f64::from(t.item(total)), rebuilt, 1e-6));
    }
    out
}
