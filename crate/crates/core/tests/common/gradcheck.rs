//! Central finite-difference gradient checks in 64-bit, shared by the
//! integration tests and the acceptance harness.

#![allow(dead_code)]

use ccc_core::autograd::{BatchNormMode, Tape, Tensor, Var};
use ccc_core::rng::{self, Rng};

pub const STEP: f64 = 1e-5;
pub const INSTANCES: usize = 20;
/// Smallest denominator of the relative error. Central-difference round-off
/// is about `1e-11` per element at this step, so gradients that vanish
/// identically still compare as zero.
pub const FLOOR: f64 = 1e-6;

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

/// One random problem: input tensors and the op applied to them.
pub struct Instance {
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    pub build: Build,
}

/// An op with its random instances and the tolerance they must meet.
pub struct OpCase {
    pub name: &'static str,
    pub tolerance: f64,
    pub instances: Vec<Instance>,
}

/// `Σ out ⊙ w` for a fixed random `w`, so every output element takes part.
fn probe_loss(inputs: &[(Vec<usize>, Vec<f64>)], build: &Build, probe_seed: u64) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(shape, data)| {
            let t = Tensor::from_vec(shape, data.clone()).expect("valid input").with_requires_grad(true);
            tape.leaf(t)
        })
        .collect();
    let out = build(&mut tape, &vars);
    let shape = tape.shape(out).to_vec();
    let mut r = rng::rng(probe_seed);
    let w = (0..tape.data(out).len()).map(|_| rng::normal(&mut r)).collect();
    let w = tape.constant(&shape, w).expect("probe shape");
    let prod = tape.mul(out, w).expect("probe product");
    let loss = tape.sum(prod);
    let value = tape.item(loss);
    tape.backward(loss).expect("backward");
    let grads = vars
        .iter()
        .map(|v| tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.data(*v).len()]))
        .collect();
    (value, grads)
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, worst over the inputs of one instance.
/// Gradients that vanish identically (a bias feeding batch norm) are
/// measured against [`FLOOR`] instead.
pub fn relative_error(instance: &Instance, probe_seed: u64) -> f64 {
    let (_, analytic) = probe_loss(&instance.inputs, &instance.build, probe_seed);
    let mut worst = 0f64;
    for (i, grad) in analytic.iter().enumerate() {
        let mut numeric = Vec::with_capacity(grad.len());
        for j in 0..grad.len() {
            let at = |delta: f64| {
                let mut inputs = instance.inputs.clone();
                inputs[i].1[j] += delta;
                probe_loss(&inputs, &instance.build, probe_seed).0
            };
            numeric.push((at(STEP) - at(-STEP)) / (2.0 * STEP));
        }
        worst = worst.max(vector_error(grad, &numeric));
    }
    worst
}

pub fn vector_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(FLOOR)
}

/// Worst relative error over every instance of `case`.
pub fn check(case: &OpCase) -> f64 {
    case.instances
        .iter()
        .enumerate()
        .map(|(k, inst)| relative_error(inst, 1000 + k as u64))
        .fold(0.0, f64::max)
}

fn normal_vec(r: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng::normal(r)).collect()
}

/// Normal draws pushed at least `gap` away from zero (kinks sit there).
fn off_zero(r: &mut Rng, n: usize, gap: f64) -> Vec<f64> {
    normal_vec(r, n)
        .into_iter()
        .map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
        .collect()
}

/// Distinct values spaced 0.05 apart in random order, so pooling windows
/// never tie.
fn distinct(r: &mut Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    for i in (1..n).rev() {
        v.swap(i, rng::below(r, i + 1));
    }
    v
}

fn between(r: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng::uniform(r)).collect()
}

fn dim(r: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng::below(r, hi - lo + 1)
}

fn case(name: &'static str, tolerance: f64, seed: u64, make: impl Fn(&mut Rng) -> Instance) -> OpCase {
    let mut r = rng::rng(seed);
    OpCase {
        name,
        tolerance,
        instances: (0..INSTANCES).map(|_| make(&mut r)).collect(),
    }
}

fn inst(inputs: Vec<(Vec<usize>, Vec<f64>)>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var + 'static) -> Instance {
    Instance {
        inputs,
        build: Box::new(build),
    }
}

fn mat(r: &mut Rng) -> Vec<usize> {
    vec![dim(r, 1, 4), dim(r, 1, 5)]
}

fn image(r: &mut Rng, b: (usize, usize), c: (usize, usize), s: (usize, usize)) -> Vec<usize> {
    vec![dim(r, b.0, b.1), dim(r, c.0, c.1), dim(r, s.0, s.1), dim(r, s.0, s.1)]
}

fn n(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Every differentiable op with its random instances.
pub fn catalogue() -> Vec<OpCase> {
    const TOL: f64 = 1e-4;
    vec![
        case("add", TOL, 1, |r| {
            let s = mat(r);
            inst(vec![(s.clone(), normal_vec(r, n(&s))), (s.clone(), normal_vec(r, n(&s)))], |t, v| {
                t.add(v[0], v[1]).unwrap()
            })
        }),
        case("sub", TOL, 2, |r| {
            let s = mat(r);
            inst(vec![(s.clone(), normal_vec(r, n(&s))), (s.clone(), normal_vec(r, n(&s)))], |t, v| {
                t.sub(v[0], v[1]).unwrap()
            })
        }),
        case("mul", TOL, 3, |r| {
            let s = mat(r);
            inst(vec![(s.clone(), normal_vec(r, n(&s))), (s.clone(), normal_vec(r, n(&s)))], |t, v| {
                t.mul(v[0], v[1]).unwrap()
            })
        }),
        case("scale", TOL, 4, |r| {
            let s = mat(r);
            let f = rng::normal(r);
            inst(vec![(s.clone(), normal_vec(r, n(&s)))], move |t, v| t.scale(v[0], f))
        }),
        case("add_scalar", TOL, 5, |r| {
            let s = mat(r);
            let f = rng::normal(r);
            inst(vec![(s.clone(), normal_vec(r, n(&s)))], move |t, v| t.add_scalar(v[0], f))
        }),
        case("sum", TOL, 6, |r| {
            let s = mat(r);
            inst(vec![(s.clone(), normal_vec(r, n(&s)))], |t, v| t.sum(v[0]))
        }),
        case("mean", TOL, 7, |r| {
            let s = mat(r);
            inst(vec![(s.clone(), normal_vec(r, n(&s)))], |t, v| t.mean(v[0]))
        }),
        case("weighted_sum", TOL, 8, |r| {
            let (s1, s2) = (mat(r), mat(r));
            let (a, b) = (rng::normal(r), rng::normal(r));
            inst(vec![(s1.clone(), normal_vec(r, n(&s1))), (s2.clone(), normal_vec(r, n(&s2)))], move |t, v| {
                let x = t.sum(v[0]);
                let y = t.mean(v[1]);
                t.weighted_sum(&[(x, a), (y, b)]).unwrap()
            })
        }),
        case("concat", TOL, 9, |r| {
            let b = dim(r, 1, 3);
            let (hw, c1, c2) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
            let (s1, s2) = (vec![b, c1, hw, hw], vec![b, c2, hw, hw]);
            inst(vec![(s1.clone(), normal_vec(r, n(&s1))), (s2.clone(), normal_vec(r, n(&s2)))], |t, v| {
                t.concat(&[v[0], v[1]]).unwrap()
            })
        }),
        case("channel_affine", TOL, 10, |r| {
            let s = image(r, (1, 3), (1, 3), (1, 3));
            let scale = normal_vec(r, s[1]);
            let shift = normal_vec(r, s[1]);
            inst(vec![(s.clone(), normal_vec(r, n(&s)))], move |t, v| t.channel_affine(v[0], &scale, &shift).unwrap())
        }),
        case("reshape", TOL, 11, |r| {
            let s = mat(r);
            let flat = vec![n(&s)];
            inst(vec![(s.clone(), normal_vec(r, n(&s)))], move |t, v| t.reshape(v[0], &flat).unwrap())
        }),
        case("linear", TOL, 12, |r| {
            let (b, f, o) = (dim(r, 1, 4), dim(r, 1, 5), dim(r, 1, 4));
            inst(
                vec![(vec![b, f], normal_vec(r, b * f)), (vec![o, f], normal_vec(r, o * f)), (vec![o], normal_vec(r, o))],
                |t, v| t.linear(v[0], v[1], v[2]).unwrap(),
            )
        }),
        case("batch_norm2d_train", 1e-3, 13, |r| {
            let s = image(r, (2, 3), (1, 3), (1, 3));
            let c = s[1];
            inst(
                vec![(s.clone(), normal_vec(r, n(&s))), (vec![c], between(r, c, 0.5, 1.5)), (vec![c], normal_vec(r, c))],
                move |t, v| {
                    let (mut mean, mut var) = (vec![0.0; c], vec![1.0; c]);
                    let mode = BatchNormMode::Train {
                        running_mean: &mut mean,
                        running_var: &mut var,
                        momentum: 0.1,
                    };
                    t.batch_norm2d(v[0], v[1], v[2], mode, 1e-5).unwrap()
                },
            )
        }),
        case("batch_norm2d_eval", TOL, 14, |r| {
            let s = image(r, (1, 3), (1, 3), (1, 3));
            let c = s[1];
            let mean = normal_vec(r, c);
            let var = between(r, c, 0.5, 2.0);
            inst(
                vec![(s.clone(), normal_vec(r, n(&s))), (vec![c], between(r, c, 0.5, 1.5)), (vec![c], normal_vec(r, c))],
                move |t, v| {
                    let mode = BatchNormMode::Eval {
                        running_mean: &mean,
                        running_var: &var,
                    };
                    t.batch_norm2d(v[0], v[1], v[2], mode, 1e-5).unwrap()
                },
            )
        }),
        case("leaky_relu", TOL, 15, |r| {
            let s = mat(r);
            let slope = between(r, 1, 0.01, 0.3)[0];
            inst(vec![(s.clone(), off_zero(r, n(&s), 1e-3))], move |t, v| t.leaky_relu(v[0], slope).unwrap())
        }),
        case("sigmoid", TOL, 16, |r| {
            let s = mat(r);
            inst(vec![(s.clone(), normal_vec(r, n(&s)))], |t, v| t.sigmoid(v[0]))
        }),
        case("dropout_train", TOL, 17, |r| {
            let s = mat(r);
            let seed = rng::below(r, 1 << 30) as u64;
            inst(vec![(s.clone(), normal_vec(r, n(&s)))], move |t, v| t.dropout(v[0], 0.3, true, seed).unwrap())
        }),
        case("max_pool2d", TOL, 18, |r| {
            let mut s = image(r, (1, 2), (1, 2), (1, 3));
            s[2] *= 2;
            s[3] *= 2;
            inst(vec![(s.clone(), distinct(r, n(&s)))], |t, v| t.max_pool2d(v[0], 2).unwrap())
        }),
        case("softmax", TOL, 19, |r| {
            let s = mat(r);
            inst(vec![(s.clone(), normal_vec(r, n(&s)))], |t, v| t.softmax(v[0]).unwrap())
        }),
        case("log_softmax", TOL, 20, |r| {
            let s = mat(r);
            inst(vec![(s.clone(), normal_vec(r, n(&s)))], |t, v| t.log_softmax(v[0]).unwrap())
        }),
        case("cross_entropy_logits", TOL, 21, |r| {
            let (b, k) = (dim(r, 1, 4), dim(r, 2, 5));
            let labels: Vec<usize> = (0..b).map(|_| rng::below(r, k)).collect();
            inst(vec![(vec![b, k], normal_vec(r, b * k))], move |t, v| t.cross_entropy_logits(v[0], &labels).unwrap())
        }),
        case("conv2d", TOL, 22, |r| {
            let (stride, pad, k) = (dim(r, 1, 2), dim(r, 0, 1), dim(r, 1, 3));
            let s = vec![dim(r, 1, 2), dim(r, 1, 2), dim(r, k.max(2), 5), dim(r, k.max(2), 5)];
            let w = vec![dim(r, 1, 3), s[1], k, k];
            inst(
                vec![(s.clone(), normal_vec(r, n(&s))), (w.clone(), normal_vec(r, n(&w))), (vec![w[0]], normal_vec(r, w[0]))],
                move |t, v| t.conv2d(v[0], v[1], v[2], stride, pad).unwrap(),
            )
        }),
        case("conv_transpose2d", TOL, 23, |r| {
            let (stride, k) = (dim(r, 1, 2), dim(r, 1, 4));
            let pad = dim(r, 0, ((k - 1) / 2).min(1));
            let s = image(r, (1, 2), (1, 2), (1, 3));
            let w = vec![s[1], dim(r, 1, 3), k, k];
            inst(
                vec![(s.clone(), normal_vec(r, n(&s))), (w.clone(), normal_vec(r, n(&w))), (vec![w[1]], normal_vec(r, w[1]))],
                move |t, v| t.conv_transpose2d(v[0], v[1], v[2], stride, pad).unwrap(),
            )
        }),
        case("kl_loss", TOL, 24, |r| {
            let (b, k) = (dim(r, 1, 4), dim(r, 2, 5));
            let mut target = between(r, b * k, 0.01, 1.0);
            for row in target.chunks_mut(k) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            inst(vec![(vec![b, k], between(r, b * k, 0.05, 0.95))], move |t, v| t.kl_loss(&target, v[0]).unwrap())
        }),
        case("ce_loss", TOL, 25, |r| {
            let (b, k) = (dim(r, 1, 4), dim(r, 2, 5));
            let labels: Vec<usize> = (0..b).map(|_| rng::below(r, k)).collect();
            inst(vec![(vec![b, k], between(r, b * k, 0.05, 0.95))], move |t, v| t.ce_loss(&labels, v[0]).unwrap())
        }),
        case("cosine_diversity_loss", TOL, 26, |r| {
            let (b, f) = (dim(r, 2, 5), dim(r, 1, 6));
            inst(vec![(vec![b, f], normal_vec(r, b * f))], |t, v| t.cosine_diversity_loss(v[0]).unwrap())
        }),
    ]
}
