//! The finite-difference gradient suite.
//!
//! Every check draws random instances in `f64`, reduces the output to a
//! scalar with a fixed random probe `Σ y·r`, and compares tape gradients of
//! every input and parameter against central differences. Coordinates within
//! `10·eps` of a LeakyReLU, ReLU or abs kink are skipped.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check_many, GradCheck, GradCheckOptions, Recorder, Tape, Var};
use crate::data::sub_rng;
use crate::error::{Error, Result};
use crate::model::{CaGrdb, ChannelAttention, Fusion, FusionShape, GrdbShape, Hfe, NonLocal, ParamBuilder, ParamStore, Rdb};
use crate::tensor::{Shape, Tensor};
use crate::train::{record_loss, LossMode};

pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 20;
const SLOPE: f64 = 0.2;

/// Single ops of the tape.
pub const OPS: &[&str] = &[
    "conv2d",
    "leaky_relu",
    "relu",
    "sigmoid",
    "add",
    "sub",
    "mul",
    "scale",
    "abs",
    "square",
    "concat",
    "global_avg_pool",
    "pixel_shuffle",
    "reshape",
    "transpose_hw",
    "matmul",
    "softmax",
    "attention",
    "sum",
    "mean",
];

/// Network building blocks and losses.
pub const MODULES: &[&str] = &["hfe", "rdb", "ca", "cagrdb", "nl", "fusion", "loss_l1", "loss_mse", "loss_l1_plus_mse"];

pub fn all_checks() -> impl Iterator<Item = &'static str> {
    OPS.iter().chain(MODULES).copied()
}

/// Outcome of one named check over all its instances.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub result: GradCheck,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.result.checked > 0 && self.result.max_rel_error < TOLERANCE
    }
}

fn uniform(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng)
}

/// A probe tensor fixed before the closure runs, so every evaluation of the
/// loss uses the same one.
struct Probe(Vec<Tensor<f64>>);

impl Probe {
    fn apply(&self, tape: &mut Tape<f64>, ys: &[Var]) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (y, r) in ys.iter().zip(&self.0) {
            let rc = tape.constant(r.clone());
            let m = tape.mul(*y, rc)?;
            let s = tape.sum(m);
            total = Some(match total {
                Some(t) => tape.add(t, s)?,
                None => s,
            });
        }
        total.ok_or_else(|| Error::Config("nothing to probe".into()))
    }
}

/// Runs `f` once to learn the output shapes, then draws the probes.
fn probes<F>(f: &F, inputs: &[Tensor<f64>], rng: &mut ChaCha8Rng) -> Result<Probe>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Vec<Var>>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let ys = f(&mut tape, &vars)?;
    Ok(Probe(ys.iter().map(|&y| uniform(tape.shape(y), rng)).collect()))
}

fn run<F>(f: F, inputs: Vec<Tensor<f64>>, rng: &mut ChaCha8Rng, samples: Option<usize>) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Vec<Var>>,
{
    let p = probes(&f, &inputs, rng)?;
    let opts = GradCheckOptions {
        samples_per_tensor: samples,
        seed: rng.random(),
        ..GradCheckOptions::default()
    };
    finite_diff_check_many(|tape, vars| {
        let ys = f(tape, vars)?;
        p.apply(tape, &ys)
    }, &inputs, &opts)
}

/// Parameters of a freshly built module with all values (biases included)
/// perturbed so no term starts at an exact zero.
fn jittered(store: ParamStore<f64>, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    store
        .tensors()
        .iter()
        .map(|t| {
            let data = t.data().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
            Tensor::new(t.shape(), data).expect("same shape")
        })
        .collect()
}

fn module_inputs(x: Vec<Tensor<f64>>, params: Vec<Tensor<f64>>) -> (usize, Vec<Tensor<f64>>) {
    let k = x.len();
    (k, x.into_iter().chain(params).collect())
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn op_instance(name: &str, rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let n = dims(rng, 1, 2);
    let c = dims(rng, 1, 3);
    let (h, w) = (dims(rng, 2, 5), dims(rng, 2, 5));
    let s = Shape::new(n, c, h, w);
    match name {
        "conv2d" => {
            let k = [1, 3, 5][rng.random_range(0..3)];
            let stride = dims(rng, 1, 2);
            let pad = rng.random_range(0..=k / 2 + 1);
            let cout = dims(rng, 1, 3);
            let x = uniform(Shape::new(n, c, k + dims(rng, 0, 3), k + dims(rng, 0, 3)), rng);
            let wt = uniform(Shape::new(cout, c, k, k), rng);
            let b = uniform(Shape::new(1, cout, 1, 1), rng);
            run(move |t, v| Ok(vec![t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?]), vec![x, wt, b], rng, None)
        }
        "leaky_relu" => run(|t, v| Ok(vec![t.leaky_relu(v[0], SLOPE)]), vec![uniform(s, rng)], rng, None),
        "relu" => run(|t, v| Ok(vec![t.relu(v[0])]), vec![uniform(s, rng)], rng, None),
        "sigmoid" => run(|t, v| Ok(vec![t.sigmoid(v[0])]), vec![uniform(s, rng).map(|v| 4.0 * v)], rng, None),
        "add" | "sub" | "mul" => {
            let bs = match rng.random_range(0..3) {
                0 => s,
                1 => Shape::new(n, c, 1, 1),
                _ => Shape::new(1, c, 1, 1),
            };
            let (a, b) = (uniform(s, rng), uniform(bs, rng));
            let op = name.to_string();
            run(
                move |t, v| {
                    Ok(vec![match op.as_str() {
                        "add" => t.add(v[0], v[1])?,
                        "sub" => t.sub(v[0], v[1])?,
                        _ => t.mul(v[0], v[1])?,
                    }])
                },
                vec![a, b],
                rng,
                None,
            )
        }
        "scale" => {
            let k = rng.random_range(-2.0..2.0);
            run(move |t, v| Ok(vec![t.scale(v[0], k)]), vec![uniform(s, rng)], rng, None)
        }
        "abs" => run(|t, v| Ok(vec![t.abs(v[0])]), vec![uniform(s, rng)], rng, None),
        "square" => run(|t, v| Ok(vec![t.square(v[0])]), vec![uniform(s, rng)], rng, None),
        "concat" => {
            let parts = dims(rng, 1, 3);
            let xs: Vec<Tensor<f64>> = (0..parts)
                .map(|_| uniform(Shape::new(n, dims(rng, 1, 3), h, w), rng))
                .collect();
            run(|t, v| Ok(vec![t.concat(v)?]), xs, rng, None)
        }
        "global_avg_pool" => run(|t, v| Ok(vec![t.global_avg_pool(v[0])]), vec![uniform(s, rng)], rng, None),
        "pixel_shuffle" => {
            let r = dims(rng, 1, 3);
            let x = uniform(Shape::new(n, c * r * r, h, w), rng);
            run(move |t, v| Ok(vec![t.pixel_shuffle(v[0], r)?]), vec![x], rng, None)
        }
        "reshape" => {
            let to = Shape::new(n, 1, c * h, w);
            run(move |t, v| Ok(vec![t.reshape(v[0], to)?]), vec![uniform(s, rng)], rng, None)
        }
        "transpose_hw" => run(|t, v| Ok(vec![t.transpose_hw(v[0])]), vec![uniform(s, rng)], rng, None),
        "matmul" => {
            let (m, k, p) = (dims(rng, 1, 4), dims(rng, 1, 4), dims(rng, 1, 4));
            let a = uniform(Shape::new(n, c, m, k), rng);
            let b = uniform(Shape::new(n, c, k, p), rng);
            run(|t, v| Ok(vec![t.matmul(v[0], v[1])?]), vec![a, b], rng, None)
        }
        "softmax" => run(|t, v| Ok(vec![t.softmax_rows(v[0])]), vec![uniform(s, rng).map(|v| 3.0 * v)], rng, None),
        "attention" => {
            let xs = (0..3).map(|_| uniform(s, rng)).collect();
            run(|t, v| Ok(vec![t.attention(v[0], v[1], v[2])?]), xs, rng, None)
        }
        "sum" => run(|t, v| Ok(vec![t.sum(v[0])]), vec![uniform(s, rng)], rng, None),
        "mean" => run(|t, v| Ok(vec![t.mean(v[0])]), vec![uniform(s, rng)], rng, None),
        other => Err(Error::Config(format!("unknown op {other:?}"))),
    }
}

/// Coordinates sampled per tensor in the module checks.
const MODULE_SAMPLES: usize = 6;

fn module_instance(name: &str, rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let seed = rng.random();
    let mut b = ParamBuilder::<f64>::new(seed, SLOPE);
    let (h, w) = (dims(rng, 1, 2) * 4, dims(rng, 1, 2) * 4);
    let samples = Some(MODULE_SAMPLES);
    match name {
        "hfe" => {
            let widths = [dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3)];
            let hfe = Hfe::build(&mut b, &widths);
            let (k, inputs) = module_inputs(vec![uniform(Shape::new(1, 3, h, w), rng)], jittered(b.finish(), rng));
            run(
                move |t, v| {
                    let mut rec = Recorder::with_vars(t, v[k..].to_vec(), usize::MAX);
                    hfe.forward(&mut rec, &v[0], SLOPE)
                },
                inputs,
                rng,
                samples,
            )
        }
        "rdb" => {
            let (c0, layers, growth) = (dims(rng, 1, 4), dims(rng, 1, 3), dims(rng, 1, 3));
            let rdb = Rdb::build(&mut b, "rdb", c0, layers, growth);
            let x = uniform(Shape::new(1, c0, h, w), rng);
            let (k, inputs) = module_inputs(vec![x], jittered(b.finish(), rng));
            run(
                move |t, v| {
                    let mut rec = Recorder::with_vars(t, v[k..].to_vec(), usize::MAX);
                    Ok(vec![rdb.forward(&mut rec, &v[0], SLOPE)?])
                },
                inputs,
                rng,
                samples,
            )
        }
        "ca" => {
            let r = dims(rng, 1, 2);
            let c = r * dims(rng, 1, 3);
            let ca = ChannelAttention::build(&mut b, "ca", c, r)?;
            let x = uniform(Shape::new(dims(rng, 1, 2), c, h, w), rng);
            let (k, inputs) = module_inputs(vec![x], jittered(b.finish(), rng));
            run(
                move |t, v| {
                    let mut rec = Recorder::with_vars(t, v[k..].to_vec(), usize::MAX);
                    Ok(vec![ca.forward(&mut rec, &v[0])?])
                },
                inputs,
                rng,
                samples,
            )
        }
        "cagrdb" => {
            let shape = GrdbShape {
                channels: 4,
                rdbs: dims(rng, 1, 3),
                layers: dims(rng, 1, 2),
                growth: dims(rng, 1, 3),
                ca_reduction: Some(2),
            };
            let block = CaGrdb::build(&mut b, "cagrdb", shape)?;
            let x = uniform(Shape::new(1, 4, h, w), rng);
            let (k, inputs) = module_inputs(vec![x], jittered(b.finish(), rng));
            run(
                move |t, v| {
                    let mut rec = Recorder::with_vars(t, v[k..].to_vec(), usize::MAX);
                    Ok(vec![block.forward(&mut rec, &v[0], SLOPE)?])
                },
                inputs,
                rng,
                samples,
            )
        }
        "nl" => {
            let c = dims(rng, 2, 4);
            let nl = NonLocal::build(&mut b, "nl", c);
            let x = uniform(Shape::new(dims(rng, 1, 2), c, h, w), rng);
            let (k, inputs) = module_inputs(vec![x], jittered(b.finish(), rng));
            run(
                move |t, v| {
                    let mut rec = Recorder::with_vars(t, v[k..].to_vec(), usize::MAX);
                    Ok(vec![nl.forward(&mut rec, &v[0])?])
                },
                inputs,
                rng,
                samples,
            )
        }
        "fusion" => {
            let widths = vec![dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3)];
            let fusion = Fusion::build(
                &mut b,
                &FusionShape {
                    branch_channels: widths.clone(),
                    channels: dims(rng, 1, 3),
                    nl: true,
                    bicubic_skip: rng.random(),
                },
            );
            let lr = Tensor::rand_uniform(Shape::new(1, 3, h, w), 0.0, 1.0, rng);
            let maps: Vec<Tensor<f64>> = widths
                .iter()
                .enumerate()
                .map(|(i, &c)| uniform(Shape::new(1, c, h >> i, w >> i), rng))
                .collect();
            let (k, inputs) = module_inputs(maps, jittered(b.finish(), rng));
            run(
                move |t, v| {
                    let mut rec = Recorder::with_vars(t, v[k..].to_vec(), usize::MAX);
                    Ok(vec![fusion.forward(&mut rec, &v[..k], &lr, SLOPE)?])
                },
                inputs,
                rng,
                samples,
            )
        }
        "loss_l1" | "loss_mse" | "loss_l1_plus_mse" => {
            let mode = match name {
                "loss_l1" => LossMode::L1,
                "loss_mse" => LossMode::Mse,
                _ => LossMode::L1PlusMse,
            };
            let s = Shape::new(dims(rng, 1, 2), 3, h, w);
            let (p, q) = (uniform(s, rng), uniform(s, rng));
            run(move |t, v| Ok(vec![record_loss(t, v[0], v[1], mode)?]), vec![p, q], rng, None)
        }
        other => Err(Error::Config(format!("unknown module {other:?}"))),
    }
}

/// Runs check `name` on `instances` random instances.
pub fn check(name: &str, instances: usize, seed: u64) -> Result<CheckReport> {
    let is_op = OPS.contains(&name);
    if !is_op && !MODULES.contains(&name) {
        return Err(Error::Config(format!(
            "unknown check {name:?}; expected one of {}",
            all_checks().collect::<Vec<_>>().join(", ")
        )));
    }
    let key = all_checks().position(|n| n == name).expect("known") as u64;
    let mut result = GradCheck::default();
    for i in 0..instances {
        let mut rng = sub_rng(seed ^ (key << 32), i as u64);
        let r = if is_op {
            op_instance(name, &mut rng)?
        } else {
            module_instance(name, &mut rng)?
        };
        result.merge(&r);
    }
    Ok(CheckReport {
        name: name.to_string(),
        instances,
        result,
    })
}
