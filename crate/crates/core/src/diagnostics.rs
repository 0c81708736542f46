//! Gradient-check targets for every tape primitive, the 2D scan and the toy model.

use std::rc::Rc;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::config::Preset;
use crate::model::forward::{forward_on_tape, BoundWeights};
use crate::model::params::init_params;
use crate::scan_geometry::generate_continuous_paths;
use crate::selective_scan::{scan_2d_on_tape, Scan2dOptions};
use crate::tensor::autodiff::{Tape, Var};
use crate::tensor::gradcheck::{grad_check_sampled, GradCheckReport};
use crate::tensor::kernels::Activation;
use crate::tensor::NdArray;

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-3;
/// Uniform perturbation added to every toy weight so zero-initialized
/// tensors (biases, `Θ`) carry non-trivial gradients.
pub const MODEL_JITTER: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    Ops,
    Scan,
    Model,
}

impl FromStr for GradScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(GradScope::Ops),
            "scan" => Ok(GradScope::Scan),
            "model" => Ok(GradScope::Model),
            _ => Err(Error::Config(format!("unknown scope '{s}' (expected ops, scan or model)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradTarget {
    pub name: String,
    pub report: GradCheckReport,
}

impl GradTarget {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRAD_CHECK_TOLERANCE
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> NdArray {
    NdArray::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output coordinate matters.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(out).shape().to_vec();
    let r = tape.leaf(uniform(&shape, -1.0, 1.0, &mut rng));
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn op_targets(rng: &mut ChaCha8Rng) -> Vec<(&'static str, OpFn, Vec<NdArray>)> {
    let mut u = |shape: &[usize], lo: f64, hi: f64| uniform(shape, lo, hi, rng);
    vec![
        ("matmul", Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1])), vec![u(&[3, 4], -1.0, 1.0), u(&[4, 2], -1.0, 1.0)]),
        ("add", Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1])), vec![u(&[5], -1.0, 1.0), u(&[5], -1.0, 1.0)]),
        ("sub", Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1])), vec![u(&[5], -1.0, 1.0), u(&[5], -1.0, 1.0)]),
        ("mul", Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1])), vec![u(&[2, 3], -1.0, 1.0), u(&[2, 3], -1.0, 1.0)]),
        ("scale", Box::new(|t: &mut Tape, v: &[Var]| Ok(t.scale(v[0], -1.7))), vec![u(&[4], -1.0, 1.0)]),
        ("add_bias", Box::new(|t: &mut Tape, v: &[Var]| t.add_bias(v[0], v[1])), vec![u(&[3, 4], -1.0, 1.0), u(&[4], -1.0, 1.0)]),
        ("silu", Box::new(|t: &mut Tape, v: &[Var]| Ok(t.activation(v[0], Activation::Silu))), vec![u(&[6], -4.0, 4.0)]),
        ("softplus", Box::new(|t: &mut Tape, v: &[Var]| Ok(t.activation(v[0], Activation::Softplus))), vec![u(&[6], -4.0, 4.0)]),
        ("exp", Box::new(|t: &mut Tape, v: &[Var]| Ok(t.exp(v[0]))), vec![u(&[4], -2.0, 2.0)]),
        (
            "layernorm",
            Box::new(|t: &mut Tape, v: &[Var]| t.layernorm(v[0], v[1], v[2], 1e-6)),
            vec![u(&[3, 5], -2.0, 2.0), u(&[5], 0.5, 1.5), u(&[5], -0.5, 0.5)],
        ),
        (
            "depthwise_conv2d",
            Box::new(|t: &mut Tape, v: &[Var]| t.depthwise_conv2d(v[0], v[1])),
            vec![u(&[4, 3, 2], -1.0, 1.0), u(&[3, 3, 2], -1.0, 1.0)],
        ),
        ("reshape", Box::new(|t: &mut Tape, v: &[Var]| t.reshape(v[0], &[3, 2])), vec![u(&[2, 3], -1.0, 1.0)]),
        ("slice_cols", Box::new(|t: &mut Tape, v: &[Var]| t.slice_cols(v[0], 1, 2)), vec![u(&[3, 4], -1.0, 1.0)]),
        (
            "gather",
            Box::new(|t: &mut Tape, v: &[Var]| t.gather(v[0], Rc::new(vec![3, 0, 0, 5, 2, 3]), &[2, 3])),
            vec![u(&[6], -1.0, 1.0)],
        ),
        ("mean_rows", Box::new(|t: &mut Tape, v: &[Var]| t.mean_rows(v[0])), vec![u(&[4, 3], -1.0, 1.0)]),
        ("sum", Box::new(|t: &mut Tape, v: &[Var]| Ok(t.sum(v[0]))), vec![u(&[5], -1.0, 1.0)]),
        ("cross_entropy", Box::new(|t: &mut Tape, v: &[Var]| t.cross_entropy(v[0], 2)), vec![u(&[1, 4], -2.0, 2.0)]),
    ]
}

fn check_ops(seed: u64) -> Result<Vec<GradTarget>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, f, inputs) in op_targets(&mut rng) {
        let report = grad_check_sampled(
            |t, v| {
                let y = f(t, v)?;
                project(t, y, seed)
            },
            &inputs,
            GRAD_CHECK_STEP,
            usize::MAX,
        )?;
        out.push(GradTarget {
            name: name.to_string(),
            report,
        });
    }
    Ok(out)
}

/// Scan inputs on a 3×3 grid: `x, Δ, B, C, A, D, Θ`.
pub fn scan_check_inputs(seed: u64, d_inner: usize, m: usize) -> Vec<NdArray> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 9;
    vec![
        uniform(&[n, d_inner], -1.0, 1.0, &mut rng),
        uniform(&[n, d_inner], 0.1, 1.0, &mut rng),
        uniform(&[n, m], -1.0, 1.0, &mut rng),
        uniform(&[n, m], -1.0, 1.0, &mut rng),
        uniform(&[d_inner, m], -2.0, -0.2, &mut rng),
        uniform(&[d_inner], -1.0, 1.0, &mut rng),
        uniform(&[5, m], -1.0, 1.0, &mut rng),
    ]
}

fn check_scan(seed: u64) -> Result<Vec<GradTarget>> {
    let paths = Rc::new(generate_continuous_paths(3, 3)?);
    let inputs = scan_check_inputs(seed, 3, 2);
    let mut out = Vec::new();
    for (label, average_paths) in [("direction_aware_scan_2d", false), ("direction_aware_scan_2d/averaged", true)] {
        let options = Scan2dOptions { average_paths };
        let report = grad_check_sampled(
            |t, v| {
                let y = scan_2d_on_tape(t, v[0], v[1], v[2], v[3], v[4], v[5], v[6], Rc::clone(&paths), options)?;
                project(t, y, seed)
            },
            &inputs,
            GRAD_CHECK_STEP,
            usize::MAX,
        )?;
        out.push(GradTarget {
            name: label.to_string(),
            report,
        });
    }
    Ok(out)
}

/// Cross-entropy of the toy model on one random image, checked over every
/// parameter tensor with at most `per_tensor` coordinates each.
fn check_model(seed: u64, per_tensor: usize) -> Result<Vec<GradTarget>> {
    let config = Preset::Toy.config();
    let mut weights = init_params(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for (_, t) in weights.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-MODEL_JITTER..MODEL_JITTER);
        }
    }
    let image = uniform(&[config.img_size, config.img_size, 3], 0.0, 1.0, &mut rng);
    let label = rng.random_range(0..config.num_classes);
    let names: Vec<String> = weights.iter().map(|(n, _)| n.to_string()).collect();
    let tensors: Vec<NdArray> = weights.iter().map(|(_, t)| t.clone()).collect();
    let report = grad_check_sampled(
        |t, v| {
            let bound = BoundWeights::from_vars(names.iter().cloned().zip(v.iter().copied()));
            let logits = forward_on_tape(t, &bound, &config, &image)?;
            t.cross_entropy(logits, label)
        },
        &tensors,
        GRAD_CHECK_STEP,
        per_tensor,
    )?;
    Ok(vec![GradTarget {
        name: format!("toy model loss (worst tensor {})", names[report.worst.0]),
        report,
    }])
}

/// Runs the gradient checks for `scope`. `per_tensor` bounds the number of
/// probed coordinates per model tensor (`usize::MAX` for all).
pub fn run_grad_checks(scope: GradScope, seed: u64, per_tensor: usize) -> Result<Vec<GradTarget>> {
    match scope {
        GradScope::Ops => check_ops(seed),
        GradScope::Scan => check_scan(seed),
        GradScope::Model => check_model(seed, per_tensor),
    }
}
