//! Tokenizer, block and full-model forward passes, all recorded on a tape.

use std::collections::HashMap;
use std::rc::Rc;

use super::config::ModelConfig;
use super::params::{block_prefix, BlockParams, Weights};
use crate::error::{Error, Result};
use crate::grid::TokenGrid;
use crate::scan_geometry::{generate_continuous_paths, PathSet};
use crate::selective_scan::{scan_2d_on_tape, Scan2dOptions};
use crate::tensor::autodiff::{Tape, Var};
use crate::tensor::kernels::Activation;
use crate::tensor::macs::{self, Bucket};
use crate::tensor::NdArray;

/// Pixel normalization applied before tokenizing: `(v − 0.5) / 0.5`.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.5;

pub fn normalize_pixels(image: &NdArray) -> NdArray {
    image.map(|v| (v - PIXEL_MEAN) / PIXEL_STD)
}

/// Model weights registered as tape leaves.
pub struct BoundWeights {
    vars: HashMap<String, Var>,
}

impl BoundWeights {
    pub fn bind(tape: &mut Tape, weights: &Weights) -> Self {
        let vars = weights
            .iter()
            .map(|(name, t)| (name.to_string(), tape.leaf(t.clone())))
            .collect();
        Self { vars }
    }

    /// Uses existing tape vars, e.g. the leaves of a gradient check.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Manifest(format!("missing tensor {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Per-block tape handles. `a` is the (negative) state matrix itself.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub norm_gamma: Var,
    pub norm_beta: Var,
    pub in_proj: Var,
    pub dw_kernel: Var,
    pub dw_bias: Var,
    pub x_proj: Var,
    pub dt_proj: Var,
    pub dt_bias: Var,
    pub a: Var,
    pub d: Var,
    pub theta: Var,
    pub out_proj: Var,
}

impl BlockVars {
    /// Leaves for a plain-value block.
    pub fn from_params(tape: &mut Tape, p: &BlockParams) -> Self {
        Self {
            norm_gamma: tape.leaf(p.norm_gamma.clone()),
            norm_beta: tape.leaf(p.norm_beta.clone()),
            in_proj: tape.leaf(p.in_proj.clone()),
            dw_kernel: tape.leaf(p.dw_kernel.clone()),
            dw_bias: tape.leaf(p.dw_bias.clone()),
            x_proj: tape.leaf(p.x_proj.clone()),
            dt_proj: tape.leaf(p.dt_proj.clone()),
            dt_bias: tape.leaf(p.dt_bias.clone()),
            a: tape.leaf(p.core.a().clone()),
            d: tape.leaf(p.core.d().clone()),
            theta: tape.leaf(p.core.theta().clone()),
            out_proj: tape.leaf(p.out_proj.clone()),
        }
    }

    /// Handles into bound model weights; `A = −exp(A_log)` is recorded here.
    pub fn from_bound(tape: &mut Tape, bound: &BoundWeights, block: usize) -> Result<Self> {
        let b = block_prefix(block);
        let v = |s: &str| bound.var(&format!("{b}.{s}"));
        let a_pos = tape.exp(v("A_log")?);
        let a = tape.scale(a_pos, -1.0);
        Ok(Self {
            norm_gamma: v("norm.weight")?,
            norm_beta: v("norm.bias")?,
            in_proj: v("in_proj.weight")?,
            dw_kernel: v("conv.weight")?,
            dw_bias: v("conv.bias")?,
            x_proj: v("x_proj.weight")?,
            dt_proj: v("dt_proj.weight")?,
            dt_bias: v("dt_proj.bias")?,
            a,
            d: v("D")?,
            theta: v("theta")?,
            out_proj: v("out_proj.weight")?,
        })
    }
}

/// One gated selective-scan block on `[H·W, d_model]` tokens.
///
/// Pre-norm, project to an `x` branch and a `z` gate, depthwise-convolve and
/// SiLU the `x` branch on the grid, derive `Δ, B, C` from it, run the
/// direction-aware 2D scan, gate with `SiLU(z)`, project back and add the
/// residual.
pub fn block_on_tape(
    tape: &mut Tape,
    x: Var,
    p: &BlockVars,
    paths: &Rc<PathSet>,
    eps: f64,
    options: Scan2dOptions,
) -> Result<Var> {
    let (h, w) = (paths.height(), paths.width());
    let di = tape.value(p.d).len();
    let m = tape.value(p.theta).shape()[1];
    let r = tape.value(p.dt_proj).shape()[0];

    let normed = tape.layernorm(x, p.norm_gamma, p.norm_beta, eps)?;
    let xz = macs::in_bucket(Bucket::ChannelMixing, || tape.matmul(normed, p.in_proj))?;
    let xb = tape.slice_cols(xz, 0, di)?;
    let zb = tape.slice_cols(xz, di, di)?;

    let xb = tape.reshape(xb, &[h, w, di])?;
    let xb = tape.depthwise_conv2d(xb, p.dw_kernel)?;
    let xb = tape.reshape(xb, &[h * w, di])?;
    let xb = tape.add_bias(xb, p.dw_bias)?;
    let xs = tape.activation(xb, Activation::Silu);
    let z = tape.activation(zb, Activation::Silu);

    let dbc = tape.matmul(xs, p.x_proj)?;
    let dt_low = tape.slice_cols(dbc, 0, r)?;
    let b = tape.slice_cols(dbc, r, m)?;
    let c = tape.slice_cols(dbc, r + m, m)?;
    let dt = tape.matmul(dt_low, p.dt_proj)?;
    let dt = tape.add_bias(dt, p.dt_bias)?;
    let delta = tape.activation(dt, Activation::Softplus);

    let y = scan_2d_on_tape(tape, xs, delta, b, c, p.a, p.d, p.theta, Rc::clone(paths), options)?;
    let y = tape.mul(y, z)?;
    let out = macs::in_bucket(Bucket::ChannelMixing, || tape.matmul(y, p.out_proj))?;
    tape.add(out, x)
}

/// Bilinear resampling matrix `[out_h·out_w, g·g]` (half-pixel centres,
/// edge-clamped) mapping a `g × g` grid onto `out_h × out_w`.
pub fn bilinear_matrix(out_h: usize, out_w: usize, g: usize) -> NdArray {
    let axis = |out: usize| -> Vec<(usize, usize, f64)> {
        let scale = g as f64 / out as f64;
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (g - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(g - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let (rows, cols) = (axis(out_h), axis(out_w));
    let mut m = NdArray::zeros(&[out_h * out_w, g * g]);
    for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
        for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
            let o = r * out_w + c;
            for (src_r, wr) in [(r0, 1.0 - fr), (r1, fr)] {
                for (src_c, wc) in [(c0, 1.0 - fc), (c1, fc)] {
                    let idx = o * g * g + src_r * g + src_c;
                    m.data_mut()[idx] += wr * wc;
                }
            }
        }
    }
    m
}

/// Gather indices turning an `[H_I, W_I, 3]` image into `[N, p·p·3]` patches,
/// each patch flattened as `(row, col, channel)`.
pub fn patch_indices(height: usize, width: usize, patch: usize) -> Vec<usize> {
    let (gh, gw) = (height / patch, width / patch);
    let mut idx = Vec::with_capacity(height * width * 3);
    for gr in 0..gh {
        for gc in 0..gw {
            for i in 0..patch {
                for j in 0..patch {
                    let pix = (gr * patch + i) * width + gc * patch + j;
                    idx.extend((0..3).map(|ch| pix * 3 + ch));
                }
            }
        }
    }
    idx
}

/// Strided patch convolution plus positional embeddings on a normalized
/// `[H_I, W_I, 3]` image. Returns the token var and grid extents.
pub fn tokenize_on_tape(
    tape: &mut Tape,
    bound: &BoundWeights,
    config: &ModelConfig,
    image: Var,
) -> Result<(Var, usize, usize)> {
    let shape = tape.value(image).shape().to_vec();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::shape("tokenize", &shape, &[0, 0, 3]));
    }
    let (gh, gw) = config.token_grid(shape[0], shape[1])?;
    let p = config.patch;
    let patches = tape.gather(image, Rc::new(patch_indices(shape[0], shape[1], p)), &[gh * gw, 3 * p * p])?;
    let tokens = tape.matmul(patches, bound.var("patch_embed.weight")?)?;
    let tokens = tape.add_bias(tokens, bound.var("patch_embed.bias")?)?;
    let g = config.train_grid();
    let pos = if (gh, gw) == (g, g) {
        bound.var("pos_embed")?
    } else {
        let resample = tape.leaf(bilinear_matrix(gh, gw, g));
        tape.matmul(resample, bound.var("pos_embed")?)?
    };
    Ok((tape.add(tokens, pos)?, gh, gw))
}

/// Full forward pass on pixel values in `[0, 1]`; returns `[1, num_classes]` logits.
pub fn forward_on_tape(
    tape: &mut Tape,
    bound: &BoundWeights,
    config: &ModelConfig,
    pixels: &NdArray,
) -> Result<Var> {
    let image = tape.leaf(normalize_pixels(pixels));
    let (mut x, gh, gw) = tokenize_on_tape(tape, bound, config, image)?;
    let paths = Rc::new(generate_continuous_paths(gh, gw)?);
    let options = Scan2dOptions {
        average_paths: config.average_paths,
    };
    for i in 0..config.depth {
        let step = |tape: &mut Tape| -> Result<Var> {
            let p = BlockVars::from_bound(tape, bound, i)?;
            block_on_tape(tape, x, &p, &paths, config.eps, options)
        };
        x = step(tape).map_err(|e| Error::Block {
            block: i,
            source: Box::new(e),
        })?;
        debug_assert_eq!(tape.value(x).shape(), [gh * gw, config.d_model]);
    }
    let x = tape.layernorm(x, bound.var("norm.weight")?, bound.var("norm.bias")?, config.eps)?;
    let pooled = tape.mean_rows(x)?;
    let logits = tape.matmul(pooled, bound.var("head.weight")?)?;
    tape.add_bias(logits, bound.var("head.bias")?)
}

/// Tokenizes a normalized image.
pub fn tokenize(image: &NdArray, weights: &Weights, config: &ModelConfig) -> Result<TokenGrid> {
    let mut tape = Tape::new();
    let bound = BoundWeights::bind(&mut tape, weights);
    let img = tape.leaf(image.clone());
    let (tokens, gh, gw) = tokenize_on_tape(&mut tape, &bound, config, img)?;
    TokenGrid::new(gh, gw, tape.value(tokens).clone())
}

pub fn block_forward(grid: &TokenGrid, params: &BlockParams, eps: f64, options: Scan2dOptions) -> Result<TokenGrid> {
    let mut tape = Tape::new();
    let x = tape.leaf(grid.tokens().clone());
    let p = BlockVars::from_params(&mut tape, params);
    let paths = Rc::new(generate_continuous_paths(grid.height(), grid.width())?);
    let y = block_on_tape(&mut tape, x, &p, &paths, eps, options)?;
    TokenGrid::new(grid.height(), grid.width(), tape.value(y).clone())
}

/// Logits `[num_classes]` for an `[H_I, W_I, 3]` image with values in `[0, 1]`.
pub fn model_forward(pixels: &NdArray, weights: &Weights, config: &ModelConfig) -> Result<NdArray> {
    config.validate()?;
    weights.check_against(config)?;
    let mut tape = Tape::new();
    let bound = BoundWeights::bind(&mut tape, weights);
    let logits = forward_on_tape(&mut tape, &bound, config, pixels)?;
    let out = tape.value(logits);
    NdArray::new(&[out.len()], out.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::model::config::Preset;
    use crate::model::params::init_params;
    use crate::selective_scan::{direction_aware_scan_2d, ScanInputs};
    use crate::tensor::gradcheck::grad_check_sampled;
    use crate::tensor::kernels as k;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> NdArray {
        NdArray::from_fn(shape, |_| rng.random_range(-scale..scale))
    }

    /// Perturbs every tensor so zero-initialized ones take part too.
    fn jitter(w: &mut Weights, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, t) in w.iter_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }

    fn straight_line_block(grid: &TokenGrid, p: &BlockParams, eps: f64) -> NdArray {
        let (h, w) = (grid.height(), grid.width());
        let (di, m, r) = (p.d_inner(), p.state_size(), p.dt_rank());
        let n = h * w;
        let x = grid.tokens();
        let normed = k::layernorm(x, &p.norm_gamma, &p.norm_beta, eps).unwrap();
        let xz = k::matmul(&normed, &p.in_proj).unwrap();
        let cols = |a: &NdArray, s: usize, l: usize| {
            NdArray::from_fn(&[a.rows(), l], |i| a.row(i / l)[s + i % l])
        };
        let xb = cols(&xz, 0, di).reshape(&[h, w, di]).unwrap();
        let xb = k::depthwise_conv2d(&xb, &p.dw_kernel).unwrap().reshape(&[n, di]).unwrap();
        let xs = k::activation(&k::add_bias(&xb, &p.dw_bias).unwrap(), Activation::Silu);
        let z = k::activation(&cols(&xz, di, di), Activation::Silu);
        let dbc = k::matmul(&xs, &p.x_proj).unwrap();
        let dt = k::add_bias(&k::matmul(&cols(&dbc, 0, r), &p.dt_proj).unwrap(), &p.dt_bias).unwrap();
        let inputs = ScanInputs {
            x: xs,
            b: cols(&dbc, r, m),
            c: cols(&dbc, r + m, m),
            delta: k::activation(&dt, Activation::Softplus),
        };
        let paths = generate_continuous_paths(h, w).unwrap();
        let y = direction_aware_scan_2d(&inputs, &p.core, &paths, Scan2dOptions::default()).unwrap();
        let out = k::matmul(&y.mul(&z).unwrap(), &p.out_proj).unwrap();
        out.add(x).unwrap()
    }

    #[test]
    fn block_matches_straight_line_oracle() {
        let c = Preset::Toy.config();
        let mut w = init_params(&c, 3).unwrap();
        jitter(&mut w, 4);
        let p = BlockParams::from_weights(&w, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = TokenGrid::new(3, 5, random(&[15, c.d_model], 1.0, &mut rng)).unwrap();
        let got = block_forward(&grid, &p, c.eps, Scan2dOptions::default()).unwrap();
        let want = straight_line_block(&grid, &p, c.eps);
        assert!(got.tokens().max_abs_diff(&want) < 1e-9);
    }

    #[test]
    fn model_output_shape_and_resolution_change() {
        let c = Preset::Toy.config();
        let w = init_params(&c, 1).unwrap();
        let img = NdArray::full(&[32, 32, 3], 0.5);
        assert_eq!(model_forward(&img, &w, &c).unwrap().shape(), [2]);
        let wide = NdArray::full(&[16, 40, 3], 0.25);
        assert_eq!(model_forward(&wide, &w, &c).unwrap().shape(), [2]);
        let bad = NdArray::full(&[30, 32, 3], 0.25);
        assert!(matches!(model_forward(&bad, &w, &c), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_weight_names_block() {
        let c = Preset::Toy.config();
        let mut w = init_params(&c, 1).unwrap();
        w.get_mut("blocks.1.x_proj.weight").unwrap().data_mut()[0] = f64::NAN;
        let img = NdArray::full(&[32, 32, 3], 0.5);
        let err = model_forward(&img, &w, &c).unwrap_err();
        assert!(matches!(err, Error::Block { block: 1, .. }), "{err}");
    }

    #[test]
    fn toy_loss_gradients() {
        let c = Preset::Toy.config();
        let mut w = init_params(&c, 2).unwrap();
        jitter(&mut w, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = NdArray::from_fn(&[32, 32, 3], |_| rng.random_range(0.0..1.0));
        let names: Vec<String> = w.iter().map(|(n, _)| n.to_string()).collect();
        let tensors: Vec<NdArray> = w.iter().map(|(_, t)| t.clone()).collect();
        let r = grad_check_sampled(
            |tape, vars| {
                let bound = BoundWeights::from_vars(names.iter().cloned().zip(vars.iter().copied()));
                let logits = forward_on_tape(tape, &bound, &c, &img)?;
                tape.cross_entropy(logits, 1)
            },
            &tensors,
            1e-5,
            4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?} at {}", names[r.worst.0]);
    }

    #[test]
    fn bilinear_identity_at_training_grid() {
        let m = bilinear_matrix(4, 4, 4);
        assert_eq!(m, NdArray::eye(16));
    }

    #[test]
    fn bilinear_rows_are_convex() {
        let m = bilinear_matrix(3, 7, 4);
        for r in 0..m.rows() {
            assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(m.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn patch_indices_cover_image_once() {
        let mut idx = patch_indices(16, 8, 4);
        idx.sort_unstable();
        assert_eq!(idx, (0..16 * 8 * 3).collect::<Vec<_>>());
    }
}
