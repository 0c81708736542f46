//! Forward and backward kernels on plain [`NdArray`] values.
//!
//! These do no graph bookkeeping; [`super::autodiff::Tape`] wraps them.

use rayon::prelude::*;

use super::NdArray;
use crate::error::{Error, Result};

/// Work size (multiply-adds) above which matmul splits rows across threads.
const PAR_MATMUL_WORK: usize = 1 << 16;

pub fn matmul(a: &NdArray, b: &NdArray) -> Result<NdArray> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (n, k, p) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; n * p];
    let (ad, bd) = (a.data(), b.data());
    let row = |(i, orow): (usize, &mut [f64])| {
        let arow = &ad[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[kk * p..(kk + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    };
    if n * k * p >= PAR_MATMUL_WORK && p > 0 {
        out.par_chunks_mut(p).enumerate().for_each(row);
    } else if p > 0 {
        out.chunks_mut(p).enumerate().for_each(row);
    }
    NdArray::new(&[n, p], out)
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &NdArray, b: &NdArray) -> Result<NdArray> {
    matmul(a, &b.transpose()?)
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &NdArray, b: &NdArray) -> Result<NdArray> {
    matmul(&a.transpose()?, b)
}

fn check_conv(x: &NdArray, kernel: &NdArray) -> Result<(usize, usize, usize, usize)> {
    if x.ndim() != 3 || kernel.ndim() != 3 {
        return Err(Error::shape("depthwise_conv2d", x.shape(), kernel.shape()));
    }
    let (h, w, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = kernel.shape()[0];
    if kernel.shape()[1] != k || kernel.shape()[2] != d {
        return Err(Error::shape("depthwise_conv2d", x.shape(), kernel.shape()));
    }
    if k % 2 == 0 {
        return Err(Error::Config(format!(
            "depthwise kernel extent must be odd, got {k}"
        )));
    }
    Ok((h, w, d, k))
}

/// Per-channel 2D correlation with zero "same" padding.
///
/// `x` is `[H, W, d]`, `kernel` is `[k, k, d]` with odd `k`.
pub fn depthwise_conv2d(x: &NdArray, kernel: &NdArray) -> Result<NdArray> {
    let (h, w, d, k) = check_conv(x, kernel)?;
    let pad = (k / 2) as isize;
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![0.0; h * w * d];
    for r in 0..h {
        for c in 0..w {
            let o = &mut out[(r * w + c) * d..(r * w + c + 1) * d];
            for i in 0..k {
                let rr = r as isize + i as isize - pad;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for j in 0..k {
                    let cc = c as isize + j as isize - pad;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    let xi = (rr as usize * w + cc as usize) * d;
                    let ki = (i * k + j) * d;
                    for ch in 0..d {
                        o[ch] += xd[xi + ch] * kd[ki + ch];
                    }
                }
            }
        }
    }
    NdArray::new(&[h, w, d], out)
}

/// Gradients of [`depthwise_conv2d`] with respect to its input and kernel.
pub fn depthwise_conv2d_backward(
    x: &NdArray,
    kernel: &NdArray,
    grad_out: &NdArray,
) -> Result<(NdArray, NdArray)> {
    let (h, w, d, k) = check_conv(x, kernel)?;
    if grad_out.shape() != x.shape() {
        return Err(Error::shape("depthwise_conv2d_backward", grad_out.shape(), x.shape()));
    }
    let pad = (k / 2) as isize;
    let (xd, kd, gd) = (x.data(), kernel.data(), grad_out.data());
    let mut gx = vec![0.0; h * w * d];
    let mut gk = vec![0.0; k * k * d];
    for r in 0..h {
        for c in 0..w {
            let go = &gd[(r * w + c) * d..(r * w + c + 1) * d];
            for i in 0..k {
                let rr = r as isize + i as isize - pad;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for j in 0..k {
                    let cc = c as isize + j as isize - pad;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    let xi = (rr as usize * w + cc as usize) * d;
                    let ki = (i * k + j) * d;
                    for ch in 0..d {
                        gx[xi + ch] += go[ch] * kd[ki + ch];
                        gk[ki + ch] += go[ch] * xd[xi + ch];
                    }
                }
            }
        }
    }
    Ok((NdArray::new(&[h, w, d], gx)?, NdArray::new(&[k, k, d], gk)?))
}

fn check_norm(x: &NdArray, gamma: &NdArray, beta: &NdArray, eps: f64) -> Result<usize> {
    let d = x.cols();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::shape("layernorm", x.shape(), gamma.shape()));
    }
    if eps <= 0.0 {
        return Err(Error::Config(format!("layernorm eps must be positive, got {eps}")));
    }
    Ok(d)
}

/// Normalizes every row over the last axis, then applies `gamma`/`beta`.
pub fn layernorm(x: &NdArray, gamma: &NdArray, beta: &NdArray, eps: f64) -> Result<NdArray> {
    let d = check_norm(x, gamma, beta, eps)?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn layernorm_backward(
    x: &NdArray,
    gamma: &NdArray,
    beta: &NdArray,
    eps: f64,
    grad_out: &NdArray,
) -> Result<(NdArray, NdArray, NdArray)> {
    let d = check_norm(x, gamma, beta, eps)?;
    let mut gx = NdArray::zeros(x.shape());
    let mut gg = NdArray::zeros(&[d]);
    let mut gb = NdArray::zeros(&[d]);
    let mut xhat = vec![0.0; d];
    let mut gxhat = vec![0.0; d];
    for r in 0..x.rows() {
        let row = x.row(r);
        let go = grad_out.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            xhat[j] = (row[j] - mean) * inv;
            gxhat[j] = go[j] * gamma.data()[j];
            gg.data_mut()[j] += go[j] * xhat[j];
            gb.data_mut()[j] += go[j];
        }
        let m1 = gxhat.iter().sum::<f64>() / d as f64;
        let m2 = gxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let out = &mut gx.data_mut()[r * d..(r + 1) * d];
        for j in 0..d {
            out[j] = inv * (gxhat[j] - m1 - xhat[j] * m2);
        }
    }
    Ok((gx, gg, gb))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Softplus,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `log(1 + exp(x))`, switching to `x + log1p(exp(-x))` above 20.
pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => silu(x),
            Activation::Softplus => softplus(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

pub fn activation(x: &NdArray, kind: Activation) -> NdArray {
    x.map(|v| kind.apply(v))
}

/// Adds `bias[j]` to column `j` of every row; the explicit row-broadcast.
pub fn add_bias(x: &NdArray, bias: &NdArray) -> Result<NdArray> {
    let d = x.cols();
    if bias.shape() != [d] {
        return Err(Error::shape("add_bias", x.shape(), bias.shape()));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(out)
}

/// Column sums of a row-major matrix view.
pub fn sum_rows(x: &NdArray) -> NdArray {
    let d = x.cols();
    let mut out = vec![0.0; d];
    for row in x.data().chunks(d) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    NdArray::new(&[d], out).expect("column sum shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> NdArray {
        NdArray::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_identity_and_projector() {
        let b = NdArray::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(matmul(&NdArray::eye(2), &b).unwrap(), b);
        let p = NdArray::new(&[2, 2], vec![1., 0., 0., 0.]).unwrap();
        let b = NdArray::new(&[2, 2], vec![5., 6., 7., 8.]).unwrap();
        assert_eq!(matmul(&p, &b).unwrap().data(), &[5., 6., 0., 0.]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(n, k, p) in &[(3, 4, 2), (1, 1, 1), (7, 5, 9), (64, 40, 33)] {
            let a = random(&[n, k], &mut rng);
            let b = random(&[k, p], &mut rng);
            let mut expect = NdArray::zeros(&[n, p]);
            for i in 0..n {
                for j in 0..p {
                    let mut s = 0.0;
                    for kk in 0..k {
                        s += a.get(&[i, kk]) * b.get(&[kk, j]);
                    }
                    expect.set(&[i, j], s);
                }
            }
            assert!(matmul(&a, &b).unwrap().max_abs_diff(&expect) < 1e-12);
        }
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let err = matmul(&NdArray::zeros(&[3, 4]), &NdArray::zeros(&[3, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3, 4]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[4, 5, 3], &mut rng);
        let mut k = NdArray::zeros(&[3, 3, 3]);
        for ch in 0..3 {
            k.set(&[1, 1, ch], 1.0);
        }
        assert_eq!(depthwise_conv2d(&x, &k).unwrap(), x);
    }

    #[test]
    fn conv_ones_on_constant_interior() {
        let x = NdArray::full(&[5, 5, 1], 2.5);
        let k = NdArray::full(&[3, 3, 1], 1.0);
        let y = depthwise_conv2d(&x, &k).unwrap();
        assert_eq!(y.get(&[2, 2, 0]), 9.0 * 2.5);
        // corner sees only four in-bounds taps
        assert_eq!(y.get(&[0, 0, 0]), 4.0 * 2.5);
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let err = depthwise_conv2d(&NdArray::zeros(&[3, 3, 1]), &NdArray::zeros(&[2, 2, 1]));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[5, 5, 2], &mut rng);
        let k = random(&[3, 3, 2], &mut rng);
        let y = depthwise_conv2d(&x, &k).unwrap();
        for r in 0..5i64 {
            for c in 0..5i64 {
                for ch in 0..2 {
                    let mut s = 0.0;
                    for i in 0..3i64 {
                        for j in 0..3i64 {
                            let (rr, cc) = (r + i - 1, c + j - 1);
                            if (0..5).contains(&rr) && (0..5).contains(&cc) {
                                s += x.get(&[rr as usize, cc as usize, ch])
                                    * k.get(&[i as usize, j as usize, ch]);
                            }
                        }
                    }
                    assert!((y.get(&[r as usize, c as usize, ch]) - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn layernorm_cases() {
        let ones = NdArray::full(&[2], 1.0);
        let zeros = NdArray::zeros(&[2]);
        let c = NdArray::full(&[3, 2], 4.0);
        let y = layernorm(&c, &ones, &zeros, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let x = NdArray::new(&[1, 2], vec![1.0, -1.0]).unwrap();
        let y = layernorm(&x, &ones, &zeros, 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-10 && (y.data()[1] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn layernorm_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[4, 8], &mut rng).scale(3.0);
        let y = layernorm(&x, &NdArray::full(&[8], 1.0), &NdArray::zeros(&[8]), 1e-6).unwrap();
        for r in 0..4 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layernorm_rejects_bad_eps() {
        let x = NdArray::zeros(&[1, 2]);
        let g = NdArray::zeros(&[2]);
        assert!(layernorm(&x, &g, &g, 0.0).is_err());
    }

    #[test]
    fn activation_closed_forms() {
        assert_eq!(silu(0.0), 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(800.0).is_finite());
        assert!((softplus(40.0) - 40.0).abs() < 1e-15);
    }

    #[test]
    fn silu_tails_match_high_precision() {
        // 20·σ(20) and -20·σ(-20), evaluated to 30 digits offline with mpmath.
        let hi = 19.999_999_958_776_927_636;
        let lo = -4.122_307_236_380_407_163e-8;
        assert!(((silu(20.0) - hi) / hi).abs() < 1e-12);
        assert!(((silu(-20.0) - lo) / lo).abs() < 1e-12);
    }
}
