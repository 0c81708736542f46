//! Zero-order-hold discretization and the selective-scan recurrences.
//!
//! Shapes: `x` and `delta` are `[N, d_inner]`, `B` and `C` are `[N, m]`,
//! `A` is `[d_inner, m]` (diagonal state per channel), `D` is `[d_inner]`
//! and the direction table `Θ` is `[5, m]` indexed by [`Direction::index`].
//!
//! [`selective_scan_ref`] is the step-by-step oracle. Everything else runs
//! through [`scan_along`], which discretizes on the fly and walks one path.

use std::rc::Rc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scan_geometry::{Direction, PathSet};
use crate::tensor::autodiff::{Tape, Var};
use crate::tensor::macs::{self, Bucket};
use crate::tensor::NdArray;

/// Below this `|Δ·A|` the `expm1(z)/z` factor switches to its Taylor series.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-4;

/// MAC convention for the recurrence, per state element per token per path
/// (follows the reference Mamba selective-scan FLOP formula).
pub const SCAN_MACS_PER_STATE: u64 = 9;
/// Elementwise discretization work per state element per token per path:
/// `Δ·A`, `exp`, `expm1(z)/z`, `Δ·B` scaling, `Δ·Θ` scaling, `B̄ + Θ̄`.
pub const DISCRETIZE_MACS_PER_STATE: u64 = 6;

/// `(exp(z) − 1) / z`, with `1 + z/2 + z²/6` near zero.
pub fn zoh_factor(z: f64) -> f64 {
    if z.abs() < ZOH_SERIES_THRESHOLD {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

/// Derivative of [`zoh_factor`].
pub fn zoh_factor_derivative(z: f64) -> f64 {
    if z.abs() < ZOH_SERIES_THRESHOLD {
        0.5 + z / 3.0 + z * z / 8.0
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsmCore {
    a: NdArray,
    d: NdArray,
    theta: NdArray,
}

impl SsmCore {
    pub fn new(a: NdArray, d: NdArray, theta: NdArray) -> Result<Self> {
        if a.ndim() != 2 {
            return Err(Error::shape("SsmCore A", a.shape(), &[2]));
        }
        let (di, m) = (a.shape()[0], a.shape()[1]);
        if d.shape() != [di] {
            return Err(Error::shape("SsmCore D", d.shape(), &[di]));
        }
        if theta.shape() != [5, m] {
            return Err(Error::shape("SsmCore Theta", theta.shape(), &[5, m]));
        }
        if let Some(i) = a.data().iter().position(|&v| !(v < 0.0)) {
            return Err(Error::Domain(format!(
                "A must be strictly negative; entry {i} is {}",
                a.data()[i]
            )));
        }
        Ok(Self { a, d, theta })
    }

    /// Standard initialization: `A[c, n] = −(n + 1)`, `D = 1`, `Θ = 0`.
    pub fn init(d_inner: usize, m: usize) -> Self {
        Self {
            a: NdArray::from_fn(&[d_inner, m], |i| -((i % m) as f64 + 1.0)),
            d: NdArray::full(&[d_inner], 1.0),
            theta: NdArray::zeros(&[5, m]),
        }
    }

    pub fn a(&self) -> &NdArray {
        &self.a
    }

    pub fn d(&self) -> &NdArray {
        &self.d
    }

    pub fn theta(&self) -> &NdArray {
        &self.theta
    }

    pub fn d_inner(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn state_size(&self) -> usize {
        self.a.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanInputs {
    pub x: NdArray,
    pub b: NdArray,
    pub c: NdArray,
    pub delta: NdArray,
}

impl ScanInputs {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self, core: &SsmCore) -> Result<()> {
        let (di, m) = (core.d_inner(), core.state_size());
        let n = self.x.shape().first().copied().unwrap_or(0);
        if self.x.shape() != [n, di] {
            return Err(Error::shape("scan x", self.x.shape(), &[n, di]));
        }
        if self.delta.shape() != [n, di] {
            return Err(Error::shape("scan delta", self.delta.shape(), &[n, di]));
        }
        if self.b.shape() != [n, m] {
            return Err(Error::shape("scan B", self.b.shape(), &[n, m]));
        }
        if self.c.shape() != [n, m] {
            return Err(Error::shape("scan C", self.c.shape(), &[n, m]));
        }
        if let Some(i) = self.delta.data().iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Domain(format!(
                "delta must be positive; entry {i} is {}",
                self.delta.data()[i]
            )));
        }
        Ok(())
    }
}

/// Discretizes one step: `Ā = exp(Δ·A)`, `B̄ = (Δ·A)⁻¹(exp(Δ·A) − 1)·Δ·B`.
///
/// `a` is `[d_inner, m]`, `b` is `[m]`, `delta` is `[d_inner]`; both outputs
/// are `[d_inner, m]`.
pub fn zoh_discretize(a: &NdArray, b: &NdArray, delta: &NdArray) -> Result<(NdArray, NdArray)> {
    if a.ndim() != 2 || b.shape() != [a.shape()[1]] || delta.shape() != [a.shape()[0]] {
        return Err(Error::shape("zoh_discretize", a.shape(), b.shape()));
    }
    if let Some(i) = delta.data().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Domain(format!(
            "delta must be positive; entry {i} is {}",
            delta.data()[i]
        )));
    }
    let m = a.shape()[1];
    let mut a_bar = NdArray::zeros(a.shape());
    let mut b_bar = NdArray::zeros(a.shape());
    for (i, &av) in a.data().iter().enumerate() {
        let dt = delta.data()[i / m];
        let z = dt * av;
        a_bar.data_mut()[i] = z.exp();
        b_bar.data_mut()[i] = zoh_factor(z) * dt * b.data()[i % m];
    }
    Ok((a_bar, b_bar))
}

/// Literal sequential recurrence `h_i = Ā_i h_{i−1} + B̄_i x_i`,
/// `y_i = C_i h_i + D x_i`, discretizing each step with [`zoh_discretize`].
pub fn selective_scan_ref(inputs: &ScanInputs, core: &SsmCore) -> Result<NdArray> {
    inputs.validate(core)?;
    let (n, di, m) = (inputs.len(), core.d_inner(), core.state_size());
    let mut h = NdArray::zeros(&[di, m]);
    let mut y = NdArray::zeros(&[n, di]);
    for i in 0..n {
        let b_i = NdArray::new(&[m], inputs.b.row(i).to_vec())?;
        let delta_i = NdArray::new(&[di], inputs.delta.row(i).to_vec())?;
        let (a_bar, b_bar) = zoh_discretize(&core.a, &b_i, &delta_i)?;
        for c in 0..di {
            let x = inputs.x.get(&[i, c]);
            let mut acc = core.d.data()[c] * x;
            for s in 0..m {
                let hv = a_bar.get(&[c, s]) * h.get(&[c, s]) + b_bar.get(&[c, s]) * x;
                h.set(&[c, s], hv);
                acc += inputs.c.get(&[i, s]) * hv;
            }
            if !acc.is_finite() {
                return Err(Error::NonFinite {
                    context: "selective_scan_ref step".into(),
                    index: i,
                });
            }
            y.set(&[i, c], acc);
        }
    }
    Ok(y)
}

/// Same recurrence as [`selective_scan_ref`], with channels in parallel and
/// discretization fused into the state update.
pub fn selective_scan_fused(inputs: &ScanInputs, core: &SsmCore) -> Result<NdArray> {
    inputs.validate(core)?;
    let order: Vec<usize> = (0..inputs.len()).collect();
    let y = scan_along(&order, None, inputs, core, None, None);
    check_finite(&y, "selective_scan_fused")?;
    Ok(y)
}

fn check_finite(y: &NdArray, context: &str) -> Result<()> {
    match y.first_non_finite() {
        Some(i) => Err(Error::NonFinite {
            context: context.into(),
            index: i / y.cols().max(1),
        }),
        None => Ok(()),
    }
}

/// Runs the recurrence along `order` (rows of the inputs, in visit order).
///
/// When `directions` is given, `Θ[direction]` is added to `B` before
/// discretization. Output rows are written back at their original index.
/// When `history` is given it receives every post-update state, laid out
/// `[step, channel, state]`.
/// `Ā`, `Δ·φ(Δ·A)` and optionally `Δ·φ′(Δ·A)` per `[row, channel, state]`,
/// shared by the four paths since none of them depends on `B` or `Θ`.
struct Discretized {
    a_bar: Vec<f64>,
    u: Vec<f64>,
    du: Vec<f64>,
}

impl Discretized {
    fn new(inputs: &ScanInputs, core: &SsmCore, derivative: bool) -> Self {
        let (di, m) = (core.d_inner(), core.state_size());
        let a = core.a.data();
        let len = inputs.len() * di * m;
        let (mut a_bar, mut u) = (vec![0.0; len], vec![0.0; len]);
        let mut du = if derivative { vec![0.0; len] } else { Vec::new() };
        let chunk = (di * m).max(1);
        a_bar
            .par_chunks_mut(chunk)
            .zip(u.par_chunks_mut(chunk))
            .enumerate()
            .for_each(|(row, (ab, uu))| {
                for (k, (ab, uu)) in ab.iter_mut().zip(uu.iter_mut()).enumerate() {
                    let dt = inputs.delta.data()[row * di + k / m];
                    let z = dt * a[k];
                    *ab = z.exp();
                    *uu = dt * zoh_factor(z);
                }
            });
        if derivative {
            du.par_chunks_mut(chunk).enumerate().for_each(|(row, dd)| {
                for (k, dd) in dd.iter_mut().enumerate() {
                    let dt = inputs.delta.data()[row * di + k / m];
                    *dd = dt * zoh_factor_derivative(dt * a[k]);
                }
            });
        }
        Self { a_bar, u, du }
    }
}

fn scan_along(
    order: &[usize],
    directions: Option<&[Direction]>,
    inputs: &ScanInputs,
    core: &SsmCore,
    disc: Option<&Discretized>,
    history: Option<&mut Vec<f64>>,
) -> NdArray {
    let (n, di, m) = (order.len(), core.d_inner(), core.state_size());
    let (a, d, theta) = (core.a.data(), core.d.data(), core.theta.data());
    let channel = |c: usize, hist: Option<&mut [f64]>| -> Vec<f64> {
        let mut h = vec![0.0; m];
        let mut out = vec![0.0; n];
        let mut hist = hist;
        for (step, &row) in order.iter().enumerate() {
            let x = inputs.x.data()[row * di + c];
            let dt = inputs.delta.data()[row * di + c];
            let b = inputs.b.row(row);
            let cc = inputs.c.row(row);
            let th = directions.map(|dirs| &theta[dirs[step].index() * m..(dirs[step].index() + 1) * m]);
            let mut acc = d[c] * x;
            for s in 0..m {
                let bsum = b[s] + th.map_or(0.0, |t| t[s]);
                let (a_bar, u) = match disc {
                    Some(q) => {
                        let k = (row * di + c) * m + s;
                        (q.a_bar[k], q.u[k])
                    }
                    None => {
                        let z = dt * a[c * m + s];
                        (z.exp(), zoh_factor(z) * dt)
                    }
                };
                h[s] = a_bar * h[s] + u * bsum * x;
                acc += cc[s] * h[s];
            }
            if let Some(hs) = hist.as_deref_mut() {
                hs[step * m..(step + 1) * m].copy_from_slice(&h);
            }
            out[step] = acc;
        }
        out
    };

    let per_channel: Vec<Vec<f64>> = match history {
        Some(hist) => {
            // [channel, step, state] scratch, transposed into the caller's layout
            let mut scratch = vec![0.0; di * n * m];
            let outs: Vec<Vec<f64>> = scratch
                .par_chunks_mut((n * m).max(1))
                .enumerate()
                .map(|(c, chunk)| channel(c, Some(chunk)))
                .collect();
            hist.clear();
            hist.resize(n * di * m, 0.0);
            for c in 0..di {
                for step in 0..n {
                    let src = &scratch[(c * n + step) * m..(c * n + step + 1) * m];
                    hist[(step * di + c) * m..(step * di + c + 1) * m].copy_from_slice(src);
                }
            }
            outs
        }
        None => (0..di).into_par_iter().map(|c| channel(c, None)).collect(),
    };

    let mut y = NdArray::zeros(&[inputs.x.shape()[0], di]);
    for (c, col) in per_channel.iter().enumerate() {
        for (step, &row) in order.iter().enumerate() {
            y.data_mut()[row * di + c] = col[step];
        }
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Scan2dOptions {
    /// Divide the summed path outputs by the number of paths, so the skip
    /// term `D·x` is counted once instead of four times.
    pub average_paths: bool,
}

impl Scan2dOptions {
    fn path_scale(self) -> f64 {
        if self.average_paths {
            0.25
        } else {
            1.0
        }
    }
}

fn check_2d(inputs: &ScanInputs, core: &SsmCore, paths: &PathSet) -> Result<()> {
    inputs.validate(core)?;
    if inputs.len() != paths.cells() {
        return Err(Error::shape(
            "direction_aware_scan_2d",
            &[inputs.len()],
            &[paths.height(), paths.width()],
        ));
    }
    Ok(())
}

/// Direction-aware scan over a token grid.
///
/// Every array in `inputs` is indexed by row-major grid cell. Each of the
/// four paths runs `h_{k,i} = Ā_i h_{k,i−1} + (B̄_i + Θ̄_{k,i}) x_i`,
/// `y_{k,i} = C_i h_{k,i} + D x_i`; path outputs are scattered back to grid
/// positions and summed.
pub fn direction_aware_scan_2d(
    inputs: &ScanInputs,
    core: &SsmCore,
    paths: &PathSet,
    options: Scan2dOptions,
) -> Result<NdArray> {
    check_2d(inputs, core, paths)?;
    let disc = Discretized::new(inputs, core, false);
    let outs: Vec<NdArray> = paths
        .paths()
        .par_iter()
        .map(|p| scan_along(p.order(), Some(p.directions()), inputs, core, Some(&disc), None))
        .collect();
    let mut y = NdArray::zeros(inputs.x.shape());
    for o in &outs {
        y.add_assign(o);
    }
    if options.average_paths {
        y = y.scale(options.path_scale());
    }
    check_finite(&y, "direction_aware_scan_2d")?;
    Ok(y)
}

/// Gradients of a scalar loss through [`direction_aware_scan_2d`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scan2dGrads {
    pub x: NdArray,
    pub delta: NdArray,
    pub b: NdArray,
    pub c: NdArray,
    pub a: NdArray,
    pub d: NdArray,
    pub theta: NdArray,
}

impl Scan2dGrads {
    fn zeros(inputs: &ScanInputs, core: &SsmCore) -> Self {
        Self {
            x: NdArray::zeros(inputs.x.shape()),
            delta: NdArray::zeros(inputs.delta.shape()),
            b: NdArray::zeros(inputs.b.shape()),
            c: NdArray::zeros(inputs.c.shape()),
            a: NdArray::zeros(core.a.shape()),
            d: NdArray::zeros(core.d.shape()),
            theta: NdArray::zeros(core.theta.shape()),
        }
    }

    fn accumulate(&mut self, other: &Scan2dGrads) {
        self.x.add_assign(&other.x);
        self.delta.add_assign(&other.delta);
        self.b.add_assign(&other.b);
        self.c.add_assign(&other.c);
        self.a.add_assign(&other.a);
        self.d.add_assign(&other.d);
        self.theta.add_assign(&other.theta);
    }
}

/// Reverse pass of one path. `grad_y` is grid-indexed.
fn scan_along_backward(
    order: &[usize],
    directions: &[Direction],
    inputs: &ScanInputs,
    core: &SsmCore,
    disc: &Discretized,
    grad_y: &NdArray,
) -> Scan2dGrads {
    let (n, di, m) = (order.len(), core.d_inner(), core.state_size());
    let mut hist = Vec::new();
    scan_along(order, Some(directions), inputs, core, Some(disc), Some(&mut hist));

    let (a, d, theta) = (core.a.data(), core.d.data(), core.theta.data());
    let mut g = Scan2dGrads::zeros(inputs, core);
    // carried dL/dh_{i} from step i+1, per (channel, state)
    let mut carry = vec![0.0; di * m];
    for step in (0..n).rev() {
        let row = order[step];
        let dir = directions[step].index();
        let b = inputs.b.row(row);
        let cc = inputs.c.row(row);
        let th = &theta[dir * m..(dir + 1) * m];
        for c in 0..di {
            let gy = grad_y.data()[row * di + c];
            let x = inputs.x.data()[row * di + c];
            let dt = inputs.delta.data()[row * di + c];
            g.d.data_mut()[c] += gy * x;
            let mut gx = gy * d[c];
            let mut gdt = 0.0;
            for s in 0..m {
                let k = c * m + s;
                let h = hist[(step * di + c) * m + s];
                let h_prev = if step > 0 { hist[((step - 1) * di + c) * m + s] } else { 0.0 };
                let gh = carry[k] + cc[s] * gy;
                g.c.data_mut()[row * m + s] += gy * h;

                let q = (row * di + c) * m + s;
                let (ea, u) = (disc.a_bar[q], disc.u[q]);
                let bsum = b[s] + th[s];
                gx += gh * u * bsum;
                let gbb = gh * x;
                g.b.data_mut()[row * m + s] += gbb * u;
                g.theta.data_mut()[dir * m + s] += gbb * u;
                let gu = gbb * bsum;
                let gz = gh * h_prev * ea + gu * disc.du[q];
                gdt += gu * u / dt + gz * a[k];
                g.a.data_mut()[k] += gz * dt;
                carry[k] = ea * gh;
            }
            g.x.data_mut()[row * di + c] += gx;
            g.delta.data_mut()[row * di + c] += gdt;
        }
    }
    g
}

/// Reverse pass of [`direction_aware_scan_2d`] for upstream gradient `grad_y`.
pub fn direction_aware_scan_2d_backward(
    inputs: &ScanInputs,
    core: &SsmCore,
    paths: &PathSet,
    options: Scan2dOptions,
    grad_y: &NdArray,
) -> Result<Scan2dGrads> {
    check_2d(inputs, core, paths)?;
    if grad_y.shape() != inputs.x.shape() {
        return Err(Error::shape("direction_aware_scan_2d_backward", grad_y.shape(), inputs.x.shape()));
    }
    let grad_y = grad_y.scale(options.path_scale());
    let disc = Discretized::new(inputs, core, true);
    let per_path: Vec<Scan2dGrads> = paths
        .paths()
        .par_iter()
        .map(|p| scan_along_backward(p.order(), p.directions(), inputs, core, &disc, &grad_y))
        .collect();
    let mut total = Scan2dGrads::zeros(inputs, core);
    for g in &per_path {
        total.accumulate(g);
    }
    Ok(total)
}

/// Records [`direction_aware_scan_2d`] on a tape.
///
/// Parent order: `x, delta, b, c, a, d, theta`.
#[allow(clippy::too_many_arguments)]
pub fn scan_2d_on_tape(
    tape: &mut Tape,
    x: Var,
    delta: Var,
    b: Var,
    c: Var,
    a: Var,
    d: Var,
    theta: Var,
    paths: Rc<PathSet>,
    options: Scan2dOptions,
) -> Result<Var> {
    let inputs = ScanInputs {
        x: tape.value(x).clone(),
        b: tape.value(b).clone(),
        c: tape.value(c).clone(),
        delta: tape.value(delta).clone(),
    };
    let core = SsmCore::new(tape.value(a).clone(), tape.value(d).clone(), tape.value(theta).clone())?;
    let y = direction_aware_scan_2d(&inputs, &core, &paths, options)?;
    let (token, other) = scan_2d_macs(inputs.len(), core.d_inner(), core.state_size(), options);
    macs::record_in(Bucket::TokenMixing, token);
    macs::record_in(Bucket::Other, other);
    Ok(tape.custom(&[x, delta, b, c, a, d, theta], y, move |g| {
        let gr = direction_aware_scan_2d_backward(&inputs, &core, &paths, options, g)?;
        Ok(vec![gr.x, gr.delta, gr.b, gr.c, gr.a, gr.d, gr.theta])
    }))
}

/// `(token_mixing, other)` MACs of one 2D scan over `cells` tokens with four paths.
pub fn scan_2d_macs(cells: usize, d_inner: usize, state: usize, options: Scan2dOptions) -> (u64, u64) {
    let (n, di, m) = (cells as u64, d_inner as u64, state as u64);
    let token = 4 * n * (SCAN_MACS_PER_STATE * di * m + di);
    let mut other = 4 * n * DISCRETIZE_MACS_PER_STATE * di * m + 3 * n * di;
    if options.average_paths {
        other += n * di;
    }
    (token, other)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan_geometry::generate_continuous_paths;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> NdArray {
        NdArray::new(&[1], vec![v]).unwrap()
    }

    #[test]
    fn zoh_half_life_step() {
        let a = NdArray::new(&[1, 1], vec![-1.0]).unwrap();
        let (ab, bb) = zoh_discretize(&a, &scalar(1.0), &scalar(std::f64::consts::LN_2)).unwrap();
        assert!((ab.data()[0] - 0.5).abs() < 1e-10);
        assert!((bb.data()[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn zoh_small_step_limit() {
        let a = NdArray::new(&[1, 1], vec![-1.0]).unwrap();
        let (ab, bb) = zoh_discretize(&a, &scalar(1.0), &scalar(1e-12)).unwrap();
        assert!((ab.data()[0] - 1.0).abs() < 1e-10);
        assert!(bb.data()[0].abs() < 1e-10);
    }

    #[test]
    fn zoh_extended_precision_case() {
        // A=-2, Δ=0.5, B=3: Ā = e^-1, B̄ = 1.5·(1 − e^-1), 20 digits via mpmath
        let a = NdArray::new(&[1, 1], vec![-2.0]).unwrap();
        let (ab, bb) = zoh_discretize(&a, &scalar(3.0), &scalar(0.5)).unwrap();
        assert!((ab.data()[0] - 0.367_879_441_171_442_321_6).abs() < 1e-15);
        assert!((bb.data()[0] - 0.948_180_838_242_836_517_6).abs() < 1e-15);
    }

    #[test]
    fn zoh_rejects_non_positive_delta() {
        let a = NdArray::new(&[1, 1], vec![-1.0]).unwrap();
        assert!(matches!(
            zoh_discretize(&a, &scalar(1.0), &scalar(0.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn series_branch_is_continuous() {
        for &z in &[-1.0001e-4, -0.9999e-4, 0.9999e-4, 1.0001e-4] {
            let direct = if z == 0.0 { 1.0 } else { f64::exp_m1(z) / z };
            assert!((zoh_factor(z) - direct).abs() < 1e-12);
            let fd = (zoh_factor(z + 1e-7) - zoh_factor(z - 1e-7)) / 2e-7;
            assert!((zoh_factor_derivative(z) - fd).abs() < 1e-6);
        }
    }

    fn scalar_inputs(n: usize, delta: f64) -> (ScanInputs, SsmCore) {
        let inputs = ScanInputs {
            x: NdArray::full(&[n, 1], 1.0),
            b: NdArray::full(&[n, 1], 1.0),
            c: NdArray::full(&[n, 1], 1.0),
            delta: NdArray::full(&[n, 1], delta),
        };
        let core = SsmCore::new(
            NdArray::new(&[1, 1], vec![-1.0]).unwrap(),
            NdArray::zeros(&[1]),
            NdArray::zeros(&[5, 1]),
        )
        .unwrap();
        (inputs, core)
    }

    #[test]
    fn three_step_hand_recurrence() {
        let (inputs, core) = scalar_inputs(3, std::f64::consts::LN_2);
        let y = selective_scan_ref(&inputs, &core).unwrap();
        for (got, want) in y.data().iter().zip([0.5, 0.75, 0.875]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn large_delta_forgets_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut inputs, core) = scalar_inputs(4, 1e3);
        inputs.x = NdArray::from_fn(&[4, 1], |_| rng.random_range(-1.0..1.0));
        let y = selective_scan_ref(&inputs, &core).unwrap();
        // Ā = 0, B̄ = (0 − 1)/(−Δ)·Δ = 1, so y_i = C·B̄·x_i + D·x_i = x_i
        assert!(y.max_abs_diff(&inputs.x) < 1e-12);
    }

    #[test]
    fn single_step() {
        let (inputs, core) = scalar_inputs(1, 0.3);
        let y = selective_scan_ref(&inputs, &core).unwrap();
        let expect = zoh_factor(-0.3) * 0.3;
        assert!((y.data()[0] - expect).abs() < 1e-15);
        assert!(selective_scan_fused(&inputs, &core).unwrap().max_abs_diff(&y) < 1e-15);
    }

    #[test]
    fn fused_zero_input_gives_zero() {
        let (mut inputs, core) = scalar_inputs(5, 0.1);
        inputs.x = NdArray::zeros(&[5, 1]);
        assert!(selective_scan_fused(&inputs, &core).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn core_rejects_non_negative_a() {
        let err = SsmCore::new(
            NdArray::new(&[1, 2], vec![-1.0, 0.0]).unwrap(),
            NdArray::zeros(&[1]),
            NdArray::zeros(&[5, 2]),
        );
        assert!(matches!(err, Err(Error::Domain(_))));
        let err = SsmCore::new(
            NdArray::new(&[1, 2], vec![-1.0, -1.0]).unwrap(),
            NdArray::zeros(&[1]),
            NdArray::zeros(&[4, 2]),
        );
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn scan_2d_rejects_mismatched_paths() {
        let (inputs, core) = scalar_inputs(4, 0.1);
        let paths = generate_continuous_paths(3, 2).unwrap();
        assert!(matches!(
            direction_aware_scan_2d(&inputs, &core, &paths, Scan2dOptions::default()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn scan_2d_single_cell() {
        let (inputs, _) = scalar_inputs(1, 0.4);
        let core = SsmCore::new(
            NdArray::new(&[1, 1], vec![-1.5]).unwrap(),
            NdArray::new(&[1], vec![0.7]).unwrap(),
            NdArray::from_fn(&[5, 1], |i| 0.1 * (i as f64 + 1.0)),
        )
        .unwrap();
        let paths = generate_continuous_paths(1, 1).unwrap();
        let y = direction_aware_scan_2d(&inputs, &core, &paths, Scan2dOptions::default()).unwrap();
        let u = zoh_factor(-1.5 * 0.4) * 0.4;
        let begin = core.theta().data()[Direction::Begin.index()];
        let expect = 4.0 * ((u * 1.0 + u * begin) * 1.0 + 0.7);
        assert!((y.data()[0] - expect).abs() < 1e-14);

        let avg = direction_aware_scan_2d(&inputs, &core, &paths, Scan2dOptions { average_paths: true }).unwrap();
        assert!((avg.data()[0] - expect / 4.0).abs() < 1e-14);
    }
}
