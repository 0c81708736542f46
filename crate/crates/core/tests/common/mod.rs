#![allow(dead_code)]

use plain_mamba::scan_geometry::PathSet;
use plain_mamba::selective_scan::{selective_scan_ref, ScanInputs, SsmCore};
use plain_mamba::{Direction, NdArray};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> NdArray {
    NdArray::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Random scan problem over `n` tokens with `A < 0`, `Δ > 0` and non-zero `Θ`.
pub fn random_scan(n: usize, di: usize, m: usize, seed: u64) -> (ScanInputs, SsmCore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = ScanInputs {
        x: uniform(&[n, di], -1.0, 1.0, &mut rng),
        b: uniform(&[n, m], -1.0, 1.0, &mut rng),
        c: uniform(&[n, m], -1.0, 1.0, &mut rng),
        delta: uniform(&[n, di], 0.01, 2.0, &mut rng),
    };
    let core = SsmCore::new(
        uniform(&[di, m], -3.0, -0.05, &mut rng),
        uniform(&[di], -1.0, 1.0, &mut rng),
        uniform(&[5, m], -1.0, 1.0, &mut rng),
    )
    .unwrap();
    (inputs, core)
}

fn gather_rows(x: &NdArray, order: &[usize]) -> NdArray {
    let cols = x.cols();
    NdArray::from_fn(&[order.len(), cols], |i| x.row(order[i / cols])[i % cols])
}

/// Sum over the four paths of the plain (direction-free) reference scan,
/// each path's output scattered back to grid order.
pub fn sum_of_plain_scans(inputs: &ScanInputs, core: &SsmCore, paths: &PathSet) -> NdArray {
    let mut total = NdArray::zeros(inputs.x.shape());
    for p in paths.paths() {
        let o = p.order();
        let permuted = ScanInputs {
            x: gather_rows(&inputs.x, o),
            b: gather_rows(&inputs.b, o),
            c: gather_rows(&inputs.c, o),
            delta: gather_rows(&inputs.delta, o),
        };
        let y = selective_scan_ref(&permuted, core).unwrap();
        let cols = y.cols();
        for (step, &row) in o.iter().enumerate() {
            for c in 0..cols {
                total.data_mut()[row * cols + c] += y.row(step)[c];
            }
        }
    }
    total
}

fn unit_label(from: (usize, usize), to: (usize, usize)) -> Option<Direction> {
    let dr = to.0 as isize - from.0 as isize;
    let dc = to.1 as isize - from.1 as isize;
    match (dr, dc) {
        (0, 1) => Some(Direction::Right),
        (0, -1) => Some(Direction::Left),
        (1, 0) => Some(Direction::Down),
        (-1, 0) => Some(Direction::Up),
        _ => None,
    }
}

/// Permutation, step adjacency, direction labels and reversal pairing of a
/// continuous path set.
pub fn check_continuous(ps: &PathSet) -> Result<(), String> {
    let (h, w) = (ps.height(), ps.width());
    let n = h * w;
    for (k, p) in ps.paths().iter().enumerate() {
        let mut seen = vec![false; n];
        for &cell in p.order() {
            if cell >= n || std::mem::replace(&mut seen[cell], true) {
                return Err(format!("{h}x{w} path {k}: not a permutation"));
            }
        }
        for (step, &cell) in p.order().iter().enumerate() {
            if p.inverse_order()[cell] != step {
                return Err(format!("{h}x{w} path {k}: inverse order wrong at {step}"));
            }
        }
        if p.directions()[0] != Direction::Begin {
            return Err(format!("{h}x{w} path {k}: first label is {}", p.directions()[0]));
        }
        for step in 1..n {
            match unit_label(p.cell(step - 1), p.cell(step)) {
                None => return Err(format!("{h}x{w} path {k}: step {step} not adjacent")),
                Some(d) if d != p.directions()[step] => {
                    return Err(format!("{h}x{w} path {k}: step {step} labelled {}, moved {d}", p.directions()[step]))
                }
                Some(_) => {}
            }
        }
    }
    for (fwd, rev) in [(0, 2), (1, 3)] {
        let (a, b) = (ps.path(fwd), ps.path(rev));
        let mut reversed = a.order().to_vec();
        reversed.reverse();
        if b.order() != reversed.as_slice() {
            return Err(format!("{h}x{w} path {rev} is not path {fwd} reversed"));
        }
        for step in 1..n {
            if b.directions()[step] != a.directions()[n - step].opposite() {
                return Err(format!("{h}x{w} path {rev} step {step} label not opposite of path {fwd}"));
            }
        }
    }
    Ok(())
}

/// Raster paths must break adjacency at exactly the wrap steps.
pub fn check_raster(ps: &PathSet) -> Result<(), String> {
    let (h, w) = (ps.height(), ps.width());
    for (k, p) in ps.paths().iter().enumerate() {
        let line = if k % 2 == 0 { w } else { h };
        let expected: Vec<usize> = if line > 1 {
            (1..h * w).filter(|s| s % line == 0).collect()
        } else {
            Vec::new()
        };
        let got = p.adjacency_violations();
        if got != expected {
            return Err(format!("{h}x{w} raster path {k}: violations {got:?}, expected {expected:?}"));
        }
    }
    Ok(())
}
