//! Central-difference gradient checking against the tape.

use super::autodiff::{Tape, Var};
use super::NdArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the maximum occurred.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Compares tape gradients of a scalar function with central differences.
///
/// Each coordinate is perturbed by `h · max(|x|, 1)`. The per-coordinate
/// error is `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, inputs: &[NdArray], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_sampled(f, inputs, h, usize::MAX)
}

/// As [`grad_check`], probing at most `per_input` evenly spaced coordinates
/// of each input.
pub fn grad_check_sampled<F>(f: F, inputs: &[NdArray], h: f64, per_input: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[NdArray]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::shape("grad_check", v.shape(), &[]));
        }
        Ok(v.data()[0])
    };

    for (k, input) in inputs.iter().enumerate() {
        if let Some(i) = input.first_non_finite() {
            return Err(Error::NonFinite {
                context: format!("grad_check input {k}"),
                index: i,
            });
        }
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut values = inputs.to_vec();
    for (k, &var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(var, &inputs[k]);
        let n = inputs[k].len();
        let stride = n.div_ceil(per_input.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let x0 = inputs[k].data()[i];
            let step = h * x0.abs().max(1.0);
            values[k].data_mut()[i] = x0 + step;
            let fp = eval(&values)?;
            values[k].data_mut()[i] = x0 - step;
            let fm = eval(&values)?;
            values[k].data_mut()[i] = x0;

            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.data()[i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("grad_check input {k}"),
                    index: i,
                });
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (k, i);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = NdArray::new(&[4], vec![0.3, -1.2, 2.0, 5.5]).unwrap();
        let r = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.coordinates, 4);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = NdArray::new(&[2], vec![1.0, 2.0]).unwrap();
        let r = grad_check(
            |t, v| {
                let xv = t.value(v[0]).clone();
                let y = xv.map(|a| a * a * a);
                // deliberately report d/dx = 1
                let out = t.custom(&[v[0]], y, |g| Ok(vec![g.clone()]));
                Ok(t.sum(out))
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.5);
    }

    #[test]
    fn sampling_limits_coordinates() {
        let x = NdArray::from_fn(&[10], |i| i as f64 * 0.1);
        let r = grad_check_sampled(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &[x],
            1e-5,
            3,
        )
        .unwrap();
        assert_eq!(r.coordinates, 3);
    }

    #[test]
    fn non_finite_is_reported_with_coordinate() {
        let x = NdArray::new(&[2], vec![1.0, f64::INFINITY]).unwrap();
        let err = grad_check(|t, v| Ok(t.sum(v[0])), &[x], 1e-5).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }), "{err}");
    }
}
