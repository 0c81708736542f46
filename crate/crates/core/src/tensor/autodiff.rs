//! Reverse-mode gradient tape.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and a single reverse sweep visits each node once.

use std::rc::Rc;

use super::kernels::{self, Activation};
use super::macs;
use super::NdArray;
use crate::error::{Error, Result};

type BackwardFn = Box<dyn Fn(&NdArray) -> Result<Vec<NdArray>>>;

struct Node {
    value: Rc<NdArray>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<NdArray>>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&NdArray> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &NdArray) -> NdArray {
        self.get(v).cloned().unwrap_or_else(|| NdArray::zeros(like.shape()))
    }

    /// Number of nodes whose backward rule ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &NdArray {
        &self.nodes[v.0].value
    }

    fn value_rc(&self, v: Var) -> Rc<NdArray> {
        Rc::clone(&self.nodes[v.0].value)
    }

    fn push(&mut self, value: NdArray, parents: Vec<usize>, backward: Option<BackwardFn>) -> Var {
        self.nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: NdArray) -> Var {
        self.push(value, Vec::new(), None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value_rc(a), self.value_rc(b));
        let out = kernels::matmul(&av, &bv)?;
        macs::record((av.shape()[0] * av.shape()[1] * bv.shape()[1]) as u64);
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g| {
                Ok(vec![kernels::matmul_nt(g, &bv)?, kernels::matmul_tn(&av, g)?])
            })),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        macs::record(out.len() as u64);
        Ok(self.push(out, vec![a.0, b.0], Some(Box::new(|g| Ok(vec![g.clone(), g.clone()])))))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        macs::record(out.len() as u64);
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|g| Ok(vec![g.clone(), g.scale(-1.0)]))),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value_rc(a), self.value_rc(b));
        let out = av.mul(&bv)?;
        macs::record(out.len() as u64);
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g| Ok(vec![g.mul(&bv)?, g.mul(&av)?]))),
        ))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        macs::record(out.len() as u64);
        self.push(out, vec![a.0], Some(Box::new(move |g| Ok(vec![g.scale(s)]))))
    }

    /// Adds a `[d]` vector to every row of a `[.., d]` array.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = kernels::add_bias(self.value(x), self.value(bias))?;
        macs::record(out.len() as u64);
        Ok(self.push(
            out,
            vec![x.0, bias.0],
            Some(Box::new(|g| Ok(vec![g.clone(), kernels::sum_rows(g)]))),
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let xv = self.value_rc(x);
        let out = kernels::activation(&xv, kind);
        macs::record(out.len() as u64);
        self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| {
                Ok(vec![g.zip_map(&xv, "activation", |gv, xv| gv * kind.derivative(xv))?])
            })),
        )
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        macs::record(out.len() as u64);
        let y = Rc::new(out.clone());
        self.push(out, vec![x.0], Some(Box::new(move |g| Ok(vec![g.mul(&y)?]))))
    }

    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value_rc(x), self.value_rc(gamma), self.value_rc(beta));
        let out = kernels::layernorm(&xv, &gv, &bv, eps)?;
        macs::record(LAYERNORM_MACS_PER_ELEMENT * out.len() as u64);
        Ok(self.push(
            out,
            vec![x.0, gamma.0, beta.0],
            Some(Box::new(move |g| {
                let (a, b, c) = kernels::layernorm_backward(&xv, &gv, &bv, eps, g)?;
                Ok(vec![a, b, c])
            })),
        ))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (xv, kv) = (self.value_rc(x), self.value_rc(kernel));
        let out = kernels::depthwise_conv2d(&xv, &kv)?;
        let k = kv.shape()[0];
        macs::record((out.len() * k * k) as u64);
        Ok(self.push(
            out,
            vec![x.0, kernel.0],
            Some(Box::new(move |g| {
                let (gx, gk) = kernels::depthwise_conv2d_backward(&xv, &kv, g)?;
                Ok(vec![gx, gk])
            })),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let orig = xv.shape().to_vec();
        let out = xv.reshape(shape)?;
        Ok(self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| Ok(vec![g.reshape(&orig)?]))),
        ))
    }

    /// Columns `start..start + len` of a 2D array.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 || start + len > xv.shape()[1] {
            return Err(Error::shape("slice_cols", xv.shape(), &[start, len]));
        }
        let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let out = NdArray::new(&[rows, len], out)?;
        Ok(self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| {
                let mut gx = NdArray::zeros(&[rows, cols]);
                for r in 0..rows {
                    gx.data_mut()[r * cols + start..r * cols + start + len]
                        .copy_from_slice(g.row(r));
                }
                Ok(vec![gx])
            })),
        ))
    }

    /// `out.flat[i] = x.flat[indices[i]]`; indices may repeat.
    pub fn gather(&mut self, x: Var, indices: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let n: usize = shape.iter().product();
        if n != indices.len() {
            return Err(Error::shape("gather", shape, &[indices.len()]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::shape("gather", xv.shape(), &[bad]));
        }
        let data = indices.iter().map(|&i| xv.data()[i]).collect();
        let out = NdArray::new(shape, data)?;
        let src_shape = xv.shape().to_vec();
        Ok(self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| {
                let mut gx = NdArray::zeros(&src_shape);
                for (o, &i) in indices.iter().enumerate() {
                    gx.data_mut()[i] += g.data()[o];
                }
                Ok(vec![gx])
            })),
        ))
    }

    /// Mean over rows of `[n, d]`, giving `[1, d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 || xv.shape()[0] == 0 {
            return Err(Error::shape("mean_rows", xv.shape(), &[]));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let sums = kernels::sum_rows(xv);
        macs::record(xv.len() as u64);
        let out = NdArray::new(&[1, d], sums.scale(1.0 / n as f64).into_data())?;
        Ok(self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| {
                let inv = 1.0 / n as f64;
                Ok(vec![NdArray::from_fn(&[n, d], |i| g.data()[i % d] * inv)])
            })),
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let out = NdArray::scalar(xv.sum());
        macs::record(xv.len() as u64);
        self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| Ok(vec![NdArray::full(&shape, g.data()[0])]))),
        )
    }

    /// Softmax cross-entropy of a single `[1, C]` logit row against `label`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits);
        let c = lv.len();
        if label >= c {
            return Err(Error::Config(format!("label {label} out of range for {c} classes")));
        }
        let max = lv.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = lv.data().iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let loss = z.ln() + max - lv.data()[label];
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let shape = lv.shape().to_vec();
        Ok(self.push(
            NdArray::scalar(loss),
            vec![logits.0],
            Some(Box::new(move |g| {
                let mut gl = NdArray::new(&shape, probs.clone())?;
                gl.data_mut()[label] -= 1.0;
                Ok(vec![gl.scale(g.data()[0])])
            })),
        ))
    }

    /// Records an operation whose forward value and backward rule the caller
    /// has already worked out. Used for fused kernels such as the 2D scan.
    pub fn custom(
        &mut self,
        parents: &[Var],
        value: NdArray,
        backward: impl Fn(&NdArray) -> Result<Vec<NdArray>> + 'static,
    ) -> Var {
        self.push(
            value,
            parents.iter().map(|v| v.0).collect(),
            Some(Box::new(backward)),
        )
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::shape("backward", out.shape(), &[]));
        }
        let mut grads: Vec<Option<NdArray>> = vec![None; output.0 + 1];
        grads[output.0] = Some(NdArray::full(out.shape(), 1.0));
        let mut visited = 0;
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            visited += 1;
            let parent_grads = backward(&g)?;
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if pg.shape() != self.nodes[p].value.shape() {
                    return Err(Error::shape("backward", pg.shape(), self.nodes[p].value.shape()));
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }
}

/// Forward cost convention for layer normalization: centre, square, scale, affine.
pub const LAYERNORM_MACS_PER_ELEMENT: u64 = 4;
