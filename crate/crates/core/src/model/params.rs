use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::selective_scan::SsmCore;
use crate::tensor::NdArray;

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Weights {
    names: Vec<String>,
    tensors: Vec<NdArray>,
    index: HashMap<String, usize>,
}

impl Weights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: NdArray) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = tensor,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(tensor);
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&NdArray> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::Manifest(format!("missing tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NdArray> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NdArray)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut NdArray)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn total_params(&self) -> usize {
        self.tensors.iter().map(NdArray::len).sum()
    }

    /// Checks names and shapes against `config`; the error lists every
    /// difference, starting with the first offending tensor.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let spec = param_spec(config);
        let mut diff = Vec::new();
        for (name, shape) in &spec {
            match self.index.get(name) {
                None => diff.push(format!("- {name} {shape:?} (missing)")),
                Some(&i) if self.tensors[i].shape() != shape.as_slice() => diff.push(format!(
                    "~ {name} expected {shape:?}, found {:?}",
                    self.tensors[i].shape()
                )),
                Some(_) => {}
            }
        }
        let expected: HashMap<&str, ()> = spec.iter().map(|(n, _)| (n.as_str(), ())).collect();
        for (name, t) in self.iter() {
            if !expected.contains_key(name) {
                diff.push(format!("+ {name} {:?} (unexpected)", t.shape()));
            }
        }
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest(diff.join("\n")))
        }
    }
}

pub fn block_prefix(i: usize) -> String {
    format!("blocks.{i}")
}

/// Every learnable tensor of the model, in canonical order.
///
/// Linear weights are stored `[in, out]`.
pub fn param_spec(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, di, m, r, k, p) = (
        config.d_model,
        config.d_inner(),
        config.state_size,
        config.dt_rank,
        config.conv_k,
        config.patch,
    );
    let g = config.train_grid();
    let mut spec = vec![
        ("patch_embed.weight".to_string(), vec![3 * p * p, d]),
        ("patch_embed.bias".to_string(), vec![d]),
        ("pos_embed".to_string(), vec![g * g, d]),
    ];
    for i in 0..config.depth {
        let b = block_prefix(i);
        spec.extend([
            (format!("{b}.norm.weight"), vec![d]),
            (format!("{b}.norm.bias"), vec![d]),
            (format!("{b}.in_proj.weight"), vec![d, 2 * di]),
            (format!("{b}.conv.weight"), vec![k, k, di]),
            (format!("{b}.conv.bias"), vec![di]),
            (format!("{b}.x_proj.weight"), vec![di, r + 2 * m]),
            (format!("{b}.dt_proj.weight"), vec![r, di]),
            (format!("{b}.dt_proj.bias"), vec![di]),
            (format!("{b}.A_log"), vec![di, m]),
            (format!("{b}.D"), vec![di]),
            (format!("{b}.theta"), vec![5, m]),
            (format!("{b}.out_proj.weight"), vec![di, d]),
        ]);
    }
    spec.extend([
        ("norm.weight".to_string(), vec![d]),
        ("norm.bias".to_string(), vec![d]),
        ("head.weight".to_string(), vec![d, config.num_classes]),
        ("head.bias".to_string(), vec![config.num_classes]),
    ]);
    spec
}

pub const INIT_STD: f64 = 0.02;
pub const DT_MIN: f64 = 1e-3;
pub const DT_MAX: f64 = 1e-1;

fn trunc_normal(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> NdArray {
    let normal = Normal::new(0.0, std).expect("finite std");
    NdArray::from_fn(shape, |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            break v;
        }
    })
}

/// Inverse of softplus: `x + log(−expm1(−x))`.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Deterministic initialization from `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Weights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Weights::new();
    for (name, shape) in param_spec(config) {
        let leaf = name.rsplit('.').next().unwrap_or(&name);
        let t = match leaf {
            "weight" if name.ends_with("norm.weight") => NdArray::full(&shape, 1.0),
            "weight" | "pos_embed" => trunc_normal(&shape, INIT_STD, &mut rng),
            "bias" if name.ends_with("dt_proj.bias") => NdArray::from_fn(&shape, |_| {
                inverse_softplus(rng.random_range(DT_MIN..DT_MAX))
            }),
            "bias" | "theta" => NdArray::zeros(&shape),
            "A_log" => {
                let m = shape[1];
                NdArray::from_fn(&shape, |i| ((i % m) as f64 + 1.0).ln())
            }
            "D" => NdArray::full(&shape, 1.0),
            other => unreachable!("no initializer for {other}"),
        };
        w.insert(name, t);
    }
    Ok(w)
}

/// One block's parameters as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub norm_gamma: NdArray,
    pub norm_beta: NdArray,
    pub in_proj: NdArray,
    pub dw_kernel: NdArray,
    pub dw_bias: NdArray,
    pub x_proj: NdArray,
    pub dt_proj: NdArray,
    pub dt_bias: NdArray,
    pub core: SsmCore,
    pub out_proj: NdArray,
}

impl BlockParams {
    pub fn from_weights(w: &Weights, block: usize) -> Result<Self> {
        let b = block_prefix(block);
        let get = |s: &str| w.get(&format!("{b}.{s}")).cloned();
        let a = get("A_log")?.map(|v| -v.exp());
        Ok(Self {
            norm_gamma: get("norm.weight")?,
            norm_beta: get("norm.bias")?,
            in_proj: get("in_proj.weight")?,
            dw_kernel: get("conv.weight")?,
            dw_bias: get("conv.bias")?,
            x_proj: get("x_proj.weight")?,
            dt_proj: get("dt_proj.weight")?,
            dt_bias: get("dt_proj.bias")?,
            core: SsmCore::new(a, get("D")?, get("theta")?)?,
            out_proj: get("out_proj.weight")?,
        })
    }

    pub fn d_inner(&self) -> usize {
        self.core.d_inner()
    }

    pub fn state_size(&self) -> usize {
        self.core.state_size()
    }

    pub fn dt_rank(&self) -> usize {
        self.dt_proj.shape()[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Preset;

    #[test]
    fn init_is_deterministic() {
        let c = Preset::Toy.config();
        assert_eq!(init_params(&c, 7).unwrap(), init_params(&c, 7).unwrap());
        assert_ne!(init_params(&c, 7).unwrap(), init_params(&c, 8).unwrap());
    }

    #[test]
    fn init_rules() {
        let c = Preset::Toy.config();
        let w = init_params(&c, 1).unwrap();
        w.check_against(&c).unwrap();
        assert!(w.get("blocks.0.theta").unwrap().data().iter().all(|&v| v == 0.0));
        let p = BlockParams::from_weights(&w, 1).unwrap();
        assert_eq!(p.core.a().get(&[3, 0]), -1.0);
        assert!((p.core.a().get(&[3, 2]) + 3.0).abs() < 1e-12);
        for &b in p.dt_bias.data() {
            let dt = crate::tensor::kernels::softplus(b);
            assert!((DT_MIN..=DT_MAX).contains(&dt), "{dt}");
        }
        let q = w.get("blocks.1.in_proj.weight").unwrap();
        assert!(q.data().iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        assert!(w.get("norm.weight").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn manifest_diff_lists_problems() {
        let c = Preset::Toy.config();
        let mut w = init_params(&c, 1).unwrap();
        w.insert("blocks.0.D", NdArray::zeros(&[3]));
        w.insert("extra", NdArray::zeros(&[1]));
        let msg = w.check_against(&c).unwrap_err().to_string();
        assert!(msg.contains("blocks.0.D expected [64]"), "{msg}");
        assert!(msg.contains("+ extra"), "{msg}");
    }
}
