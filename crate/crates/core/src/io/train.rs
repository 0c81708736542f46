use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::SyntheticDataset;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::forward::{forward_on_tape, model_forward, BoundWeights};
use crate::model::params::{init_params, Weights};
use crate::tensor::autodiff::Tape;

pub const MAX_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.05,
            batch: MAX_BATCH,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: Weights,
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
    pub accuracy: f64,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

pub fn predict(weights: &Weights, config: &ModelConfig, image: &crate::tensor::NdArray) -> Result<usize> {
    let logits = model_forward(image, weights, config)?;
    let best = logits
        .data()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(best)
}

pub fn accuracy(weights: &Weights, config: &ModelConfig, data: &SyntheticDataset) -> Result<f64> {
    let mut correct = 0;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        correct += usize::from(predict(weights, config, img)? == label);
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// Plain SGD on mean cross-entropy. Initialization and batch order derive
/// from `options.seed`; the run is deterministic.
pub fn toy_train(config: &ModelConfig, data: &SyntheticDataset, options: &TrainOptions) -> Result<TrainOutcome> {
    if options.batch == 0 || options.batch > MAX_BATCH {
        return Err(Error::Config(format!("batch must be in 1..={MAX_BATCH}, got {}", options.batch)));
    }
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    if !(options.lr > 0.0 && options.lr.is_finite()) {
        return Err(Error::Config(format!("lr must be positive, got {}", options.lr)));
    }
    let mut weights = init_params(config, options.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x5eed_0bad_cafe);
    let mut order: Vec<usize> = Vec::new();
    let mut losses = Vec::with_capacity(options.steps);

    for step in 0..options.steps {
        let mut batch = Vec::with_capacity(options.batch);
        while batch.len() < options.batch.min(data.len()) {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(order.pop().expect("refilled above"));
        }

        let diverged = |detail: String| Error::Diverged { step, detail };
        let numerical = |e: Error| if e.exit_code() == 3 { diverged(e.to_string()) } else { e };

        let mut tape = Tape::new();
        let bound = BoundWeights::bind(&mut tape, &weights);
        let mut total = None;
        for &i in &batch {
            let logits = forward_on_tape(&mut tape, &bound, config, &data.images[i]).map_err(numerical)?;
            let l = tape.cross_entropy(logits, data.labels[i])?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let loss = tape.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64);
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(diverged(format!("loss {value}")));
        }
        losses.push(value);

        let grads = tape.backward(loss).map_err(numerical)?;
        for (name, var) in bound.iter() {
            let Some(g) = grads.get(var) else { continue };
            if g.first_non_finite().is_some() {
                return Err(diverged(format!("non-finite gradient for {name}")));
            }
            let w = weights.get_mut(name).expect("bound from these weights");
            for (p, gv) in w.data_mut().iter_mut().zip(g.data()) {
                *p -= options.lr * gv;
            }
        }
    }
    let accuracy = accuracy(&weights, config, data)?;
    Ok(TrainOutcome {
        weights,
        losses,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Preset;

    #[test]
    fn zero_steps_is_chance() {
        let data = SyntheticDataset::generate(64, 0);
        let opts = TrainOptions {
            steps: 0,
            ..TrainOptions::default()
        };
        let out = toy_train(&Preset::Toy.config(), &data, &opts).unwrap();
        assert!(out.losses.is_empty());
        assert!((0.35..=0.65).contains(&out.accuracy), "{}", out.accuracy);
    }

    #[test]
    fn huge_lr_diverges_with_step() {
        let data = SyntheticDataset::generate(8, 0);
        let opts = TrainOptions {
            steps: 50,
            lr: 1e12,
            batch: 4,
            seed: 0,
        };
        let err = toy_train(&Preset::Toy.config(), &data, &opts).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn batch_limit() {
        let data = SyntheticDataset::generate(8, 0);
        let opts = TrainOptions {
            batch: 17,
            ..TrainOptions::default()
        };
        assert!(matches!(toy_train(&Preset::Toy.config(), &data, &opts), Err(Error::Config(_))));
    }
}
