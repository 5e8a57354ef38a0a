//! Fully-connected networks with hand-rolled forward/backward passes.
//!
//! Input is a 2-vector (normalized query corner), output a single normalized
//! count. Hidden layers use the rectifier, the output layer is linear so
//! predictions are unbounded before the final clamp. The training loss is the
//! workload-weighted relative squared error
//! `sum w / max(y, psi) * (pred - y)^2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("psi must be positive, got {0}")]
    BadPsi(f64),
    #[error("non-finite loss {loss} at epoch {epoch}; config: {config}")]
    Diverged {
        epoch: usize,
        loss: f64,
        config: String,
    },
}

/// One training sample: normalized corner, normalized noisy label, workload weight.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample {
    pub x: [f64; 2],
    pub label: f64,
    pub weight: f64,
}

/// A fully-connected network: 2 inputs, `depth` hidden layers of `width`
/// units, 1 linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    /// Row-major `out x in` matrices, one per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(depth: usize, width: usize, seed: u64) -> Self {
        assert!(depth >= 1 && width >= 1);
        let mut layer_sizes = vec![2];
        layer_sizes.extend(std::iter::repeat(width).take(depth));
        layer_sizes.push(1);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let fan_in = layer_sizes[l];
            let fan_out = layer_sizes[l + 1];
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            );
            biases.push((0..fan_out).map(|_| rng.random_range(-bound..bound)).collect());
        }
        Self {
            layer_sizes,
            weights,
            biases,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Deterministic forward pass on a normalized 2-vector.
    pub fn forward(&self, x: [f64; 2]) -> f64 {
        let mut act = vec![x[0], x[1]];
        let last = self.num_layers() - 1;
        for l in 0..=last {
            let fan_in = self.layer_sizes[l];
            let fan_out = self.layer_sizes[l + 1];
            let mut next = vec![0.0; fan_out];
            let w = &self.weights[l];
            for o in 0..fan_out {
                let mut sum = self.biases[l][o];
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (wi, ai) in row.iter().zip(&act) {
                    sum += wi * ai;
                }
                next[o] = if l < last { sum.max(0.0) } else { sum };
            }
            act = next;
        }
        act[0]
    }

    fn zeros_like(&self) -> MlpGrad {
        MlpGrad {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Gradient of the loss with respect to every parameter, shaped like [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrad {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Loss and exact analytic gradient of the weighted squared error over a batch.
pub fn loss_and_grad(m: &Mlp, batch: &[TrainSample], psi: f64) -> Result<(f64, MlpGrad), TrainError> {
    if psi <= 0.0 {
        return Err(TrainError::BadPsi(psi));
    }
    let mut grad = m.zeros_like();
    let mut loss = 0.0;
    let last = m.num_layers() - 1;

    // activations per layer, reused across samples
    let mut acts: Vec<Vec<f64>> = m.layer_sizes.iter().map(|&s| vec![0.0; s]).collect();
    let mut deltas: Vec<Vec<f64>> = m.layer_sizes[1..].iter().map(|&s| vec![0.0; s]).collect();

    for sample in batch {
        if sample.weight == 0.0 {
            continue;
        }
        acts[0][0] = sample.x[0];
        acts[0][1] = sample.x[1];
        for l in 0..=last {
            let fan_in = m.layer_sizes[l];
            let fan_out = m.layer_sizes[l + 1];
            let w = &m.weights[l];
            let (before, after) = acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            for o in 0..fan_out {
                let mut sum = m.biases[l][o];
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (wi, ai) in row.iter().zip(input.iter()) {
                    sum += wi * ai;
                }
                out[o] = if l < last { sum.max(0.0) } else { sum };
            }
        }
        let pred = acts[last + 1][0];
        let scale = sample.weight / sample.label.max(psi);
        let diff = pred - sample.label;
        loss += scale * diff * diff;

        // output delta, then backpropagate through the rectifier mask
        deltas[last][0] = 2.0 * scale * diff;
        for l in (0..last).rev() {
            let fan_out_next = m.layer_sizes[l + 2];
            let fan_out = m.layer_sizes[l + 1];
            let w_next = &m.weights[l + 1];
            let (lower, upper) = deltas.split_at_mut(l + 1);
            let delta_next = &upper[0];
            let delta = &mut lower[l];
            for o in 0..fan_out {
                if acts[l + 1][o] <= 0.0 {
                    delta[o] = 0.0;
                    continue;
                }
                let mut sum = 0.0;
                for (on, dn) in delta_next.iter().enumerate().take(fan_out_next) {
                    sum += w_next[on * fan_out + o] * dn;
                }
                delta[o] = sum;
            }
        }
        for l in 0..=last {
            let fan_in = m.layer_sizes[l];
            let fan_out = m.layer_sizes[l + 1];
            let input = &acts[l];
            let delta = &deltas[l];
            let gw = &mut grad.weights[l];
            let gb = &mut grad.biases[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                for (gi, ai) in row.iter_mut().zip(input.iter()) {
                    *gi += d * ai;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Adam optimizer state: first/second moment accumulators plus step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m_w: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_w: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_b: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_b: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Standard bias-corrected Adam update applied in place.
    pub fn step(&mut self, model: &mut Mlp, grad: &MlpGrad) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let update = |params: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..params.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        };
        for l in 0..model.weights.len() {
            update(
                &mut model.weights[l],
                &grad.weights[l],
                &mut self.m_w[l],
                &mut self.v_w[l],
            );
            update(
                &mut model.biases[l],
                &grad.biases[l],
                &mut self.m_b[l],
                &mut self.v_b[l],
            );
        }
    }
}

/// Training knobs for one neural histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub depth: usize,
    pub width: usize,
    pub epochs: usize,
    /// Minibatch size once the sample count exceeds `full_batch_limit`.
    pub batch_size: usize,
    pub full_batch_limit: usize,
    pub lr: f64,
    pub seed: u64,
    /// Smoothing floor applied to normalized labels in the loss denominator.
    pub psi: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            depth: 20,
            width: 80,
            epochs: 2000,
            batch_size: 1024,
            full_batch_limit: 16_384,
            lr: 0.001,
            seed: 0,
            psi: 0.001,
        }
    }
}

/// Trains one network on the (already normalized) samples for a single size.
///
/// Labels are fixed noisy values computed before training, so no epoch ever
/// touches the underlying dataset.
pub fn train(samples: &[TrainSample], cfg: &TrainConfig) -> Result<Mlp, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if cfg.psi <= 0.0 {
        return Err(TrainError::BadPsi(cfg.psi));
    }
    let mut model = Mlp::new(cfg.depth, cfg.width, cfg.seed);
    let mut adam = AdamState::new(&model, cfg.lr);
    let full_batch = samples.len() <= cfg.full_batch_limit;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut scratch: Vec<TrainSample> = Vec::new();

    for epoch in 0..cfg.epochs {
        if full_batch {
            let (loss, grad) = loss_and_grad(&model, samples, cfg.psi)?;
            check_finite(loss, epoch, cfg)?;
            adam.step(&mut model, &grad);
        } else {
            // Fisher-Yates reshuffle each epoch
            for i in (1..order.len()).rev() {
                let j = shuffle_rng.random_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(cfg.batch_size) {
                scratch.clear();
                scratch.extend(chunk.iter().map(|&i| samples[i]));
                let (loss, grad) = loss_and_grad(&model, &scratch, cfg.psi)?;
                check_finite(loss, epoch, cfg)?;
                adam.step(&mut model, &grad);
            }
        }
    }
    Ok(model)
}

fn check_finite(loss: f64, epoch: usize, cfg: &TrainConfig) -> Result<(), TrainError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(TrainError::Diverged {
            epoch,
            loss,
            config: format!("{cfg:?}"),
        })
    }
}
