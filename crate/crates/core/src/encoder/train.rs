//! Deterministic training loop for the subsequence-contrastive objective:
//! seeded batching, gradient accumulation in client-id order, and momentum
//! SGD with global gradient-norm clipping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::math::mix_seed;

use super::{backward, coles_loss, coles_sample, forward_cached, EncoderConfig, EncoderParams, GradTape};

/// Momentum SGD over a flat parameter vector, with global-norm clipping.
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    pub clip: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(n_params: usize, lr: f64, momentum: f64, clip: f64) -> Self {
        SgdMomentum {
            lr,
            momentum,
            clip,
            velocity: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.velocity.len());
        let norm = crate::math::l2_norm(grads);
        let scale = if self.clip > 0.0 && norm > self.clip {
            self.clip / norm
        } else {
            1.0
        };
        for ((p, v), &g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = self.momentum * *v + scale * g;
            *p -= self.lr * *v;
        }
    }
}

/// Adam over a flat parameter vector, with the same global-norm clipping.
/// Used by the alignment stage, where the scalar temperature/bias and the
/// weight matrices need per-parameter step scaling to train together.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, clip: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let norm = crate::math::l2_norm(grads);
        let scale = if self.clip > 0.0 && norm > self.clip {
            self.clip / norm
        } else {
            1.0
        };
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, m), v), &g) in params
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(grads)
        {
            let g = scale * g;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Momentum,
    Adam,
}

pub enum Optimizer {
    Sgd(SgdMomentum),
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize, lr: f64, momentum: f64, clip: f64) -> Self {
        match kind {
            OptimizerKind::Momentum => Optimizer::Sgd(SgdMomentum::new(n_params, lr, momentum, clip)),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(n_params, lr, clip)),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            Optimizer::Sgd(o) => o.step(params, grads),
            Optimizer::Adam(o) => o.step(params, grads),
        }
    }
}

/// Hyperparameters of the subsequence-contrastive pretraining stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColesConfig {
    pub n_slices: usize,
    pub len_min: usize,
    pub len_max: usize,
    /// Contrastive temperature (fixed, not learned).
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip: f64,
}

impl Default for ColesConfig {
    fn default() -> Self {
        ColesConfig {
            n_slices: 5,
            len_min: 15,
            len_max: 150,
            tau: 0.1,
            epochs: 3,
            batch_size: 64,
            lr: 1e-3,
            momentum: 0.9,
            clip: 5.0,
        }
    }
}

/// Pretrains the encoder on every non-holdout client (labeled and unlabeled
/// alike). Returns the trained parameters and the per-step loss curve.
/// Bitwise deterministic for a fixed (dataset, configs, seed).
pub fn pretrain_coles(
    dataset: &Dataset,
    encoder_config: EncoderConfig,
    config: &ColesConfig,
    seed: u64,
) -> Result<(EncoderParams, Vec<(usize, f64)>)> {
    if config.len_min < 1 || config.len_min > config.len_max {
        return Err(Error::config("coles.len_min", "need 1 <= len_min <= len_max"));
    }
    if config.n_slices < 2 {
        return Err(Error::config("coles.n_slices", "need at least 2 slices per client"));
    }
    // train pool: everything except the holdout, long enough to slice
    let pool: Vec<usize> = (0..dataset.sequences.len())
        .filter(|&i| dataset.splits[i] != SplitTag::Holdout)
        .filter(|&i| dataset.sequences[i].len() >= config.len_min)
        .collect();
    if pool.len() < config.batch_size.min(2).max(2) {
        return Err(Error::Invalid(format!(
            "only {} clients are long enough for slice length {}",
            pool.len(),
            config.len_min
        )));
    }

    let mut params = EncoderParams::init(encoder_config, mix_seed(seed, 0x1217));
    let mut optimizer = SgdMomentum::new(params.param_count(), config.lr, config.momentum, config.clip);
    let mut tape = GradTape::new(&params);
    let mut curve = Vec::new();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut order = pool.clone();
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0xe90c_0000 + epoch as u64));
        order.shuffle(&mut rng);

        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            // keep accumulation order independent of the shuffle
            let mut batch: Vec<usize> = batch.to_vec();
            batch.sort_unstable();

            let mut slice_items = Vec::new();
            let mut caches = Vec::new();
            for &ci in &batch {
                let seq = &dataset.sequences[ci];
                let slice_seed = mix_seed(seed, 0x51ce_0000 + (epoch as u64) << 20 | ci as u64);
                let Some(slices) = coles_sample(seq, config.n_slices, (config.len_min, config.len_max), slice_seed) else {
                    continue;
                };
                for slice in slices {
                    let (embedding, cache) = forward_cached(&slice, &params)?;
                    slice_items.push((seq.client_id.clone(), embedding));
                    caches.push(cache);
                }
            }
            let distinct = {
                let mut ids: Vec<&str> = slice_items.iter().map(|(c, _)| c.as_str()).collect();
                ids.dedup();
                ids.len()
            };
            if distinct < 2 {
                continue;
            }

            let (loss, d_embeddings) = coles_loss(&slice_items, config.tau)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    message: "contrastive loss became non-finite".into(),
                });
            }
            tape.zero();
            for (cache, d_embedding) in caches.iter().zip(&d_embeddings) {
                backward(&params, cache, d_embedding, &mut tape);
            }
            let grads = tape.grads.flatten();
            let mut flat = params.flatten();
            optimizer.step(&mut flat, &grads);
            params.assign_flat(&flat);
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    step,
                    message: "parameters became non-finite".into(),
                });
            }
            curve.push((step, loss));
            step += 1;
        }
    }
    Ok((params, curve))
}

/// Trailing moving average with the given window.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    values
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let start = i.saturating_sub(window - 1);
            let slice = &values[start..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{generate_synthetic, SyntheticConfig};

    fn small_setup() -> (Dataset, EncoderConfig, ColesConfig) {
        let config = SyntheticConfig {
            min_events: 12,
            max_events: 30,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(24, 5, &config).unwrap();
        let enc = EncoderConfig::with_dims(&ds, 3, 6, 5);
        let coles = ColesConfig {
            n_slices: 2,
            len_min: 4,
            len_max: 10,
            epochs: 2,
            batch_size: 8,
            lr: 1e-2,
            ..ColesConfig::default()
        };
        (ds, enc, coles)
    }

    #[test]
    fn zero_learning_rate_leaves_params_at_init() {
        let (ds, enc, mut coles) = small_setup();
        coles.lr = 0.0;
        let (params, curve) = pretrain_coles(&ds, enc.clone(), &coles, 3).unwrap();
        let init = EncoderParams::init(enc, mix_seed(3, 0x1217));
        assert_eq!(params, init);
        assert!(!curve.is_empty());
    }

    #[test]
    fn same_seed_reproduces_parameters_bitwise() {
        let (ds, enc, coles) = small_setup();
        let (a, curve_a) = pretrain_coles(&ds, enc.clone(), &coles, 11).unwrap();
        let (b, curve_b) = pretrain_coles(&ds, enc, &coles, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(curve_a, curve_b);
    }

    #[test]
    fn smoothed_loss_decreases_on_synthetic_data() {
        let config = SyntheticConfig {
            min_events: 15,
            max_events: 40,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(120, 9, &config).unwrap();
        let enc = EncoderConfig::with_dims(&ds, 4, 16, 8);
        let coles = ColesConfig {
            n_slices: 3,
            len_min: 5,
            len_max: 15,
            epochs: 5,
            batch_size: 24,
            lr: 5e-3,
            ..ColesConfig::default()
        };
        let (_, curve) = pretrain_coles(&ds, enc, &coles, 1).unwrap();
        let losses: Vec<f64> = curve.iter().map(|&(_, l)| l).collect();
        let smooth = moving_average(&losses, 10);
        assert!(
            smooth.last().unwrap() <= smooth.first().unwrap(),
            "smoothed loss rose: start {} end {}",
            smooth.first().unwrap(),
            smooth.last().unwrap()
        );
    }

    #[test]
    fn optimizer_clips_gradient_norm() {
        let mut opt = SgdMomentum::new(2, 1.0, 0.0, 1.0);
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[3.0, 4.0]); // norm 5 -> scaled to 1
        assert!((p[0] + 3.0 / 5.0).abs() < 1e-12);
        assert!((p[1] + 4.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn moving_average_window() {
        let v = vec![4.0, 2.0, 6.0, 0.0];
        let avg = moving_average(&v, 2);
        assert_eq!(avg, vec![4.0, 3.0, 4.0, 3.0]);
    }
}
