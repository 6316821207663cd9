//! GRU sequence encoder with categorical embeddings and numeric feature
//! transforms. Forward evaluation and exact backpropagation are implemented
//! by hand in f64 so every gradient can be checked against central finite
//! differences.

mod checkpoint;
mod coles;
mod train;

pub use checkpoint::{
    fill_groups as checkpoint_fill, read_checkpoint, write_checkpoint, write_loss_curve,
    CheckpointHeader, GroupMeta,
};
pub use coles::{coles_loss, coles_sample};
pub use train::{moving_average, pretrain_coles, Adam, ColesConfig, Optimizer, OptimizerKind, SgdMomentum};

use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, EventRecord, EventSequence, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::math::{axpy, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Use the final hidden state (default).
    Final,
    /// Mean over all hidden states; kept for ablation.
    Mean,
}

/// Architecture and featurization constants. `amount_log_std` is a
/// dataset-level statistic fixed at initialization so that encoding a
/// sequence never depends on which batch it sits in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub mcc_vocab: usize,
    pub tx_vocab: usize,
    pub d_emb: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub pooling: Pooling,
    pub amount_log_std: f64,
}

pub const NUM_FEATURES: usize = 3;

impl EncoderConfig {
    /// Default size: lands at ~4.4 M parameters with the default synthetic
    /// vocabularies, matching the target model budget.
    pub fn for_dataset(dataset: &Dataset) -> Self {
        Self::with_dims(dataset, 16, 1152, 256)
    }

    pub fn with_dims(dataset: &Dataset, d_emb: usize, d_hidden: usize, d_out: usize) -> Self {
        EncoderConfig {
            mcc_vocab: dataset.mcc_vocab(),
            tx_vocab: dataset.tx_vocab(),
            d_emb,
            d_hidden,
            d_out,
            pooling: Pooling::Final,
            amount_log_std: amount_log_std(dataset),
        }
    }

    pub fn d_in(&self) -> usize {
        2 * self.d_emb + NUM_FEATURES
    }

    /// Closed-form parameter count; checked against the shape table in tests.
    pub fn param_count_formula(&self) -> usize {
        let d_in = self.d_in();
        (self.mcc_vocab + self.tx_vocab) * self.d_emb
            + NUM_FEATURES * NUM_FEATURES
            + NUM_FEATURES
            + 3 * (self.d_hidden * d_in)
            + 3 * (self.d_hidden * self.d_hidden)
            + 3 * self.d_hidden
            + self.d_out * self.d_hidden
            + self.d_out
    }
}

/// Standard deviation of log1p(|amount|) over every event in the dataset;
/// used to scale the magnitude feature.
pub fn amount_log_std(dataset: &Dataset) -> f64 {
    let mut values = Vec::new();
    for seq in &dataset.sequences {
        for ev in &seq.events {
            values.push(ev.amount_major().abs().ln_1p());
        }
    }
    if values.is_empty() {
        return 1.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 1e-9 {
        std
    } else {
        1.0
    }
}

/// All trainable encoder state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub emb_mcc: Mat,
    pub emb_tx: Mat,
    pub num_w: Mat,
    pub num_b: Vec<f64>,
    pub w_z: Mat,
    pub w_r: Mat,
    pub w_h: Mat,
    pub u_z: Mat,
    pub u_r: Mat,
    pub u_h: Mat,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
    pub out_w: Mat,
    pub out_b: Vec<f64>,
}

impl EncoderParams {
    /// Uniform ±1/√fan_in for matrices, zeros for biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(crate::math::mix_seed(seed, 0xe9c0));
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
        };
        let d_in = config.d_in();
        let d_h = config.d_hidden;
        EncoderParams {
            emb_mcc: uniform(config.mcc_vocab, config.d_emb, config.d_emb),
            emb_tx: uniform(config.tx_vocab, config.d_emb, config.d_emb),
            num_w: uniform(NUM_FEATURES, NUM_FEATURES, NUM_FEATURES),
            num_b: vec![0.0; NUM_FEATURES],
            w_z: uniform(d_h, d_in, d_in),
            w_r: uniform(d_h, d_in, d_in),
            w_h: uniform(d_h, d_in, d_in),
            u_z: uniform(d_h, d_h, d_h),
            u_r: uniform(d_h, d_h, d_h),
            u_h: uniform(d_h, d_h, d_h),
            b_z: vec![0.0; d_h],
            b_r: vec![0.0; d_h],
            b_h: vec![0.0; d_h],
            out_w: uniform(config.d_out, d_h, d_h),
            out_b: vec![0.0; config.d_out],
            config,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut other = self.clone();
        for (_, _, data) in other.groups_mut() {
            data.iter_mut().for_each(|v| *v = 0.0);
        }
        other
    }

    /// Named parameter groups in canonical order; this order defines the
    /// checkpoint payload layout and the flattened optimizer view.
    pub fn groups(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        vec![
            ("emb_mcc", vec![self.emb_mcc.rows, self.emb_mcc.cols], &self.emb_mcc.data),
            ("emb_tx", vec![self.emb_tx.rows, self.emb_tx.cols], &self.emb_tx.data),
            ("num_w", vec![NUM_FEATURES, NUM_FEATURES], &self.num_w.data),
            ("num_b", vec![NUM_FEATURES], &self.num_b),
            ("w_z", vec![self.w_z.rows, self.w_z.cols], &self.w_z.data),
            ("w_r", vec![self.w_r.rows, self.w_r.cols], &self.w_r.data),
            ("w_h", vec![self.w_h.rows, self.w_h.cols], &self.w_h.data),
            ("u_z", vec![self.u_z.rows, self.u_z.cols], &self.u_z.data),
            ("u_r", vec![self.u_r.rows, self.u_r.cols], &self.u_r.data),
            ("u_h", vec![self.u_h.rows, self.u_h.cols], &self.u_h.data),
            ("b_z", vec![self.b_z.len()], &self.b_z),
            ("b_r", vec![self.b_r.len()], &self.b_r),
            ("b_h", vec![self.b_h.len()], &self.b_h),
            ("out_w", vec![self.out_w.rows, self.out_w.cols], &self.out_w.data),
            ("out_b", vec![self.out_b.len()], &self.out_b),
        ]
    }

    pub fn groups_mut(&mut self) -> Vec<(&'static str, Vec<usize>, &mut [f64])> {
        vec![
            ("emb_mcc", vec![self.emb_mcc.rows, self.emb_mcc.cols], &mut self.emb_mcc.data),
            ("emb_tx", vec![self.emb_tx.rows, self.emb_tx.cols], &mut self.emb_tx.data),
            ("num_w", vec![NUM_FEATURES, NUM_FEATURES], &mut self.num_w.data),
            ("num_b", vec![NUM_FEATURES], &mut self.num_b),
            ("w_z", vec![self.w_z.rows, self.w_z.cols], &mut self.w_z.data),
            ("w_r", vec![self.w_r.rows, self.w_r.cols], &mut self.w_r.data),
            ("w_h", vec![self.w_h.rows, self.w_h.cols], &mut self.w_h.data),
            ("u_z", vec![self.u_z.rows, self.u_z.cols], &mut self.u_z.data),
            ("u_r", vec![self.u_r.rows, self.u_r.cols], &mut self.u_r.data),
            ("u_h", vec![self.u_h.rows, self.u_h.cols], &mut self.u_h.data),
            ("b_z", vec![self.b_z.len()], &mut self.b_z),
            ("b_r", vec![self.b_r.len()], &mut self.b_r),
            ("b_h", vec![self.b_h.len()], &mut self.b_h),
            ("out_w", vec![self.out_w.rows, self.out_w.cols], &mut self.out_w.data),
            ("out_b", vec![self.out_b.len()], &mut self.out_b),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.groups().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (_, _, data) in self.groups() {
            flat.extend_from_slice(data);
        }
        flat
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for (_, _, data) in self.groups_mut() {
            data.copy_from_slice(&flat[offset..offset + data.len()]);
            offset += data.len();
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        let config = serde_json::to_value(&self.config).expect("config serializes");
        write_checkpoint(path, "encoder", config, &self.groups())
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<Self> {
        let (header, payload) = read_checkpoint(path)?;
        if header.kind != "encoder" {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("expected an encoder checkpoint, found kind `{}`", header.kind),
            });
        }
        let config: EncoderConfig =
            serde_json::from_value(header.config.clone()).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let mut params = EncoderParams::init(config, 0);
        checkpoint::fill_groups(path, &header, &payload, &mut params.groups_mut())?;
        Ok(params)
    }
}

/// Per-parameter gradient accumulators, shaped exactly like `EncoderParams`.
#[derive(Debug, Clone)]
pub struct GradTape {
    pub grads: EncoderParams,
}

impl GradTape {
    pub fn new(params: &EncoderParams) -> Self {
        GradTape {
            grads: params.zeros_like(),
        }
    }

    pub fn zero(&mut self) {
        for (_, _, data) in self.grads.groups_mut() {
            data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Encoder output for one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqEmbedding {
    pub client_id: String,
    pub vector: Vec<f64>,
}

/// Raw numeric features of one event: sign, scaled log-magnitude, and
/// log1p of the gap (in days) since the previous event (0 for the first).
pub fn numeric_features(event: &EventRecord, prev_timestamp: Option<i64>, amount_log_std: f64) -> [f64; 3] {
    let major = event.amount_major();
    let sign = if major > 0.0 {
        1.0
    } else if major < 0.0 {
        -1.0
    } else {
        0.0
    };
    let magnitude = major.abs().ln_1p() / amount_log_std;
    let dt_days = prev_timestamp
        .map(|prev| ((event.timestamp - prev).max(0)) as f64 / SECONDS_PER_DAY as f64)
        .unwrap_or(0.0);
    [sign, magnitude, dt_days.ln_1p()]
}

/// Per-event input vector: categorical embedding lookups concatenated with
/// the raw numeric features (the trainable affine transform is applied
/// inside the recurrence, not here).
pub fn featurize(
    params: &EncoderParams,
    event: &EventRecord,
    prev_timestamp: Option<i64>,
) -> Result<Vec<f64>> {
    let config = &params.config;
    if event.mcc >= config.mcc_vocab {
        return Err(Error::UnknownCategory {
            field: "mcc".into(),
            index: event.mcc,
        });
    }
    if event.tx_type >= config.tx_vocab {
        return Err(Error::UnknownCategory {
            field: "tx_type".into(),
            index: event.tx_type,
        });
    }
    let mut x = Vec::with_capacity(config.d_in());
    x.extend_from_slice(params.emb_mcc.row(event.mcc));
    x.extend_from_slice(params.emb_tx.row(event.tx_type));
    x.extend_from_slice(&numeric_features(event, prev_timestamp, config.amount_log_std));
    Ok(x)
}

struct StepCache {
    mcc: usize,
    tx: usize,
    u: [f64; 3],
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    rh: Vec<f64>,
}

/// Intermediate activations kept for backpropagation through one sequence.
pub struct ForwardCache {
    steps: Vec<StepCache>,
    pooled: Vec<f64>,
}

fn sigmoid_vec(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = crate::math::sigmoid(*v));
}

/// Runs the GRU over a sequence and returns the output embedding along with
/// the cache needed for `backward`.
pub fn forward_cached(seq: &EventSequence, params: &EncoderParams) -> Result<(Vec<f64>, ForwardCache)> {
    if seq.is_empty() {
        return Err(Error::Degenerate(format!(
            "cannot encode empty sequence for client {}",
            seq.client_id
        )));
    }
    let config = &params.config;
    let d_h = config.d_hidden;
    let d_e = config.d_emb;
    let n = seq.events.len();

    let mut h = vec![0.0; d_h];
    let mut steps = Vec::with_capacity(n);
    let mut h_sum = vec![0.0; d_h];
    let mut prev_ts = None;

    for ev in &seq.events {
        let mut x = featurize(params, ev, prev_ts)?;
        let u_raw: [f64; 3] = [x[2 * d_e], x[2 * d_e + 1], x[2 * d_e + 2]];
        // trainable affine on the numeric block
        let mut xn = params.num_b.clone();
        params.num_w.matvec_add(&u_raw, &mut xn);
        x[2 * d_e..].copy_from_slice(&xn);

        let mut z = params.b_z.clone();
        params.w_z.matvec_add(&x, &mut z);
        params.u_z.matvec_add(&h, &mut z);
        sigmoid_vec(&mut z);

        let mut r = params.b_r.clone();
        params.w_r.matvec_add(&x, &mut r);
        params.u_r.matvec_add(&h, &mut r);
        sigmoid_vec(&mut r);

        let rh: Vec<f64> = r.iter().zip(&h).map(|(ri, hi)| ri * hi).collect();
        let mut c = params.b_h.clone();
        params.w_h.matvec_add(&x, &mut c);
        params.u_h.matvec_add(&rh, &mut c);
        c.iter_mut().for_each(|v| *v = v.tanh());

        let h_new: Vec<f64> = h
            .iter()
            .zip(&z)
            .zip(&c)
            .map(|((hp, zi), ci)| (1.0 - zi) * hp + zi * ci)
            .collect();

        steps.push(StepCache {
            mcc: ev.mcc,
            tx: ev.tx_type,
            u: u_raw,
            x,
            h_prev: h,
            z,
            r,
            c,
            rh,
        });
        h = h_new;
        if config.pooling == Pooling::Mean {
            axpy(1.0, &h, &mut h_sum);
        }
        prev_ts = Some(ev.timestamp);
    }

    let pooled = match config.pooling {
        Pooling::Final => h,
        Pooling::Mean => {
            h_sum.iter_mut().for_each(|v| *v /= n as f64);
            h_sum
        }
    };

    let mut out = params.out_b.clone();
    params.out_w.matvec_add(&pooled, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!(
            "non-finite embedding for client {}",
            seq.client_id
        )));
    }
    Ok((out, ForwardCache { steps, pooled }))
}

/// Encodes one sequence to its output embedding.
pub fn encode(seq: &EventSequence, params: &EncoderParams) -> Result<SeqEmbedding> {
    let (vector, _) = forward_cached(seq, params)?;
    Ok(SeqEmbedding {
        client_id: seq.client_id.clone(),
        vector,
    })
}

/// Backpropagates `d_out` (gradient w.r.t. the output embedding) through the
/// cached forward pass, accumulating parameter gradients into `tape`.
pub fn backward(params: &EncoderParams, cache: &ForwardCache, d_out: &[f64], tape: &mut GradTape) {
    let config = &params.config;
    let d_h = config.d_hidden;
    let d_e = config.d_emb;
    let n = cache.steps.len();
    let g = &mut tape.grads;

    // output projection
    g.out_w.add_outer(1.0, d_out, &cache.pooled);
    axpy(1.0, d_out, &mut g.out_b);
    let mut d_pooled = vec![0.0; d_h];
    params.out_w.tmatvec_add(d_out, &mut d_pooled);

    let mut dh = match config.pooling {
        Pooling::Final => d_pooled.clone(),
        Pooling::Mean => vec![0.0; d_h],
    };
    let mean_share: Option<Vec<f64>> = match config.pooling {
        Pooling::Final => None,
        Pooling::Mean => Some(d_pooled.iter().map(|v| v / n as f64).collect()),
    };

    let mut daz = vec![0.0; d_h];
    let mut dar = vec![0.0; d_h];
    let mut dac = vec![0.0; d_h];
    let mut drh = vec![0.0; d_h];

    for step in cache.steps.iter().rev() {
        if let Some(share) = &mean_share {
            axpy(1.0, share, &mut dh);
        }

        let mut dh_prev = vec![0.0; d_h];
        for i in 0..d_h {
            let (z, r, c, hp) = (step.z[i], step.r[i], step.c[i], step.h_prev[i]);
            let dz = dh[i] * (c - hp);
            let dc = dh[i] * z;
            dh_prev[i] = dh[i] * (1.0 - z);
            dac[i] = dc * (1.0 - c * c);
            daz[i] = dz * z * (1.0 - z);
            let _ = r; // dar filled after drh below
        }

        // candidate path: a_c = W_h x + U_h (r∘h_prev) + b_h
        g.w_h.add_outer(1.0, &dac, &step.x);
        g.u_h.add_outer(1.0, &dac, &step.rh);
        axpy(1.0, &dac, &mut g.b_h);
        drh.iter_mut().for_each(|v| *v = 0.0);
        params.u_h.tmatvec_add(&dac, &mut drh);
        for i in 0..d_h {
            let dr = drh[i] * step.h_prev[i];
            dh_prev[i] += drh[i] * step.r[i];
            dar[i] = dr * step.r[i] * (1.0 - step.r[i]);
        }

        // gate paths
        g.w_z.add_outer(1.0, &daz, &step.x);
        g.u_z.add_outer(1.0, &daz, &step.h_prev);
        axpy(1.0, &daz, &mut g.b_z);
        params.u_z.tmatvec_add(&daz, &mut dh_prev);

        g.w_r.add_outer(1.0, &dar, &step.x);
        g.u_r.add_outer(1.0, &dar, &step.h_prev);
        axpy(1.0, &dar, &mut g.b_r);
        params.u_r.tmatvec_add(&dar, &mut dh_prev);

        // input vector
        let mut dx = vec![0.0; config.d_in()];
        params.w_z.tmatvec_add(&daz, &mut dx);
        params.w_r.tmatvec_add(&dar, &mut dx);
        params.w_h.tmatvec_add(&dac, &mut dx);

        axpy(1.0, &dx[..d_e], g.emb_mcc.row_mut(step.mcc));
        axpy(1.0, &dx[d_e..2 * d_e], g.emb_tx.row_mut(step.tx));
        let dxn = &dx[2 * d_e..];
        g.num_w.add_outer(1.0, dxn, &step.u);
        axpy(1.0, dxn, &mut g.num_b);

        dh = dh_prev;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{generate_synthetic, SyntheticConfig};
    use crate::math::{dot, l2_norm};

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            mcc_vocab: 4,
            tx_vocab: 3,
            d_emb: 2,
            d_hidden: 3,
            d_out: 4,
            pooling: Pooling::Final,
            amount_log_std: 1.0,
        }
    }

    fn seq(events: Vec<(i64, i64, usize, usize)>) -> EventSequence {
        EventSequence {
            client_id: "t".into(),
            events: events
                .into_iter()
                .map(|(timestamp, amount_minor, mcc, tx_type)| EventRecord {
                    timestamp,
                    amount_minor,
                    mcc,
                    tx_type,
                })
                .collect(),
            label: None,
        }
    }

    #[test]
    fn numeric_features_zero_amount_and_first_event() {
        let ev = EventRecord {
            timestamp: 1000,
            amount_minor: 0,
            mcc: 0,
            tx_type: 0,
        };
        let u = numeric_features(&ev, None, 1.0);
        assert_eq!(u, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn numeric_features_sign_symmetry() {
        let pos = EventRecord {
            timestamp: 0,
            amount_minor: 10_000,
            mcc: 0,
            tx_type: 0,
        };
        let neg = EventRecord {
            amount_minor: -10_000,
            ..pos
        };
        let up = numeric_features(&pos, None, 1.0);
        let un = numeric_features(&neg, None, 1.0);
        assert_eq!(up[0], 1.0);
        assert_eq!(un[0], -1.0);
        assert_eq!(up[1], un[1]);
    }

    #[test]
    fn featurize_rejects_out_of_vocab() {
        let params = EncoderParams::init(tiny_config(), 0);
        let ev = EventRecord {
            timestamp: 0,
            amount_minor: 100,
            mcc: 99,
            tx_type: 0,
        };
        assert!(matches!(
            featurize(&params, &ev, None),
            Err(Error::UnknownCategory { .. })
        ));
    }

    #[test]
    fn zero_params_yield_output_bias() {
        let params = EncoderParams::init(tiny_config(), 1).zeros_like();
        let mut with_bias = params.clone();
        with_bias.out_b = vec![0.5, -1.0, 0.25, 2.0];
        let s = seq(vec![(0, -500, 1, 0), (100, 700, 2, 1)]);
        let e = encode(&s, &with_bias).unwrap();
        assert_eq!(e.vector, vec![0.5, -1.0, 0.25, 2.0]);
    }

    #[test]
    fn single_event_matches_hand_computed_cell() {
        // d_h = 2, all weight matrices constant, one event with a known
        // input vector; expected value computed through the scalar
        // recurrence written out by hand below.
        let config = EncoderConfig {
            mcc_vocab: 2,
            tx_vocab: 2,
            d_emb: 1,
            d_hidden: 2,
            d_out: 1,
            pooling: Pooling::Final,
            amount_log_std: 1.0,
        };
        let mut p = EncoderParams::init(config, 0).zeros_like();
        p.emb_mcc.set(1, 0, 0.5);
        p.emb_tx.set(0, 0, -0.25);
        // numeric affine = identity
        p.num_w = Mat::identity(3);
        // x = [0.5, -0.25, sign=-1, mag=log1p(2), dt=0]  (d_in = 5)
        let wz = [0.1, -0.2, 0.3, 0.0, 0.05];
        let wr = [0.2, 0.1, -0.1, 0.4, 0.0];
        let wh = [-0.3, 0.2, 0.1, 0.1, 0.2];
        for j in 0..5 {
            p.w_z.set(0, j, wz[j]);
            p.w_z.set(1, j, -wz[j]);
            p.w_r.set(0, j, wr[j]);
            p.w_r.set(1, j, wr[j] * 0.5);
            p.w_h.set(0, j, wh[j]);
            p.w_h.set(1, j, wh[j] + 0.01);
        }
        p.b_z = vec![0.05, -0.05];
        p.b_r = vec![0.0, 0.1];
        p.b_h = vec![0.2, -0.2];
        p.out_w.set(0, 0, 1.0);
        p.out_w.set(0, 1, -2.0);
        p.out_b = vec![0.3];

        let s = seq(vec![(0, -200, 1, 0)]);
        let got = encode(&s, &p).unwrap().vector[0];

        // hand evaluation (h_prev = 0 so gates reduce to the input terms)
        let x = [0.5, -0.25, -1.0, 2.0f64.ln_1p(), 0.0];
        let lin = |w: &[f64], b: f64| b + w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z0 = sig(lin(&wz, 0.05));
        let z1 = sig(lin(&wz.map(|v| -v), -0.05));
        let c0 = lin(&wh, 0.2).tanh();
        let c1 = lin(&wh.map(|v| v + 0.01), -0.2).tanh();
        let h0 = z0 * c0;
        let h1 = z1 * c1;
        let expected = 0.3 + 1.0 * h0 - 2.0 * h1;
        assert!(
            (got - expected).abs() < 1e-6,
            "got {got}, hand-computed {expected}"
        );
    }

    #[test]
    fn duplicating_final_event_changes_output() {
        let params = EncoderParams::init(tiny_config(), 3);
        let base = seq(vec![(0, -500, 1, 0), (50, 300, 2, 1), (90, -900, 3, 2)]);
        let mut dup = base.clone();
        dup.events.push(dup.events[2]);
        let a = encode(&base, &params).unwrap().vector;
        let b = encode(&dup, &params).unwrap().vector;
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-9, "recurrence looks degenerate: diff {diff}");
    }

    #[test]
    fn encode_is_batch_independent_and_deterministic() {
        let ds = generate_synthetic(6, 21, &SyntheticConfig::default()).unwrap();
        let config = EncoderConfig::with_dims(&ds, 4, 8, 6);
        let params = EncoderParams::init(config, 5);
        // encode alone and then interleaved with other clients
        let alone: Vec<_> = ds
            .sequences
            .iter()
            .map(|s| encode(s, &params).unwrap().vector)
            .collect();
        for (i, s) in ds.sequences.iter().enumerate().rev() {
            let again = encode(s, &params).unwrap().vector;
            for (a, b) in alone[i].iter().zip(&again) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_sequence_errors() {
        let params = EncoderParams::init(tiny_config(), 0);
        assert!(encode(&seq(vec![]), &params).is_err());
    }

    #[test]
    fn param_count_formula_matches_shape_table() {
        let params = EncoderParams::init(tiny_config(), 0);
        assert_eq!(params.param_count(), params.config.param_count_formula());

        // the default-size encoder lands in the 3–6 M bracket
        let ds = generate_synthetic(4, 0, &SyntheticConfig::default()).unwrap();
        let config = EncoderConfig::for_dataset(&ds);
        assert_eq!(
            config.param_count_formula(),
            EncoderParams::init(config.clone(), 0).param_count()
        );
        let count = config.param_count_formula();
        assert!(
            (3_000_000..=6_000_000).contains(&count),
            "default encoder has {count} parameters"
        );
    }

    #[test]
    fn flatten_assign_round_trip() {
        let params = EncoderParams::init(tiny_config(), 9);
        let flat = params.flatten();
        let mut other = EncoderParams::init(tiny_config(), 1);
        other.assign_flat(&flat);
        assert_eq!(params, other);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let params = EncoderParams::init(tiny_config(), 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        params.save_checkpoint(&path).unwrap();
        let back = EncoderParams::load_checkpoint(&path).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        // probe loss: f(params) = p · encode(seq)
        let s = seq(vec![(0, -500, 1, 0), (3600, 300, 2, 1), (9000, -900, 3, 2), (20_000, 150, 0, 1)]);
        for seed in 0..3u64 {
            let params = EncoderParams::init(tiny_config(), seed);
            let probe: Vec<f64> = (0..params.config.d_out)
                .map(|i| ((i * 7 + seed as usize) % 5) as f64 * 0.25 - 0.5)
                .collect();

            let (out, cache) = forward_cached(&s, &params).unwrap();
            let _ = out;
            let mut tape = GradTape::new(&params);
            backward(&params, &cache, &probe, &mut tape);
            let analytic = tape.grads.flatten();

            let mut flat = params.flatten();
            let eps = 1e-6;
            let mut max_rel: f64 = 0.0;
            for k in 0..flat.len() {
                let orig = flat[k];
                flat[k] = orig + eps;
                let mut pp = params.clone();
                pp.assign_flat(&flat);
                let fp = dot(&probe, &encode(&s, &pp).unwrap().vector);
                flat[k] = orig - eps;
                pp.assign_flat(&flat);
                let fm = dot(&probe, &encode(&s, &pp).unwrap().vector);
                flat[k] = orig;
                let fd = (fp - fm) / (2.0 * eps);
                let denom = analytic[k].abs().max(fd.abs()).max(1e-6);
                max_rel = max_rel.max((analytic[k] - fd).abs() / denom);
            }
            assert!(max_rel < 1e-4, "seed {seed}: max relative error {max_rel}");
        }
    }

    #[test]
    fn mean_pooling_gradient_also_checks() {
        let mut config = tiny_config();
        config.pooling = Pooling::Mean;
        let params = EncoderParams::init(config, 4);
        let s = seq(vec![(0, -500, 1, 0), (3600, 300, 2, 1), (7200, -100, 0, 2)]);
        let probe: Vec<f64> = vec![0.5, -0.25, 1.0, -1.0];

        let (_, cache) = forward_cached(&s, &params).unwrap();
        let mut tape = GradTape::new(&params);
        backward(&params, &cache, &probe, &mut tape);
        let analytic = tape.grads.flatten();

        let mut flat = params.flatten();
        let eps = 1e-6;
        for k in (0..flat.len()).step_by(7) {
            let orig = flat[k];
            let mut pp = params.clone();
            flat[k] = orig + eps;
            pp.assign_flat(&flat);
            let fp = dot(&probe, &encode(&s, &pp).unwrap().vector);
            flat[k] = orig - eps;
            pp.assign_flat(&flat);
            let fm = dot(&probe, &encode(&s, &pp).unwrap().vector);
            flat[k] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let denom = analytic[k].abs().max(fd.abs()).max(1e-6);
            assert!((analytic[k] - fd).abs() / denom < 1e-4, "param {k}");
        }
    }

    #[test]
    fn embeddings_are_generically_nonzero() {
        let ds = generate_synthetic(4, 2, &SyntheticConfig::default()).unwrap();
        let config = EncoderConfig::with_dims(&ds, 4, 8, 6);
        let params = EncoderParams::init(config, 8);
        for s in &ds.sequences {
            assert!(l2_norm(&encode(s, &params).unwrap().vector) > 1e-6);
        }
    }
}
