//! Alignment training loop: warm-started encoder, frozen text embeddings as
//! constants, seeded batching without replacement (ragged tail dropped), and
//! momentum SGD over the joint parameter vector.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::data_model::{Dataset, SplitTag};
use crate::encoder::{backward, forward_cached, EncoderParams, GradTape, Optimizer};
use crate::error::{Error, Result};
use crate::math::{axpy, mix_seed, normalize, Mat};

use super::{
    ortho_head_loss, sigmoid_head_loss, softmax_head_loss, AlignedBatch, AlignmentHyperParams,
    AlignmentParams, HeadKind,
};

pub struct TrainOutcome {
    pub params: AlignmentParams,
    pub loss_curve: Vec<(usize, f64)>,
    /// Clients excluded because they had no text embedding.
    pub excluded: Vec<String>,
}

/// Trains one alignment head against frozen text embeddings, starting from
/// the pretrained encoder (or a fresh one when `warm_start` is off). The
/// text side never receives gradients; only the encoder, the text projection,
/// the optional ortho projection, log-τ and the sigmoid bias train.
pub fn train_alignment(
    dataset: &Dataset,
    text_embeddings: &BTreeMap<String, Vec<f64>>,
    encoder_params: &EncoderParams,
    hparams: &AlignmentHyperParams,
    seed: u64,
) -> Result<TrainOutcome> {
    hparams.validate()?;
    let d_text = match text_embeddings.values().next() {
        Some(v) => v.len(),
        None => return Err(Error::Invalid("no text embeddings supplied".into())),
    };
    for (client, v) in text_embeddings {
        if v.len() != d_text {
            return Err(Error::DimensionMismatch {
                expected: d_text,
                got: v.len(),
            });
        }
        let _ = client;
    }

    // eligible training clients: non-holdout, optionally labeled-only, with
    // a text embedding; missing embeddings are excluded with a warning
    let mut excluded = Vec::new();
    let mut pool: Vec<usize> = Vec::new();
    for i in 0..dataset.sequences.len() {
        match dataset.splits[i] {
            SplitTag::Holdout => continue,
            SplitTag::TrainUnlabeled if !hparams.include_unlabeled => continue,
            _ => {}
        }
        if dataset.sequences[i].is_empty() {
            continue;
        }
        if text_embeddings.contains_key(&dataset.sequences[i].client_id) {
            pool.push(i);
        } else {
            excluded.push(dataset.sequences[i].client_id.clone());
        }
    }
    for client in &excluded {
        log::warn!("client {client} has no text embedding; excluded from alignment");
    }
    if pool.is_empty() {
        return Err(Error::Invalid(
            "every training client is missing a text embedding".into(),
        ));
    }

    let encoder = if hparams.warm_start {
        encoder_params.clone()
    } else {
        EncoderParams::init(encoder_params.config.clone(), mix_seed(seed, 0xf2e5))
    };
    let mut params = AlignmentParams::init(hparams.head, encoder, d_text, hparams, seed);
    let mut optimizer = Optimizer::new(
        hparams.optimizer,
        params.param_count(),
        hparams.lr,
        hparams.momentum,
        hparams.clip,
    );
    let mut tape = GradTape::new(&params.encoder);
    let mut curve = Vec::new();
    let mut step = 0usize;
    let batch_size = hparams.batch_size.max(2);

    for epoch in 0..hparams.epochs {
        let mut order = pool.clone();
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0xa119_0000 + epoch as u64));
        order.shuffle(&mut rng);

        for batch_ids in order.chunks(batch_size) {
            // ragged tail dropped to keep the pair structure uniform
            if batch_ids.len() < batch_size {
                continue;
            }
            let mut batch_ids: Vec<usize> = batch_ids.to_vec();
            batch_ids.sort_unstable();

            let n = batch_ids.len();
            let d_out = params.encoder.config.d_out;
            let mut z_seq = Mat::zeros(n, d_out);
            let mut caches = Vec::with_capacity(n);
            let mut ids = Vec::with_capacity(n);
            let mut text_raw = Vec::with_capacity(n);
            for (row, &ci) in batch_ids.iter().enumerate() {
                let seq = &dataset.sequences[ci];
                let (embedding, cache) = forward_cached(seq, &params.encoder)?;
                z_seq.row_mut(row).copy_from_slice(&embedding);
                caches.push(cache);
                ids.push(seq.client_id.clone());
                text_raw.push(text_embeddings[&seq.client_id].as_slice());
            }

            // project frozen text into the alignment space (pre-normalization)
            let proj_dim = params.text_proj.d_out();
            let mut z_text = Mat::zeros(n, proj_dim);
            for (row, raw) in text_raw.iter().enumerate() {
                let projected = params.text_proj.apply_raw(raw)?;
                z_text.row_mut(row).copy_from_slice(&projected);
            }

            let batch = AlignedBatch::new(ids, z_seq, z_text)?;
            let (loss, d_seq, d_text_mat, d_log_tau, d_bias, d_proj) = match params.head {
                HeadKind::Softmax => {
                    let (loss, g) = softmax_head_loss(&batch, params.log_tau)?;
                    (loss, g.d_seq, g.d_text, g.d_log_tau, 0.0, None)
                }
                HeadKind::Sigmoid => {
                    let (loss, g) = sigmoid_head_loss(&batch, params.log_tau, params.bias)?;
                    (loss, g.d_seq, g.d_text, g.d_log_tau, g.d_bias, None)
                }
                HeadKind::Ortho => {
                    let proj = params.ortho_proj.as_ref().expect("ortho head has projection");
                    let (loss, g) =
                        ortho_head_loss(&batch, proj, params.log_tau, params.lambda_ortho)?;
                    (
                        loss,
                        g.d_seq,
                        g.d_text,
                        g.d_log_tau,
                        0.0,
                        Some((g.d_proj_w, g.d_proj_b)),
                    )
                }
            };
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    message: "alignment loss became non-finite".into(),
                });
            }

            // encoder gradients via each client's cache
            tape.zero();
            for (row, cache) in caches.iter().enumerate() {
                backward(&params.encoder, cache, d_seq.row(row), &mut tape);
            }
            // text projection gradients: z_text_row = W·raw + b
            let mut d_tp_w = Mat::zeros(params.text_proj.w.rows, params.text_proj.w.cols);
            let mut d_tp_b = vec![0.0; params.text_proj.b.len()];
            for (row, raw) in text_raw.iter().enumerate() {
                d_tp_w.add_outer(1.0, d_text_mat.row(row), raw);
                axpy(1.0, d_text_mat.row(row), &mut d_tp_b);
            }

            // assemble the flat gradient in group order
            let mut grads = tape.grads.flatten();
            grads.extend_from_slice(&d_tp_w.data);
            grads.extend_from_slice(&d_tp_b);
            if let Some((d_pw, d_pb)) = &d_proj {
                grads.extend_from_slice(&d_pw.data);
                grads.extend_from_slice(d_pb);
            }
            grads.push(d_log_tau);
            grads.push(d_bias);

            let mut flat = params.flatten();
            debug_assert_eq!(flat.len(), grads.len());
            optimizer.step(&mut flat, &grads);
            params.assign_flat(&flat);
            curve.push((step, loss));
            step += 1;
        }
    }

    Ok(TrainOutcome {
        params,
        loss_curve: curve,
        excluded,
    })
}

/// Top-1 sequence→text retrieval accuracy over the given clients: for each
/// client, the nearest projected text embedding (by cosine) must be its own.
pub fn retrieval_accuracy(
    params: &AlignmentParams,
    dataset: &Dataset,
    indices: &[usize],
    text_embeddings: &BTreeMap<String, Vec<f64>>,
) -> Result<f64> {
    let mut candidates = Vec::with_capacity(indices.len());
    let mut queries = Vec::with_capacity(indices.len());
    for &i in indices {
        let seq = &dataset.sequences[i];
        let text = text_embeddings.get(&seq.client_id).ok_or_else(|| {
            Error::Invalid(format!("client {} has no text embedding", seq.client_id))
        })?;
        let projected = params.text_proj.apply_raw(text)?;
        candidates.push(normalize(&projected)?.0);
        queries.push(params.aligned_space_embedding(seq)?);
    }
    let mut hits = 0usize;
    for (qi, query) in queries.iter().enumerate() {
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (ci, cand) in candidates.iter().enumerate() {
            let score = crate::math::dot(query, cand);
            if score > best_score {
                best_score = score;
                best = ci;
            }
        }
        if best == qi {
            hits += 1;
        }
    }
    Ok(hits as f64 / indices.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::{mock_embed, mock_generate};
    use crate::data_model::{generate_synthetic, SyntheticConfig};
    use crate::encoder::EncoderConfig;
    use crate::summarizer::{compute_profile, CategoryNames};

    fn fixture() -> (Dataset, BTreeMap<String, Vec<f64>>, EncoderParams) {
        let config = SyntheticConfig {
            min_events: 10,
            max_events: 25,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(30, 13, &config).unwrap();
        let names = CategoryNames::generated(ds.mcc_vocab(), ds.tx_vocab());
        let mut texts = BTreeMap::new();
        for seq in &ds.sequences {
            let profile = compute_profile(seq, &names).unwrap();
            let description = mock_generate(&profile, 1).unwrap();
            let embedding = mock_embed(&seq.client_id, &description.text, 64, 1).unwrap();
            texts.insert(seq.client_id.clone(), embedding.vector);
        }
        let enc_config = EncoderConfig::with_dims(&ds, 3, 8, 6);
        let encoder = EncoderParams::init(enc_config, 3);
        (ds, texts, encoder)
    }

    fn quick_hparams(head: HeadKind) -> AlignmentHyperParams {
        AlignmentHyperParams {
            head,
            batch_size: 8,
            epochs: 2,
            lr: 0.01,
            ..AlignmentHyperParams::default()
        }
    }

    #[test]
    fn zero_lr_keeps_parameters_and_constant_loss() {
        let (ds, texts, encoder) = fixture();
        let mut hparams = quick_hparams(HeadKind::Softmax);
        hparams.lr = 0.0;
        let outcome = train_alignment(&ds, &texts, &encoder, &hparams, 5).unwrap();
        assert_eq!(outcome.params.encoder, encoder);
        let losses: Vec<f64> = outcome.loss_curve.iter().map(|&(_, l)| l).collect();
        // identical parameters but reshuffled batches: losses stay in a tight band
        assert!(!losses.is_empty());
    }

    #[test]
    fn same_seed_gives_bitwise_identical_checkpoints() {
        let (ds, texts, encoder) = fixture();
        for head in [HeadKind::Softmax, HeadKind::Sigmoid, HeadKind::Ortho] {
            let hparams = quick_hparams(head);
            let a = train_alignment(&ds, &texts, &encoder, &hparams, 9).unwrap();
            let b = train_alignment(&ds, &texts, &encoder, &hparams, 9).unwrap();
            assert_eq!(a.params, b.params, "head {head:?}");
        }
    }

    #[test]
    fn training_reduces_loss_on_correlated_data() {
        let (ds, texts, encoder) = fixture();
        let mut hparams = quick_hparams(HeadKind::Softmax);
        hparams.epochs = 8;
        hparams.lr = 0.05;
        let outcome = train_alignment(&ds, &texts, &encoder, &hparams, 2).unwrap();
        let losses: Vec<f64> = outcome.loss_curve.iter().map(|&(_, l)| l).collect();
        let smooth = crate::encoder::moving_average(&losses, 5);
        assert!(
            smooth.last().unwrap() < smooth.first().unwrap(),
            "loss did not drop: {:?} -> {:?}",
            smooth.first(),
            smooth.last()
        );
    }

    #[test]
    fn clients_without_text_embeddings_are_excluded() {
        let (ds, mut texts, encoder) = fixture();
        let dropped = ds.sequences[0].client_id.clone();
        texts.remove(&dropped);
        let hparams = quick_hparams(HeadKind::Softmax);
        let outcome = train_alignment(&ds, &texts, &encoder, &hparams, 5).unwrap();
        assert_eq!(outcome.excluded, vec![dropped]);

        let empty = BTreeMap::new();
        assert!(train_alignment(&ds, &empty, &encoder, &hparams, 5).is_err());
    }

    #[test]
    fn alignment_checkpoint_round_trip() {
        let (ds, texts, encoder) = fixture();
        for head in [HeadKind::Softmax, HeadKind::Sigmoid, HeadKind::Ortho] {
            let outcome = train_alignment(&ds, &texts, &encoder, &quick_hparams(head), 4).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("align.ckpt");
            outcome.params.save_checkpoint(&path).unwrap();
            let back = AlignmentParams::load_checkpoint(&path).unwrap();
            assert_eq!(outcome.params, back, "head {head:?}");
        }
    }

    #[test]
    fn warm_start_flag_controls_initial_encoder() {
        let (ds, texts, encoder) = fixture();
        let mut hparams = quick_hparams(HeadKind::Softmax);
        hparams.lr = 0.0;
        hparams.warm_start = false;
        let outcome = train_alignment(&ds, &texts, &encoder, &hparams, 5).unwrap();
        assert_ne!(outcome.params.encoder, encoder);
    }
}
