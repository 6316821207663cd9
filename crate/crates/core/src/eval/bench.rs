//! Throughput benchmark: end-to-end embedding production per variant. The
//! structural variant times encoding alone; the fused variant adds the text
//! path (profile, mock description, mock embedding, projection, fusion) on
//! top of the same encode measurements, so the comparison is paired and free
//! of between-run noise.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alignment::{fuse_embeddings, AlignmentParams, FuseMode};
use crate::clients::{mock_embed, mock_generate};
use crate::data_model::Dataset;
use crate::encoder::SeqEmbedding;
use crate::error::{Error, Result};
use crate::summarizer::{compute_profile, CategoryNames};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub variant: String,
    pub samples_per_sec: f64,
    pub wall_seconds: f64,
    pub n_samples: usize,
    pub params_count: usize,
}

/// Times embedding production over the whole dataset (after `warmup`
/// untimed clients) and returns one result per variant:
/// `(structural-only, fused-with-text-path)`.
pub fn throughput_benchmark(
    align: &AlignmentParams,
    names: &CategoryNames,
    dataset: &Dataset,
    warmup: usize,
    mock_dim: usize,
    mock_seed: u64,
    tags: (&str, &str),
) -> Result<(BenchResult, BenchResult)> {
    if dataset.n_clients() < 100 {
        return Err(Error::config(
            "benchmark.dataset",
            format!("need at least 100 clients, have {}", dataset.n_clients()),
        ));
    }
    if warmup < 10 {
        return Err(Error::config("benchmark.warmup", "need warmup >= 10"));
    }

    for seq in dataset.sequences.iter().take(warmup) {
        let _ = align.structural_embedding(seq)?;
    }

    let mut encode_secs = 0.0f64;
    let mut text_secs = 0.0f64;
    let mut n_samples = 0usize;
    for seq in &dataset.sequences {
        let t0 = Instant::now();
        let structural = align.structural_embedding(seq)?;
        let t1 = Instant::now();

        let profile = compute_profile(seq, names)?;
        let description = mock_generate(&profile, mock_seed)?;
        let text = mock_embed(&seq.client_id, &description.text, mock_dim, mock_seed)?;
        let z_seq = SeqEmbedding {
            client_id: seq.client_id.clone(),
            vector: structural,
        };
        let fused = fuse_embeddings(&z_seq, Some(&text), &align.text_proj, FuseMode::Full)?;
        let t2 = Instant::now();

        encode_secs += t1.duration_since(t0).as_secs_f64();
        text_secs += t2.duration_since(t1).as_secs_f64();
        n_samples += 1;
        std::hint::black_box(&fused);
    }

    let structural_params = align.encoder.param_count();
    let fused_params = align.param_count();
    let fused_secs = encode_secs + text_secs;
    Ok((
        BenchResult {
            variant: tags.0.to_string(),
            samples_per_sec: n_samples as f64 / encode_secs,
            wall_seconds: encode_secs,
            n_samples,
            params_count: structural_params,
        },
        BenchResult {
            variant: tags.1.to_string(),
            samples_per_sec: n_samples as f64 / fused_secs,
            wall_seconds: fused_secs,
            n_samples,
            params_count: fused_params,
        },
    ))
}
