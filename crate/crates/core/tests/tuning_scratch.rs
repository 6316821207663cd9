//! Temporary tuning diagnostics; run manually with --ignored.

use std::collections::BTreeMap;

use latte_core::alignment::{retrieval_accuracy, train_alignment, AlignmentHyperParams, HeadKind};
use latte_core::clients::{mock_embed, mock_generate};
use latte_core::data_model::{generate_synthetic, split_holdout, SyntheticConfig};
use latte_core::encoder::{pretrain_coles, ColesConfig, EncoderConfig, Pooling};
use latte_core::summarizer::{compute_profile, CategoryNames};

#[test]
#[ignore]
fn text_collision_diagnostics() {
    let config = SyntheticConfig::default();
    let mut ds = generate_synthetic(2000, 42, &config).unwrap();
    split_holdout(&mut ds, 0.1, 42).unwrap();
    let names = CategoryNames::generated(ds.mcc_vocab(), ds.tx_vocab());

    let mut texts: Vec<String> = Vec::new();
    for &i in &ds.holdout_indices() {
        let profile = compute_profile(&ds.sequences[i], &names).unwrap();
        texts.push(mock_generate(&profile, 1).unwrap().text);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &texts {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let collided: usize = counts.values().filter(|&&c| c > 1).map(|&c| c).sum();
    println!(
        "holdout clients: {}, distinct texts: {}, clients sharing a text: {}",
        texts.len(),
        counts.len(),
        collided
    );
    let max_acc = 1.0 - (collided as f64 - counts.values().filter(|&&c| c > 1).count() as f64)
        / texts.len() as f64;
    println!("retrieval ceiling (ties counted half-lost): ~{max_acc:.3}");
}

#[test]
#[ignore]
fn retrieval_tuning() {
    let t0 = std::time::Instant::now();
    let config = SyntheticConfig::default();
    let mut ds = generate_synthetic(2000, 42, &config).unwrap();
    split_holdout(&mut ds, 0.1, 42).unwrap();
    let names = CategoryNames::generated(ds.mcc_vocab(), ds.tx_vocab());

    let mut texts = BTreeMap::new();
    for seq in &ds.sequences {
        let profile = compute_profile(seq, &names).unwrap();
        let d = mock_generate(&profile, 1).unwrap();
        let e = mock_embed(&seq.client_id, &d.text, 512, 1).unwrap();
        texts.insert(seq.client_id.clone(), e.vector);
    }
    println!("texts built at {:?}", t0.elapsed());

    let mut enc_config = EncoderConfig::with_dims(&ds, 16, 128, 96);
    if std::env::var("TUNE_MEAN_POOL").is_ok() {
        enc_config.pooling = Pooling::Mean;
    }
    let coles = ColesConfig {
        n_slices: 2,
        len_min: 8,
        len_max: 25,
        epochs: 8,
        batch_size: 64,
        lr: 3e-3,
        ..ColesConfig::default()
    };
    let (encoder, curve) = pretrain_coles(&ds, enc_config, &coles, 42).unwrap();
    println!(
        "pretrain done at {:?}, steps {}, loss {:.4} -> {:.4}",
        t0.elapsed(),
        curve.len(),
        curve.first().unwrap().1,
        curve.last().unwrap().1
    );

    let holdout = ds.holdout_indices();
    for lr in [0.003, 0.005] {
        let hyper = AlignmentHyperParams {
            head: HeadKind::Softmax,
            epochs: 10,
            batch_size: 64,
            lr,
            ..AlignmentHyperParams::default()
        };
        let before = {
            let mut h0 = hyper.clone();
            h0.epochs = 0;
            let outcome = train_alignment(&ds, &texts, &encoder, &h0, 42).unwrap();
            retrieval_accuracy(&outcome.params, &ds, &holdout, &texts).unwrap()
        };
        let ta = std::time::Instant::now();
        let outcome = train_alignment(&ds, &texts, &encoder, &hyper, 42).unwrap();
        let after = retrieval_accuracy(&outcome.params, &ds, &holdout, &texts).unwrap();
        let train_subset: Vec<usize> = ds.labeled_train_indices().into_iter().take(200).collect();
        let train_acc = retrieval_accuracy(&outcome.params, &ds, &train_subset, &texts).unwrap();
        println!(
            "lr {lr}: retrieval before {before:.3} -> after {after:.3} (train {train_acc:.3}), loss {:.4} -> {:.4}, tau {:.4}, train took {:?}",
            outcome.loss_curve.first().unwrap().1,
            outcome.loss_curve.last().unwrap().1,
            outcome.params.tau(),
            ta.elapsed()
        );
    }
    println!("total {:?}", t0.elapsed());
}
