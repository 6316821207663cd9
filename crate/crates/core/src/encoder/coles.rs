//! Subsequence-contrastive pretraining pieces: slice sampling (overlapping
//! subsequences of one client are positives, other clients' slices are
//! negatives) and the softmax contrastive loss over cosine similarities with
//! analytic gradients w.r.t. the slice embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::data_model::EventSequence;
use crate::error::{Error, Result};
use crate::math::{logsumexp, mix_seed, normalize, normalize_backward, sorted_sum};

/// Samples `n_slices` contiguous slices with lengths uniform in
/// `[len_range.0, len_range.1]` (clipped to the sequence length) and uniform
/// start positions. Returns `None` when the sequence is shorter than the
/// minimum length, which callers treat as a skip marker for that client.
pub fn coles_sample(
    seq: &EventSequence,
    n_slices: usize,
    len_range: (usize, usize),
    seed: u64,
) -> Option<Vec<EventSequence>> {
    let (min_len, max_len) = len_range;
    assert!(min_len >= 1 && min_len <= max_len, "bad slice length range");
    assert!(n_slices >= 2, "need at least two slices per client");
    let n = seq.len();
    if n < min_len {
        return None;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0xc0135));
    let mut slices = Vec::with_capacity(n_slices);
    for _ in 0..n_slices {
        let len = rng.gen_range(min_len..=max_len).min(n);
        let start = rng.gen_range(0..=n - len);
        slices.push(seq.slice(start, len));
    }
    Some(slices)
}

/// Contrastive loss over L2-normalized slice embeddings. For each anchor the
/// positives are the other slices of the same client and the negatives are
/// every other slice in the batch:
///
///   loss(anchor) = −log( Σ_pos exp(s/τ) / Σ_all≠anchor exp(s/τ) )
///
/// Returns the batch mean and the gradient w.r.t. each raw (pre-
/// normalization) embedding.
pub fn coles_loss(
    items: &[(String, Vec<f64>)],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let k = items.len();
    if k < 2 {
        return Err(Error::Invalid("contrastive batch needs at least two slices".into()));
    }
    // group ids by client string
    let mut group = Vec::with_capacity(k);
    let mut names: Vec<&str> = Vec::new();
    for (client, _) in items {
        let id = match names.iter().position(|n| n == client) {
            Some(i) => i,
            None => {
                names.push(client);
                names.len() - 1
            }
        };
        group.push(id);
    }
    if names.len() < 2 {
        return Err(Error::Invalid(
            "contrastive batch needs slices from at least two distinct clients".into(),
        ));
    }
    for (gid, name) in names.iter().enumerate() {
        if group.iter().filter(|&&g| g == gid).count() < 2 {
            return Err(Error::Invalid(format!(
                "client {name} contributes fewer than two slices"
            )));
        }
    }

    let mut units = Vec::with_capacity(k);
    let mut norms = Vec::with_capacity(k);
    for (client, raw) in items {
        let (unit, norm) = normalize(raw).map_err(|_| {
            Error::Degenerate(format!("zero-norm slice embedding for client {client}"))
        })?;
        units.push(unit);
        norms.push(norm);
    }

    // cosine similarity matrix (upper computation reused symmetrically)
    let mut sim = vec![vec![0.0f64; k]; k];
    for a in 0..k {
        for b in (a + 1)..k {
            let s = crate::math::dot(&units[a], &units[b]);
            sim[a][b] = s;
            sim[b][a] = s;
        }
    }

    let mut anchor_losses = Vec::with_capacity(k);
    let mut d_sim = vec![vec![0.0f64; k]; k];
    for a in 0..k {
        let pos_logits: Vec<f64> = (0..k)
            .filter(|&m| m != a && group[m] == group[a])
            .map(|m| sim[a][m] / tau)
            .collect();
        let all_logits: Vec<f64> = (0..k).filter(|&m| m != a).map(|m| sim[a][m] / tau).collect();
        let lse_pos = logsumexp(&pos_logits);
        let lse_all = logsumexp(&all_logits);
        anchor_losses.push(lse_all - lse_pos);

        for m in 0..k {
            if m == a {
                continue;
            }
            let logit = sim[a][m] / tau;
            let p_all = (logit - lse_all).exp();
            let p_pos = if group[m] == group[a] {
                (logit - lse_pos).exp()
            } else {
                0.0
            };
            // d anchor_loss / d sim[a][m], before the 1/k batch mean
            d_sim[a][m] += (p_all - p_pos) / tau;
        }
    }
    let loss = sorted_sum(&mut anchor_losses.clone()) / k as f64;
    if !loss.is_finite() {
        return Err(Error::Degenerate("non-finite contrastive loss".into()));
    }

    // chain through the similarity matrix and the normalization
    let dim = units[0].len();
    let mut d_units = vec![vec![0.0f64; dim]; k];
    for a in 0..k {
        for m in 0..k {
            if m == a {
                continue;
            }
            let g = d_sim[a][m] / k as f64;
            if g != 0.0 {
                crate::math::axpy(g, &units[m], &mut d_units[a]);
                crate::math::axpy(g, &units[a], &mut d_units[m]);
            }
        }
    }
    let mut d_raw = vec![vec![0.0f64; dim]; k];
    for a in 0..k {
        normalize_backward(&units[a], norms[a], &d_units[a], &mut d_raw[a]);
    }
    Ok((loss, d_raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::EventRecord;

    fn seq(client: &str, n: usize) -> EventSequence {
        EventSequence {
            client_id: client.into(),
            events: (0..n)
                .map(|i| EventRecord {
                    timestamp: i as i64 * 100,
                    amount_minor: -100 - i as i64,
                    mcc: i % 3,
                    tx_type: i % 2,
                })
                .collect(),
            label: None,
        }
    }

    #[test]
    fn slices_respect_length_range_and_contiguity() {
        let s = seq("a", 10);
        let slices = coles_sample(&s, 6, (3, 5), 42).unwrap();
        assert_eq!(slices.len(), 6);
        for slice in &slices {
            assert!((3..=5).contains(&slice.len()));
            // contiguity: timestamps step by exactly 100
            for w in slice.events.windows(2) {
                assert_eq!(w[1].timestamp - w[0].timestamp, 100);
            }
        }
    }

    #[test]
    fn short_sequences_clip_to_full_length() {
        let s = seq("a", 3);
        let slices = coles_sample(&s, 2, (3, 3), 0).unwrap();
        for slice in &slices {
            assert_eq!(slice.events, s.events);
        }
    }

    #[test]
    fn too_short_sequences_are_skipped() {
        let s = seq("a", 2);
        assert!(coles_sample(&s, 2, (3, 5), 0).is_none());
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let s = seq("a", 50);
        let a = coles_sample(&s, 4, (5, 20), 7).unwrap();
        let b = coles_sample(&s, 4, (5, 20), 7).unwrap();
        assert_eq!(a, b);
        let c = coles_sample(&s, 4, (5, 20), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn identical_embeddings_give_log3() {
        // 2 clients × 2 slices, all embeddings equal: every similarity is 1,
        // each anchor has 1 positive among 3 candidates -> loss = ln 3.
        let e = vec![0.6, 0.8];
        let items = vec![
            ("a".to_string(), e.clone()),
            ("a".to_string(), e.clone()),
            ("b".to_string(), e.clone()),
            ("b".to_string(), e),
        ];
        let (loss, _) = coles_loss(&items, 1.0).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn well_separated_clusters_drive_loss_to_zero() {
        let items = vec![
            ("a".to_string(), vec![1.0, 0.0]),
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![-1.0, 0.0]),
            ("b".to_string(), vec![-1.0, 0.0]),
        ];
        let (loss, _) = coles_loss(&items, 0.1).unwrap();
        assert!(loss < 0.01, "loss {loss}");
    }

    #[test]
    fn single_client_batch_is_rejected() {
        let items = vec![
            ("a".to_string(), vec![1.0, 0.0]),
            ("a".to_string(), vec![0.0, 1.0]),
        ];
        assert!(coles_loss(&items, 1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let items: Vec<(String, Vec<f64>)> = vec![
            ("a".to_string(), vec![0.3, -0.7, 0.2]),
            ("a".to_string(), vec![0.4, 0.1, -0.5]),
            ("b".to_string(), vec![-0.6, 0.2, 0.9]),
            ("b".to_string(), vec![0.1, 0.8, 0.3]),
        ];
        let tau = 0.5;
        let (_, grads) = coles_loss(&items, tau).unwrap();
        let eps = 1e-5;
        for slot in 0..items.len() {
            for d in 0..3 {
                let mut plus = items.clone();
                plus[slot].1[d] += eps;
                let (fp, _) = coles_loss(&plus, tau).unwrap();
                let mut minus = items.clone();
                minus[slot].1[d] -= eps;
                let (fm, _) = coles_loss(&minus, tau).unwrap();
                let fd = (fp - fm) / (2.0 * eps);
                let an = grads[slot][d];
                let denom = an.abs().max(fd.abs()).max(1e-8);
                assert!(
                    (an - fd).abs() / denom < 1e-4,
                    "slot {slot} dim {d}: analytic {an}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn loss_is_permutation_invariant_bitwise() {
        let items = vec![
            ("a".to_string(), vec![0.3, -0.7, 0.2]),
            ("a".to_string(), vec![0.4, 0.1, -0.5]),
            ("b".to_string(), vec![-0.6, 0.2, 0.9]),
            ("b".to_string(), vec![0.1, 0.8, 0.3]),
        ];
        let (l1, _) = coles_loss(&items, 0.7).unwrap();
        let permuted = vec![
            items[2].clone(),
            items[0].clone(),
            items[3].clone(),
            items[1].clone(),
        ];
        let (l2, _) = coles_loss(&permuted, 0.7).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
    }
}
