//! Deterministic offline stand-ins for the generation and embedding
//! endpoints. The generator fills a fixed behavioral template from the
//! profile; the embedder is signed feature hashing over tokens, so texts
//! sharing tokens land close in cosine space.

use crate::clients::{Description, TextEmbedding};
use crate::error::{Error, Result};
use crate::math::{fnv1a64, l2_norm, mix_seed};
use crate::summarizer::BehaviorProfile;

fn activity_bucket(avg_tx_per_day: f64) -> &'static str {
    if avg_tx_per_day < 1.0 {
        "low"
    } else if avg_tx_per_day < 3.0 {
        "medium"
    } else {
        "high"
    }
}

fn regularity_phrase(share_active_days: f64) -> &'static str {
    if share_active_days < 0.25 {
        "sporadic bursts separated by quiet stretches"
    } else if share_active_days < 0.6 {
        "intermittent activity with gaps between active days"
    } else {
        "consistent near daily activity"
    }
}

fn balance_phrase(profile: &BehaviorProfile) -> &'static str {
    if profile.total_expenses > profile.total_income {
        "expenses exceed income over the period"
    } else if profile.total_income > profile.total_expenses {
        "income exceeds expenses over the period"
    } else {
        "income and expenses are balanced over the period"
    }
}

fn magnitude_word(avg_outgoing: f64) -> &'static str {
    if avg_outgoing < 50.0 {
        "small"
    } else if avg_outgoing < 500.0 {
        "moderate"
    } else if avg_outgoing < 5000.0 {
        "large"
    } else {
        "substantial"
    }
}

fn diversity_phrase(share_top1: f64) -> &'static str {
    if share_top1 >= 0.5 {
        "heavily concentrated in a single category"
    } else if share_top1 >= 0.25 {
        "concentrated in a few categories"
    } else {
        "spread across many categories"
    }
}

fn period_phrase(active_period_days: i64) -> &'static str {
    if active_period_days < 60 {
        "a few weeks"
    } else if active_period_days < 200 {
        "several months"
    } else {
        "about a year or longer"
    }
}

fn amount_word(avg_abs_amount: f64) -> &'static str {
    if avg_abs_amount < 100.0 {
        "small"
    } else if avg_abs_amount < 200.0 {
        "modest"
    } else if avg_abs_amount < 400.0 {
        "sizeable"
    } else {
        "very large"
    }
}

fn incoming_phrase(profile: &BehaviorProfile) -> &'static str {
    // share of incoming events, reconstructed from the profile totals
    let n_in = if profile.avg_incoming > 0.0 {
        (profile.total_income / profile.avg_incoming).round()
    } else {
        0.0
    };
    let share = n_in / profile.n_transactions.max(1) as f64;
    if share < 0.10 {
        "rare"
    } else if share < 0.20 {
        "occasional"
    } else {
        "frequent"
    }
}

/// Renders a deterministic description in the register of a generated
/// behavioral summary. The same (profile, seed) pair always yields the same
/// text; the seed only selects the opening wording.
pub fn mock_generate(profile: &BehaviorProfile, seed: u64) -> Result<Description> {
    let opener = match mix_seed(seed, 0xd35c) % 2 {
        0 => "This user demonstrates",
        _ => "The client shows",
    };
    let top = |i: usize| -> &str {
        profile
            .top_mccs
            .get(i)
            .map(String::as_str)
            .unwrap_or("no further category")
    };
    let text = format!(
        "{opener} a {}-frequency spending pattern with {} over {}. \
         The leading category is {}, with typically {} amounts, and overall spending is {}. \
         Further activity involves {} with {} amounts and {} with {} amounts. \
         Spending is concentrated in {}, {}, and {}; incoming transfers are {}, \
         with typically {} outgoing amounts. Overall, {}.",
        activity_bucket(profile.avg_tx_per_day),
        regularity_phrase(profile.share_active_days),
        period_phrase(profile.active_period_days),
        top(0),
        amount_word(profile.avg_amount_top1),
        diversity_phrase(profile.share_top1),
        top(1),
        amount_word(profile.avg_amount_top2),
        top(2),
        amount_word(profile.avg_amount_top3),
        top(0),
        top(1),
        top(2),
        incoming_phrase(profile),
        magnitude_word(profile.avg_outgoing),
        balance_phrase(profile),
    );
    Description::new(profile.client_id.clone(), text)
}

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Signed feature hashing: every token is hashed (salted by `seed`) to a
/// coordinate in [0, dim) and a sign, signed counts are accumulated and the
/// result is L2-normalized. Deterministic across platforms.
pub fn mock_embed(client_id: &str, text: &str, dim: usize, seed: u64) -> Result<TextEmbedding> {
    if dim < 8 {
        return Err(Error::config("mock_dim", format!("dim must be >= 8, got {dim}")));
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::Degenerate(format!(
            "no tokens to embed for client {client_id}"
        )));
    }
    let mut vector = vec![0.0f64; dim];
    for token in &tokens {
        let h = mix_seed(fnv1a64(token.as_bytes()), seed);
        let idx = ((h >> 1) % dim as u64) as usize;
        let sign = if h & 1 == 1 { 1.0 } else { -1.0 };
        vector[idx] += sign;
    }
    let norm = l2_norm(&vector);
    if norm == 0.0 {
        return Err(Error::Degenerate(format!(
            "token hashes cancelled exactly for client {client_id}"
        )));
    }
    vector.iter_mut().for_each(|v| *v /= norm);
    Ok(TextEmbedding {
        client_id: client_id.to_string(),
        vector,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{cosine, l2_norm};

    fn profile() -> BehaviorProfile {
        BehaviorProfile {
            client_id: "c0".into(),
            n_transactions: 226,
            active_period_days: 444,
            avg_tx_per_day: 0.51,
            avg_interval_days: 1.97,
            top_mccs: vec!["supermarkets".into(), "cash withdrawals".into(), "telecom".into()],
            share_top1: 0.3,
            avg_amount_top1: 2770.47,
            avg_amount_top2: 45969.41,
            avg_amount_top3: 8139.52,
            share_active_days: 0.36,
            total_income: 2_706_553.10,
            total_expenses: 3_956_007.97,
            avg_outgoing: 17_981.85,
            avg_incoming: 451_092.18,
        }
    }

    #[test]
    fn expense_dominated_profile_mentions_imbalance() {
        let d = mock_generate(&profile(), 0).unwrap();
        assert!(d.text.contains("expenses exceed income"), "{}", d.text);
    }

    #[test]
    fn low_frequency_wording_at_half_tx_per_day() {
        let d = mock_generate(&profile(), 0).unwrap();
        assert!(d.text.contains("low-frequency"), "{}", d.text);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = mock_generate(&profile(), 7).unwrap();
        let b = mock_generate(&profile(), 7).unwrap();
        assert_eq!(a, b);
        let c = mock_generate(&profile(), 8).unwrap();
        assert_eq!(a.client_id, c.client_id);
    }

    #[test]
    fn generated_text_mentions_all_top_categories() {
        let d = mock_generate(&profile(), 1).unwrap();
        for name in ["supermarkets", "cash withdrawals", "telecom"] {
            assert!(d.text.contains(name), "missing {name} in {}", d.text);
        }
    }

    #[test]
    fn embed_is_deterministic_unit_norm() {
        let a = mock_embed("c", "alpha beta gamma", 64, 3).unwrap();
        let b = mock_embed("c", "alpha beta gamma", 64, 3).unwrap();
        assert_eq!(a, b);
        assert!((l2_norm(&a.vector) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shared_tokens_raise_cosine() {
        // direct evaluation of the hashing scheme at dim=256, seed=0
        let a = mock_embed("a", "alpha beta gamma", 256, 0).unwrap();
        let b = mock_embed("b", "alpha beta delta", 256, 0).unwrap();
        let c = mock_embed("c", "x y z", 256, 0).unwrap();
        let sim_ab = cosine(&a.vector, &b.vector);
        let sim_ac = cosine(&a.vector, &c.vector);
        assert!(
            sim_ab > sim_ac,
            "expected shared-token cosine {sim_ab} to beat disjoint {sim_ac}"
        );
        assert!(sim_ab > 0.5, "two of three tokens shared: {sim_ab}");
    }

    #[test]
    fn embed_rejects_empty_and_tiny_dims() {
        assert!(mock_embed("c", "...", 64, 0).is_err());
        assert!(mock_embed("c", "text", 4, 0).is_err());
    }

    #[test]
    fn tokenizer_splits_on_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("Hello, World-42!"),
            vec!["hello".to_string(), "world".into(), "42".into()]
        );
    }
}
