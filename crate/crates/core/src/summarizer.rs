//! Behavioral summaries: per-client profile statistics, the prompt templates
//! used to request descriptions (summary form and raw-serialization form),
//! and the flat `agg` baseline feature vector.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::data_model::{distinct_days, EventSequence, SECONDS_PER_DAY};
use crate::error::{Error, Result};

/// Human-readable names for the categorical vocabularies. Synthetic datasets
/// ship generated names ("category_0", "type_0", ...); real datasets supply a
/// CSV mapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryNames {
    pub mcc: Vec<String>,
    pub tx_type: Vec<String>,
}

impl CategoryNames {
    pub fn generated(mcc_vocab: usize, tx_vocab: usize) -> Self {
        CategoryNames {
            mcc: (0..mcc_vocab).map(|i| format!("category_{i}")).collect(),
            tx_type: (0..tx_vocab).map(|i| format!("type_{i}")).collect(),
        }
    }

    pub fn mcc_name(&self, index: usize) -> Result<&str> {
        self.mcc
            .get(index)
            .map(String::as_str)
            .ok_or(Error::UnknownCategory {
                field: "mcc".into(),
                index,
            })
    }

    pub fn tx_name(&self, index: usize) -> &str {
        self.tx_type.get(index).map(String::as_str).unwrap_or("unknown")
    }

    /// Loads an `index,name` CSV for the MCC vocabulary. Transaction-type
    /// names fall back to generated labels unless a second file is given.
    pub fn load_mcc_csv(path: &Path, mcc_vocab: usize, tx_vocab: usize) -> Result<Self> {
        let mut names = Self::generated(mcc_vocab, tx_vocab);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        for (idx, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::ParseRow {
                line: idx + 2,
                message: e.to_string(),
            })?;
            let index: usize = rec
                .get(0)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| Error::ParseRow {
                    line: idx + 2,
                    message: "unparsable index".into(),
                })?;
            let name = rec.get(1).unwrap_or("").trim().to_string();
            if index >= names.mcc.len() {
                names.mcc.resize(index + 1, String::new());
            }
            names.mcc[index] = name;
        }
        Ok(names)
    }

    pub fn save_mcc_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.write_record(["index", "name"])
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        for (i, name) in self.mcc.iter().enumerate() {
            w.write_record([i.to_string().as_str(), name])
                .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Summary feature vector for one client, mirroring the prompt's bullet list.
/// Monetary fields are in major currency units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub client_id: String,
    pub n_transactions: usize,
    /// Whole calendar days between the first and last event.
    pub active_period_days: i64,
    pub avg_tx_per_day: f64,
    pub avg_interval_days: f64,
    /// Up to three category names, ranked by descending frequency
    /// (ties broken by ascending code).
    pub top_mccs: Vec<String>,
    pub share_top1: f64,
    pub avg_amount_top1: f64,
    pub avg_amount_top2: f64,
    pub avg_amount_top3: f64,
    pub share_active_days: f64,
    pub total_income: f64,
    pub total_expenses: f64,
    pub avg_outgoing: f64,
    pub avg_incoming: f64,
}

/// Computes the behavioral profile of one sequence. The events are re-sorted
/// internally, so the result does not depend on input order.
pub fn compute_profile(seq: &EventSequence, names: &CategoryNames) -> Result<BehaviorProfile> {
    if seq.is_empty() {
        return Err(Error::Degenerate(format!(
            "client {} has an empty sequence",
            seq.client_id
        )));
    }
    let mut events = seq.events.clone();
    events.sort_by_key(|e| e.timestamp);

    let n = events.len();
    let first_day = events[0].timestamp.div_euclid(SECONDS_PER_DAY);
    let last_day = events[n - 1].timestamp.div_euclid(SECONDS_PER_DAY);
    let active_period_days = last_day - first_day;
    let avg_tx_per_day = n as f64 / (active_period_days.max(1)) as f64;
    let avg_interval_days = if n >= 2 {
        active_period_days as f64 / (n - 1) as f64
    } else {
        0.0
    };
    let share_active_days = distinct_days(&events) as f64 / (active_period_days + 1) as f64;

    // frequency ranking over merchant categories
    let mut counts: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for ev in &events {
        let entry = counts.entry(ev.mcc).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += ev.amount_major().abs();
    }
    let mut ranked: Vec<(usize, usize, f64)> = counts
        .into_iter()
        .map(|(mcc, (count, total_abs))| (mcc, count, total_abs))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut top_mccs = Vec::new();
    let mut top_avg = [0.0f64; 3];
    for (slot, &(mcc, count, total_abs)) in ranked.iter().take(3).enumerate() {
        top_mccs.push(names.mcc_name(mcc)?.to_string());
        top_avg[slot] = total_abs / count as f64;
    }
    let share_top1 = ranked.first().map_or(0.0, |&(_, c, _)| c as f64 / n as f64);

    let mut total_income = 0.0;
    let mut total_expenses = 0.0;
    let mut n_in = 0usize;
    let mut n_out = 0usize;
    for ev in &events {
        let major = ev.amount_major();
        if major >= 0.0 {
            total_income += major;
            n_in += 1;
        } else {
            total_expenses += -major;
            n_out += 1;
        }
    }
    let avg_incoming = if n_in > 0 { total_income / n_in as f64 } else { 0.0 };
    let avg_outgoing = if n_out > 0 { total_expenses / n_out as f64 } else { 0.0 };

    Ok(BehaviorProfile {
        client_id: seq.client_id.clone(),
        n_transactions: n,
        active_period_days,
        avg_tx_per_day,
        avg_interval_days,
        top_mccs,
        share_top1,
        avg_amount_top1: top_avg[0],
        avg_amount_top2: top_avg[1],
        avg_amount_top3: top_avg[2],
        share_active_days,
        total_income,
        total_expenses,
        avg_outgoing,
        avg_incoming,
    })
}

/// "1234567.89" -> "1,234,567.89"
pub fn format_thousands(value: f64) -> String {
    let raw = format!("{value:.2}");
    let (int_part, frac_part) = raw.split_once('.').expect("two decimals");
    let (sign, digits) = match int_part.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", int_part),
    };
    let mut grouped = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    format!("{sign}{grouped}.{frac_part}")
}

const SYSTEM_PREAMBLE: &str = "You are an expert in financial transaction analysis. Your task is to generate clear, structured, and concise descriptions of user financial behavior based on given transaction data. Use data-driven insights and avoid speculation.

Guidelines:
- Do not include phrases like \"Here's a financial behavior description for User X\"
- Start directly with behavioral insights
- Interpret numbers into patterns (e.g., burst spending, routine payments)
- Highlight spending habits, risk factors, financial consistency
- Avoid unsupported assumptions; maintain clarity and conciseness";

const INSTRUCTIONS: &str = "Instructions:
- Analyze behavioral patterns
- Identify transaction regularity and category reliance
- Assess potential risk factors and financial planning traits
- Write in a structured and engaging way while staying factual";

/// Marker line that opens the user half of a rendered prompt; chat clients
/// split on it to build the (system, user) message pair.
pub const USER_BLOCK_MARKER: &str = "Below is a summary of a user's transaction history:";
const RAW_BLOCK_MARKER: &str = "Below is the user's recent transaction history, one transaction per line:";

/// Renders the statistics-summary prompt. Output is deterministic; monetary
/// totals use comma-grouped two-decimal formatting, per-category averages and
/// ratios plain two-decimal formatting.
pub fn render_prompt(profile: &BehaviorProfile, currency: &str) -> String {
    let bullets = [
        format!("- Number of transactions: {}", profile.n_transactions),
        format!("- Active transaction period: {} days", profile.active_period_days),
        format!("- Avg transactions per day: {:.2}", profile.avg_tx_per_day),
        format!("- Avg transaction interval: {:.2} days", profile.avg_interval_days),
        format!("- Top MCCs: {}", profile.top_mccs.join(", ")),
        format!("- Share of transactions in Top 1 MCC: {:.2}", profile.share_top1),
        format!("- Avg amount for Top 1 MCC: {:.2} {currency}", profile.avg_amount_top1),
        format!("- Avg amount for Top 2 MCC: {:.2} {currency}", profile.avg_amount_top2),
        format!("- Avg amount for Top 3 MCC: {:.2} {currency}", profile.avg_amount_top3),
        format!("- Share of days with transactions: {:.2}", profile.share_active_days),
        format!("- Total income: {} {currency}", format_thousands(profile.total_income)),
        format!("- Total expenses: {} {currency}", format_thousands(profile.total_expenses)),
        format!("- Avg outgoing amount: {} {currency}", format_thousands(profile.avg_outgoing)),
        format!("- Avg incoming amount: {} {currency}", format_thousands(profile.avg_incoming)),
    ];
    format!(
        "{SYSTEM_PREAMBLE}\n\n{USER_BLOCK_MARKER}\n{}\n\n{INSTRUCTIONS}\n",
        bullets.join("\n")
    )
}

/// Renders the raw-serialization ablation prompt: the most recent
/// `max_events` events, one per line, wrapped in the same system preamble.
pub fn render_raw_prompt(seq: &EventSequence, names: &CategoryNames, max_events: usize) -> String {
    let start = seq.events.len().saturating_sub(max_events);
    let lines: Vec<String> = seq.events[start..]
        .iter()
        .map(|ev| {
            let when = DateTime::from_timestamp(ev.timestamp, 0)
                .map(|dt| dt.format("%Y-%m-%d %H:%M:%S").to_string())
                .unwrap_or_else(|| ev.timestamp.to_string());
            format!(
                "{when} | {} | {} | {:.2}",
                names.mcc.get(ev.mcc).map(String::as_str).unwrap_or("unknown"),
                names.tx_name(ev.tx_type),
                ev.amount_major()
            )
        })
        .collect();
    format!(
        "{SYSTEM_PREAMBLE}\n\n{RAW_BLOCK_MARKER}\n{}\n\n{INSTRUCTIONS}\n",
        lines.join("\n")
    )
}

/// Splits a rendered prompt into (system, user) chat messages. Text before
/// the user-block marker is the system message; everything from the marker on
/// is the user message. Prompts without a marker become a single user message.
pub fn split_prompt(prompt: &str) -> (String, String) {
    for marker in [USER_BLOCK_MARKER, RAW_BLOCK_MARKER] {
        if let Some(pos) = prompt.find(marker) {
            return (
                prompt[..pos].trim_end().to_string(),
                prompt[pos..].trim_end().to_string(),
            );
        }
    }
    (String::new(), prompt.trim_end().to_string())
}

/// Flat aggregate feature vector: mean/std/min/max of signed amounts and of
/// inter-event gaps (days), then normalized frequency histograms over the
/// full MCC and transaction-type vocabularies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggFeatures {
    pub client_id: String,
    pub values: Vec<f64>,
}

pub const AGG_NUMERIC_DIMS: usize = 8;

pub fn agg_dim(mcc_vocab: usize, tx_vocab: usize) -> usize {
    AGG_NUMERIC_DIMS + mcc_vocab + tx_vocab
}

fn moments(values: &[f64]) -> [f64; 4] {
    if values.is_empty() {
        return [0.0; 4];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [mean, var.sqrt(), min, max]
}

/// Computes the aggregate baseline features. Uses population standard
/// deviation and zero-fills unseen categories, so dimensionality depends only
/// on the vocabulary sizes.
pub fn agg_features(seq: &EventSequence, mcc_vocab: usize, tx_vocab: usize) -> Result<AggFeatures> {
    if seq.is_empty() {
        return Err(Error::Degenerate(format!(
            "client {} has an empty sequence",
            seq.client_id
        )));
    }
    let mut events = seq.events.clone();
    events.sort_by_key(|e| e.timestamp);

    let amounts: Vec<f64> = events.iter().map(|e| e.amount_major()).collect();
    let gaps: Vec<f64> = events
        .windows(2)
        .map(|w| (w[1].timestamp - w[0].timestamp) as f64 / SECONDS_PER_DAY as f64)
        .collect();

    let mut values = Vec::with_capacity(agg_dim(mcc_vocab, tx_vocab));
    values.extend_from_slice(&moments(&amounts));
    values.extend_from_slice(&moments(&gaps));

    let mut mcc_hist = vec![0.0f64; mcc_vocab];
    let mut tx_hist = vec![0.0f64; tx_vocab];
    for ev in &events {
        if ev.mcc >= mcc_vocab {
            return Err(Error::UnknownCategory {
                field: "mcc".into(),
                index: ev.mcc,
            });
        }
        if ev.tx_type >= tx_vocab {
            return Err(Error::UnknownCategory {
                field: "tx_type".into(),
                index: ev.tx_type,
            });
        }
        mcc_hist[ev.mcc] += 1.0;
        tx_hist[ev.tx_type] += 1.0;
    }
    let n = events.len() as f64;
    mcc_hist.iter_mut().for_each(|v| *v /= n);
    tx_hist.iter_mut().for_each(|v| *v /= n);
    values.extend_from_slice(&mcc_hist);
    values.extend_from_slice(&tx_hist);

    Ok(AggFeatures {
        client_id: seq.client_id.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::EventRecord;

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

    fn names() -> CategoryNames {
        CategoryNames::generated(8, 4)
    }

    #[test]
    fn profile_matches_published_rates() {
        // 226 events spread over exactly 444 calendar days
        let mut events = Vec::new();
        for i in 0..226i64 {
            let day = i * 444 / 225;
            events.push((day * SECONDS_PER_DAY + 3600, -1000, (i % 5) as usize, 0));
        }
        let profile = compute_profile(&seq(events), &names()).unwrap();
        assert_eq!(profile.active_period_days, 444);
        assert!((profile.avg_tx_per_day - 0.51).abs() < 0.005, "{}", profile.avg_tx_per_day);
        assert!((profile.avg_interval_days - 1.97).abs() < 0.01, "{}", profile.avg_interval_days);
    }

    #[test]
    fn single_event_profile_is_defined() {
        let profile = compute_profile(&seq(vec![(1000, 500, 2, 1)]), &names()).unwrap();
        assert_eq!(profile.active_period_days, 0);
        assert_eq!(profile.avg_interval_days, 0.0);
        assert_eq!(profile.share_active_days, 1.0);
        assert_eq!(profile.n_transactions, 1);
        assert_eq!(profile.top_mccs, vec!["category_2".to_string()]);
    }

    #[test]
    fn income_and_expense_totals() {
        let profile = compute_profile(
            &seq(vec![(100, 10_000, 0, 0), (200, -5_000, 1, 0)]),
            &names(),
        )
        .unwrap();
        assert_eq!(profile.total_income, 100.0);
        assert_eq!(profile.total_expenses, 50.0);
        assert_eq!(profile.share_active_days, 1.0);
        assert_eq!(profile.avg_incoming, 100.0);
        assert_eq!(profile.avg_outgoing, 50.0);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        assert!(compute_profile(&seq(vec![]), &names()).is_err());
    }

    #[test]
    fn unknown_mcc_is_an_error() {
        let err = compute_profile(&seq(vec![(0, 100, 99, 0)]), &names()).unwrap_err();
        match err {
            Error::UnknownCategory { index, .. } => assert_eq!(index, 99),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn profile_is_permutation_invariant() {
        let a = seq(vec![(300, -100, 1, 0), (100, 200, 2, 1), (200, -300, 1, 1)]);
        let mut b = a.clone();
        b.events.reverse();
        assert_eq!(
            compute_profile(&a, &names()).unwrap(),
            compute_profile(&b, &names()).unwrap()
        );
    }

    #[test]
    fn top_mcc_ties_break_by_ascending_code() {
        let profile = compute_profile(
            &seq(vec![(0, -100, 5, 0), (1, -100, 3, 0), (2, -100, 5, 0), (3, -100, 3, 0)]),
            &names(),
        )
        .unwrap();
        assert_eq!(profile.top_mccs[0], "category_3");
        assert_eq!(profile.top_mccs[1], "category_5");
        assert_eq!(profile.share_top1, 0.5);
    }

    #[test]
    fn share_top1_equals_brute_force_count() {
        let s = seq(vec![
            (0, -100, 1, 0),
            (1, -100, 1, 0),
            (2, -100, 2, 0),
            (3, -100, 3, 0),
            (4, -100, 1, 1),
        ]);
        let profile = compute_profile(&s, &names()).unwrap();
        let brute = s
            .events
            .iter()
            .filter(|e| e.mcc == 1)
            .count() as f64
            / s.events.len() as f64;
        assert_eq!(profile.share_top1, brute);
    }

    #[test]
    fn thousands_formatting() {
        assert_eq!(format_thousands(2_706_553.1), "2,706,553.10");
        assert_eq!(format_thousands(0.0), "0.00");
        assert_eq!(format_thousands(-1234.5), "-1,234.50");
        assert_eq!(format_thousands(999.99), "999.99");
    }

    fn table_profile() -> BehaviorProfile {
        BehaviorProfile {
            client_id: "u".into(),
            n_transactions: 226,
            active_period_days: 444,
            avg_tx_per_day: 0.51,
            avg_interval_days: 1.97,
            top_mccs: vec![
                "Supermarkets".into(),
                "cash withdrawals".into(),
                "telecommunications".into(),
            ],
            share_top1: 0.04,
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
    fn prompt_reproduces_reference_lines() {
        let prompt = render_prompt(&table_profile(), "RUB");
        for line in [
            "- Number of transactions: 226",
            "- Active transaction period: 444 days",
            "- Avg transactions per day: 0.51",
            "- Avg transaction interval: 1.97 days",
            "- Top MCCs: Supermarkets, cash withdrawals, telecommunications",
            "- Share of transactions in Top 1 MCC: 0.04",
            "- Avg amount for Top 1 MCC: 2770.47 RUB",
            "- Avg amount for Top 2 MCC: 45969.41 RUB",
            "- Avg amount for Top 3 MCC: 8139.52 RUB",
            "- Share of days with transactions: 0.36",
            "- Total income: 2,706,553.10 RUB",
            "- Total expenses: 3,956,007.97 RUB",
            "- Avg outgoing amount: 17,981.85 RUB",
            "- Avg incoming amount: 451,092.18 RUB",
        ] {
            assert!(prompt.contains(line), "missing line {line:?}");
        }
        assert!(prompt.starts_with("You are an expert in financial transaction analysis."));
    }

    #[test]
    fn prompt_has_all_bullets_in_order() {
        let prompt = render_prompt(&table_profile(), "RUB");
        let keys = [
            "- Number of transactions:",
            "- Active transaction period:",
            "- Avg transactions per day:",
            "- Avg transaction interval:",
            "- Top MCCs:",
            "- Share of transactions in Top 1 MCC:",
            "- Avg amount for Top 1 MCC:",
            "- Avg amount for Top 2 MCC:",
            "- Avg amount for Top 3 MCC:",
            "- Share of days with transactions:",
            "- Total income:",
            "- Total expenses:",
            "- Avg outgoing amount:",
            "- Avg incoming amount:",
        ];
        let mut cursor = 0;
        for key in keys {
            let pos = prompt[cursor..]
                .find(key)
                .unwrap_or_else(|| panic!("bullet {key:?} missing or out of order"));
            cursor += pos + key.len();
        }
    }

    #[test]
    fn prompt_is_deterministic_and_handles_zero_income() {
        let mut profile = table_profile();
        profile.total_income = 0.0;
        let a = render_prompt(&profile, "RUB");
        let b = render_prompt(&profile, "RUB");
        assert_eq!(a, b);
        assert!(a.contains("- Total income: 0.00 RUB"));
    }

    #[test]
    fn prompt_splits_into_system_and_user() {
        let prompt = render_prompt(&table_profile(), "RUB");
        let (system, user) = split_prompt(&prompt);
        assert!(system.starts_with("You are an expert"));
        assert!(system.contains("Guidelines:"));
        assert!(user.starts_with(USER_BLOCK_MARKER));
        assert!(user.contains("Instructions:"));
    }

    #[test]
    fn raw_prompt_line_counts_and_truncation() {
        let three = seq(vec![(0, -100, 1, 0), (SECONDS_PER_DAY, 250, 2, 1), (2 * SECONDS_PER_DAY, -50, 3, 2)]);
        let text = render_raw_prompt(&three, &names(), 10);
        let body: Vec<&str> = text.lines().filter(|l| l.contains(" | ")).collect();
        assert_eq!(body.len(), 3);
        assert!(body[1].contains("category_2 | type_1 | 2.50"));

        let mut many = Vec::new();
        for i in 0..500i64 {
            many.push((i * 1000, -100, (i % 4) as usize, 0));
        }
        let long = seq(many);
        let text = render_raw_prompt(&long, &names(), 100);
        let body: Vec<&str> = text.lines().filter(|l| l.contains(" | ")).collect();
        assert_eq!(body.len(), 100);
        // truncation keeps the most recent events: the last line is event 499
        let expected_last = DateTime::from_timestamp(499 * 1000, 0)
            .unwrap()
            .format("%Y-%m-%d %H:%M:%S")
            .to_string();
        assert!(body[99].starts_with(&expected_last));
        assert_eq!(text, render_raw_prompt(&long, &names(), 100));
    }

    #[test]
    fn agg_constant_amounts_have_zero_std() {
        let s = seq(vec![(0, 500, 0, 0), (10, 500, 1, 1), (20, 500, 2, 0)]);
        let f = agg_features(&s, 8, 4).unwrap();
        assert_eq!(f.values[0], 5.0); // mean
        assert_eq!(f.values[1], 0.0); // std
    }

    #[test]
    fn agg_single_event_histogram_is_one_hot() {
        let f = agg_features(&seq(vec![(0, -100, 2, 0)]), 4, 2).unwrap();
        let mcc_hist = &f.values[AGG_NUMERIC_DIMS..AGG_NUMERIC_DIMS + 4];
        assert_eq!(mcc_hist, &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn agg_population_statistics_oracle() {
        // amounts {-10, +10}: mean 0, std 10, min -10, max 10
        let f = agg_features(&seq(vec![(0, -1000, 0, 0), (10, 1000, 1, 1)]), 8, 4).unwrap();
        assert_eq!(f.values[0], 0.0);
        assert_eq!(f.values[1], 10.0);
        assert_eq!(f.values[2], -10.0);
        assert_eq!(f.values[3], 10.0);
    }

    #[test]
    fn agg_histograms_sum_to_one_and_dim_is_fixed() {
        let s = seq(vec![(0, -100, 1, 0), (5, 300, 2, 1), (9, -100, 1, 3)]);
        let f = agg_features(&s, 8, 4).unwrap();
        assert_eq!(f.values.len(), agg_dim(8, 4));
        let mcc_sum: f64 = f.values[AGG_NUMERIC_DIMS..AGG_NUMERIC_DIMS + 8].iter().sum();
        let tx_sum: f64 = f.values[AGG_NUMERIC_DIMS + 8..].iter().sum();
        assert!((mcc_sum - 1.0).abs() < 1e-12);
        assert!((tx_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn income_minus_expenses_equals_signed_sum() {
        let ds = crate::data_model::generate_synthetic(30, 5, &Default::default()).unwrap();
        let names = CategoryNames::generated(ds.mcc_vocab(), ds.tx_vocab());
        for s in &ds.sequences {
            let profile = compute_profile(s, &names).unwrap();
            let signed: f64 = s.events.iter().map(|e| e.amount_major()).sum();
            assert!(
                (profile.total_income - profile.total_expenses - signed).abs() < 1e-9,
                "client {}",
                s.client_id
            );
        }
    }
}
