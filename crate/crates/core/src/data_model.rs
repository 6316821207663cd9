//! Event records, client sequences, dataset loading/splitting, and a
//! synthetic generator with a planted label signal for desk-scale runs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::mix_seed;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// One transaction. Amounts are stored in minor currency units
/// (positive = incoming, negative = outgoing); categorical attributes are
/// vocabulary indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub timestamp: i64,
    pub amount_minor: i64,
    pub mcc: usize,
    pub tx_type: usize,
}

impl EventRecord {
    /// Amount in major units (e.g. rubles rather than kopecks).
    pub fn amount_major(&self) -> f64 {
        self.amount_minor as f64 / 100.0
    }
}

/// A client's time-ordered transaction history plus an optional class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub client_id: String,
    pub events: Vec<EventRecord>,
    pub label: Option<i64>,
}

impl EventSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp)
    }

    /// Contiguous sub-sequence [start, start+len); keeps id and label.
    pub fn slice(&self, start: usize, len: usize) -> EventSequence {
        EventSequence {
            client_id: self.client_id.clone(),
            events: self.events[start..start + len].to_vec(),
            label: self.label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    TrainLabeled,
    TrainUnlabeled,
    Holdout,
}

/// A full dataset: sequences sorted by client id, categorical vocabulary
/// sizes, and a per-client split tag aligned with `sequences`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub sequences: Vec<EventSequence>,
    pub vocab_sizes: BTreeMap<String, usize>,
    pub splits: Vec<SplitTag>,
}

impl Dataset {
    pub fn mcc_vocab(&self) -> usize {
        *self.vocab_sizes.get("mcc").unwrap_or(&0)
    }

    pub fn tx_vocab(&self) -> usize {
        *self.vocab_sizes.get("tx_type").unwrap_or(&0)
    }

    pub fn n_clients(&self) -> usize {
        self.sequences.len()
    }

    pub fn indices_with_tag(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.sequences.len()).filter(|&i| self.splits[i] == tag).collect()
    }

    pub fn labeled_train_indices(&self) -> Vec<usize> {
        self.indices_with_tag(SplitTag::TrainLabeled)
    }

    pub fn holdout_indices(&self) -> Vec<usize> {
        self.indices_with_tag(SplitTag::Holdout)
    }

    pub fn find_client(&self, client_id: &str) -> Option<usize> {
        self.sequences
            .binary_search_by(|s| s.client_id.as_str().cmp(client_id))
            .ok()
    }

    fn derive_splits(sequences: &[EventSequence]) -> Vec<SplitTag> {
        sequences
            .iter()
            .map(|s| {
                if s.label.is_some() {
                    SplitTag::TrainLabeled
                } else {
                    SplitTag::TrainUnlabeled
                }
            })
            .collect()
    }
}

/// Column-name mapping for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSchema {
    pub client_id: String,
    pub timestamp: String,
    pub amount: String,
    pub mcc: String,
    pub tx_type: String,
    pub label: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            client_id: "client_id".into(),
            timestamp: "timestamp".into(),
            amount: "amount".into(),
            mcc: "mcc".into(),
            tx_type: "tx_type".into(),
            label: "label".into(),
        }
    }
}

impl CsvSchema {
    /// Parses `key=col,key=col` overrides as accepted by the `--schema` flag.
    pub fn apply_overrides(&mut self, spec: &str) -> Result<()> {
        for part in spec.split(',').filter(|p| !p.is_empty()) {
            let (key, col) = part
                .split_once('=')
                .ok_or_else(|| Error::config("schema", format!("expected key=column, got `{part}`")))?;
            match key.trim() {
                "client_id" => self.client_id = col.trim().to_string(),
                "timestamp" => self.timestamp = col.trim().to_string(),
                "amount" => self.amount = col.trim().to_string(),
                "mcc" => self.mcc = col.trim().to_string(),
                "tx_type" => self.tx_type = col.trim().to_string(),
                "label" => self.label = col.trim().to_string(),
                other => {
                    return Err(Error::config("schema", format!("unknown field `{other}`")));
                }
            }
        }
        Ok(())
    }
}

/// Parses a decimal amount string ("-123.45") into minor units, admitting at
/// most two fraction digits so that round-trips are exact.
pub fn parse_amount_minor(s: &str) -> std::result::Result<i64, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty amount".into());
    }
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1i64, rest),
        None => (1i64, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(format!("unparsable amount `{s}`"));
    }
    if frac_part.len() > 2 {
        return Err(format!("amount `{s}` has more than 2 fraction digits"));
    }
    let int_val: i64 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().map_err(|_| format!("unparsable amount `{s}`"))?
    };
    let frac_val: i64 = if frac_part.is_empty() {
        0
    } else {
        let padded = format!("{frac_part:0<2}");
        padded.parse().map_err(|_| format!("unparsable amount `{s}`"))?
    };
    Ok(sign * (int_val * 100 + frac_val))
}

/// Canonical decimal rendering of minor units ("-123.45").
pub fn format_amount_minor(minor: i64) -> String {
    let sign = if minor < 0 { "-" } else { "" };
    let abs = minor.unsigned_abs();
    format!("{sign}{}.{:02}", abs / 100, abs % 100)
}

/// Loads a CSV of transactions, grouping rows by client and sorting each
/// group by timestamp. Vocabulary sizes are the largest observed index + 1.
/// Clients come out in lexicographic id order.
pub fn load_dataset(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let c_client = col(&schema.client_id)?;
    let c_ts = col(&schema.timestamp)?;
    let c_amount = col(&schema.amount)?;
    let c_mcc = col(&schema.mcc)?;
    let c_tx = col(&schema.tx_type)?;
    let c_label = headers.iter().position(|h| h == schema.label);

    let mut groups: BTreeMap<String, (Vec<EventRecord>, Option<i64>)> = BTreeMap::new();
    let mut max_mcc = 0usize;
    let mut max_tx = 0usize;
    let mut n_rows = 0usize;

    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record.map_err(|e| Error::ParseRow {
            line,
            message: e.to_string(),
        })?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let parse_err = |message: String| Error::ParseRow { line, message };

        let client_id = field(c_client).to_string();
        if client_id.is_empty() {
            return Err(parse_err("empty client_id".into()));
        }
        let timestamp: i64 = field(c_ts)
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("unparsable timestamp `{}`", field(c_ts))))?;
        if timestamp < 0 {
            return Err(parse_err(format!("negative timestamp {timestamp}")));
        }
        let amount_minor = parse_amount_minor(field(c_amount)).map_err(parse_err)?;
        let mcc: usize = field(c_mcc)
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("unparsable mcc `{}`", field(c_mcc))))?;
        let tx_type: usize = field(c_tx)
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("unparsable tx_type `{}`", field(c_tx))))?;
        max_mcc = max_mcc.max(mcc);
        max_tx = max_tx.max(tx_type);

        let label = match c_label {
            Some(c) => {
                let raw = field(c).trim();
                if raw.is_empty() {
                    None
                } else {
                    Some(
                        raw.parse::<i64>()
                            .map_err(|_| parse_err(format!("unparsable label `{raw}`")))?,
                    )
                }
            }
            None => None,
        };

        let entry = groups.entry(client_id).or_insert_with(|| (Vec::new(), None));
        entry.0.push(EventRecord {
            timestamp,
            amount_minor,
            mcc,
            tx_type,
        });
        if label.is_some() {
            entry.1 = label;
        }
        n_rows += 1;
    }

    if n_rows == 0 {
        return Err(Error::EmptyInput(format!("{} has no data rows", path.display())));
    }

    let sequences: Vec<EventSequence> = groups
        .into_iter()
        .map(|(client_id, (mut events, label))| {
            events.sort_by_key(|e| e.timestamp);
            EventSequence {
                client_id,
                events,
                label,
            }
        })
        .collect();

    let mut vocab_sizes = BTreeMap::new();
    vocab_sizes.insert("mcc".to_string(), max_mcc + 1);
    vocab_sizes.insert("tx_type".to_string(), max_tx + 1);
    let splits = Dataset::derive_splits(&sequences);

    Ok(Dataset {
        sequences,
        vocab_sizes,
        splits,
    })
}

/// Writes the dataset back to CSV in canonical column order, sorted by
/// (client_id, timestamp). Loading the result reproduces the dataset.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    w.write_record(["client_id", "timestamp", "amount", "mcc", "tx_type", "label"])
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for seq in &dataset.sequences {
        let label = seq.label.map(|l| l.to_string()).unwrap_or_default();
        for ev in &seq.events {
            w.write_record([
                seq.client_id.as_str(),
                &ev.timestamp.to_string(),
                &format_amount_minor(ev.amount_minor),
                &ev.mcc.to_string(),
                &ev.tx_type.to_string(),
                &label,
            ])
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Retags `floor(holdout_frac · n_labeled)` labeled clients as holdout.
/// Selection is a seeded shuffle of the sorted labeled ids, so the same
/// (dataset, frac, seed) always produces the same holdout set. Unlabeled
/// clients are never selected.
pub fn split_holdout(dataset: &mut Dataset, holdout_frac: f64, seed: u64) -> Result<()> {
    if !(holdout_frac > 0.0 && holdout_frac < 1.0) {
        return Err(Error::config(
            "holdout_frac",
            format!("must be in (0, 1), got {holdout_frac}"),
        ));
    }
    // reset any previous holdout tags before re-splitting
    for (i, seq) in dataset.sequences.iter().enumerate() {
        dataset.splits[i] = if seq.label.is_some() {
            SplitTag::TrainLabeled
        } else {
            SplitTag::TrainUnlabeled
        };
    }
    let mut labeled: Vec<usize> = (0..dataset.sequences.len())
        .filter(|&i| dataset.sequences[i].label.is_some())
        .collect();
    let min_needed = (1.0 / holdout_frac).ceil() as usize;
    if labeled.len() < min_needed {
        return Err(Error::Invalid(format!(
            "need at least {min_needed} labeled clients for holdout_frac {holdout_frac}, have {}",
            labeled.len()
        )));
    }
    let n_holdout = (holdout_frac * labeled.len() as f64).floor() as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0x5b11));
    labeled.shuffle(&mut rng);
    for &i in labeled.iter().take(n_holdout) {
        dataset.splits[i] = SplitTag::Holdout;
    }
    Ok(())
}

/// Shape of the synthetic generator. The label plants a signal by shifting
/// each client's merchant-category distribution and mean amount.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub mcc_vocab: usize,
    pub tx_vocab: usize,
    pub min_events: usize,
    pub max_events: usize,
    /// Strength of the planted label signal, in [0, 1].
    pub signal_strength: f64,
    /// Fraction of clients whose label is withheld (train-unlabeled).
    pub unlabeled_frac: f64,
    /// Concentration of per-client category preferences; lower = spikier.
    pub mcc_concentration: f64,
    /// First possible event timestamp (seconds since epoch).
    pub start_epoch: i64,
    /// Mean gap between consecutive events, in hours.
    pub mean_gap_hours: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            mcc_vocab: 40,
            tx_vocab: 8,
            min_events: 20,
            max_events: 80,
            signal_strength: 0.6,
            unlabeled_frac: 0.0,
            mcc_concentration: 4.0,
            start_epoch: 1_600_000_000,
            mean_gap_hours: 30.0,
        }
    }
}

fn sample_dirichlet(rng: &mut ChaCha12Rng, alphas: &[f64]) -> Vec<f64> {
    let mut draws: Vec<f64> = alphas
        .iter()
        .map(|&a| {
            if a <= 0.0 {
                0.0
            } else {
                Gamma::new(a, 1.0).expect("valid gamma shape").sample(rng)
            }
        })
        .collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 {
        // all-zero corner: fall back to uniform over positive alphas
        let k = alphas.iter().filter(|&&a| a > 0.0).count().max(1);
        for (d, &a) in draws.iter_mut().zip(alphas) {
            *d = if a > 0.0 { 1.0 / k as f64 } else { 0.0 };
        }
    } else {
        for d in &mut draws {
            *d /= total;
        }
    }
    draws
}

fn sample_categorical(rng: &mut ChaCha12Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut t = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        t -= w;
        if t <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Generates a labeled synthetic dataset. Class 0 prefers the lower half of
/// the MCC vocabulary, class 1 the upper half; `signal_strength` interpolates
/// between a shared uniform distribution (0) and fully disjoint supports (1),
/// and also shifts the outgoing-amount scale between classes. Identical
/// (n_clients, seed, config) inputs produce an identical dataset.
pub fn generate_synthetic(n_clients: usize, seed: u64, config: &SyntheticConfig) -> Result<Dataset> {
    let s = config.signal_strength;
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::config(
            "synthetic.signal_strength",
            format!("must be in [0, 1], got {s}"),
        ));
    }
    if n_clients < 2 {
        return Err(Error::config("synthetic.n_clients", "need at least 2 clients"));
    }
    if config.min_events == 0 || config.min_events > config.max_events {
        return Err(Error::config(
            "synthetic.min_events",
            "need 1 <= min_events <= max_events",
        ));
    }
    let k = config.mcc_vocab;
    if k < 4 || config.tx_vocab < 2 {
        return Err(Error::config("synthetic.mcc_vocab", "vocabulary too small"));
    }

    let half = k / 2;
    let width = 5 + (n_clients as f64).log10().ceil() as usize;
    let mut sequences = Vec::with_capacity(n_clients);

    for idx in 0..n_clients {
        let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0xc11e_0000 + idx as u64));
        let label = (rng.gen::<f64>() < 0.5) as i64;

        // class-conditional MCC base: signal interpolates uniform -> disjoint halves
        let class_range = if label == 0 { 0..half } else { half..k };
        let mut base = vec![(1.0 - s) / k as f64; k];
        for j in class_range.clone() {
            base[j] += s / class_range.len() as f64;
        }
        let alphas: Vec<f64> = base
            .iter()
            .map(|&b| b * config.mcc_concentration * k as f64 / 4.0)
            .collect();
        let mcc_prefs = sample_dirichlet(&mut rng, &alphas);

        let tx_alphas = vec![2.0; config.tx_vocab];
        let tx_prefs = sample_dirichlet(&mut rng, &tx_alphas);

        // per-client tempo and spending scale; label shifts the outgoing scale
        let gap_scale = LogNormal::new(0.0, 0.6).unwrap().sample(&mut rng);
        let amount_mu = 4.0 + 0.8 * rng.gen::<f64>() + s * 0.8 * label as f64;
        let amount_sigma = 0.9;
        let incoming_prob = 0.15;

        let n_events = rng.gen_range(config.min_events..=config.max_events);
        let mut t = config.start_epoch + rng.gen_range(0..SECONDS_PER_DAY);
        let mut events = Vec::with_capacity(n_events);
        for _ in 0..n_events {
            let gap_hours = -config.mean_gap_hours * gap_scale * (1.0 - rng.gen::<f64>()).ln();
            t += (gap_hours * 3600.0).max(60.0) as i64;
            let mcc = sample_categorical(&mut rng, &mcc_prefs);
            let tx_type = sample_categorical(&mut rng, &tx_prefs);
            let magnitude = LogNormal::new(amount_mu, amount_sigma).unwrap().sample(&mut rng);
            let incoming = rng.gen::<f64>() < incoming_prob;
            let major = if incoming { magnitude * 6.0 } else { -magnitude };
            let amount_minor = (major * 100.0).round().clamp(-9e14, 9e14) as i64;
            events.push(EventRecord {
                timestamp: t,
                amount_minor: if amount_minor == 0 { -100 } else { amount_minor },
                mcc,
                tx_type,
            });
        }

        let keep_label = rng.gen::<f64>() >= config.unlabeled_frac;
        sequences.push(EventSequence {
            client_id: format!("c{idx:0width$}"),
            events,
            label: keep_label.then_some(label),
        });
    }

    sequences.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    let mut vocab_sizes = BTreeMap::new();
    vocab_sizes.insert("mcc".to_string(), k);
    vocab_sizes.insert("tx_type".to_string(), config.tx_vocab);
    let splits = Dataset::derive_splits(&sequences);

    Ok(Dataset {
        sequences,
        vocab_sizes,
        splits,
    })
}

/// Summary written alongside a dataset: counts, vocabularies and split tags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_clients: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_holdout: usize,
    pub vocab_sizes: BTreeMap<String, usize>,
    pub currency: String,
    pub split_tags: BTreeMap<String, SplitTag>,
}

impl DatasetManifest {
    pub fn from_dataset(dataset: &Dataset, currency: &str) -> Self {
        let mut split_tags = BTreeMap::new();
        let mut n_labeled = 0;
        let mut n_unlabeled = 0;
        let mut n_holdout = 0;
        for (seq, &tag) in dataset.sequences.iter().zip(&dataset.splits) {
            match tag {
                SplitTag::TrainLabeled => n_labeled += 1,
                SplitTag::TrainUnlabeled => n_unlabeled += 1,
                SplitTag::Holdout => n_holdout += 1,
            }
            split_tags.insert(seq.client_id.clone(), tag);
        }
        DatasetManifest {
            n_clients: dataset.sequences.len(),
            n_labeled,
            n_unlabeled,
            n_holdout,
            vocab_sizes: dataset.vocab_sizes.clone(),
            currency: currency.to_string(),
            split_tags,
        }
    }

    /// Re-applies stored split tags (and vocab sizes) onto a freshly loaded
    /// dataset, so splits survive the CSV round trip.
    pub fn apply(&self, dataset: &mut Dataset) {
        dataset.vocab_sizes = self.vocab_sizes.clone();
        for (i, seq) in dataset.sequences.iter().enumerate() {
            if let Some(&tag) = self.split_tags.get(&seq.client_id) {
                dataset.splits[i] = tag;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&body).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Empirical per-class MCC frequency distance, used to verify that the
/// planted signal really grows with `signal_strength`.
pub fn class_mcc_distance(dataset: &Dataset) -> f64 {
    let k = dataset.mcc_vocab();
    let mut hist = [vec![0.0f64; k], vec![0.0f64; k]];
    let mut totals = [0.0f64; 2];
    for seq in &dataset.sequences {
        let Some(label) = seq.label else { continue };
        let class = (label != 0) as usize;
        for ev in &seq.events {
            hist[class][ev.mcc] += 1.0;
            totals[class] += 1.0;
        }
    }
    let mut l1 = 0.0;
    for j in 0..k {
        let p0 = if totals[0] > 0.0 { hist[0][j] / totals[0] } else { 0.0 };
        let p1 = if totals[1] > 0.0 { hist[1][j] / totals[1] } else { 0.0 };
        l1 += (p0 - p1).abs();
    }
    l1
}

/// Distinct UTC calendar days covered by a set of events.
pub fn distinct_days(events: &[EventRecord]) -> usize {
    events
        .iter()
        .map(|e| e.timestamp.div_euclid(SECONDS_PER_DAY))
        .collect::<BTreeSet<_>>()
        .len()
}
