//! Pipeline configuration: one JSON file with per-stage sections. Unknown
//! keys are rejected at parse time; CLI flags override individual fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentHyperParams, HeadKind};
use crate::clients::EndpointConfig;
use crate::data_model::{CsvSchema, SyntheticConfig};
use crate::encoder::{ColesConfig, Pooling};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub csv_path: Option<PathBuf>,
    pub mcc_names_path: Option<PathBuf>,
    pub schema: CsvSchema,
    pub n_clients: usize,
    pub synthetic: SyntheticConfig,
    pub holdout_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            csv_path: None,
            mcc_names_path: None,
            schema: CsvSchema::default(),
            n_clients: 500,
            synthetic: SyntheticConfig::default(),
            holdout_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFormat {
    /// Statistical summary prompt (default).
    Stats,
    /// Raw serialization of recent events.
    Raw,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SummarizerConfig {
    pub currency: String,
    pub prompt_format: PromptFormat,
    /// Events kept by the raw-serialization format.
    pub max_raw_events: usize,
}

impl Default for SummarizerConfig {
    fn default() -> Self {
        SummarizerConfig {
            currency: "RUB".into(),
            prompt_format: PromptFormat::Stats,
            max_raw_events: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientMode {
    Mock,
    Endpoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientsConfig {
    pub mode: ClientMode,
    pub mock_dim: usize,
    /// Mock seed; derived from the global seed when absent.
    pub mock_seed: Option<u64>,
    pub generator: EndpointConfig,
    pub embedder: EndpointConfig,
}

impl Default for ClientsConfig {
    fn default() -> Self {
        ClientsConfig {
            mode: ClientMode::Mock,
            mock_dim: 256,
            mock_seed: None,
            generator: EndpointConfig::default(),
            embedder: EndpointConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub d_emb: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub pooling: Pooling,
    pub coles: ColesConfig,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            d_emb: 16,
            d_hidden: 1152,
            d_out: 256,
            pooling: Pooling::Final,
            coles: ColesConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentSection {
    /// Heads to train; one checkpoint per head.
    pub heads: Vec<HeadKind>,
    #[serde(flatten)]
    pub hyper: AlignmentHyperParams,
}

impl Default for AlignmentSection {
    fn default() -> Self {
        AlignmentSection {
            heads: vec![HeadKind::Softmax, HeadKind::Sigmoid, HeadKind::Ortho],
            hyper: AlignmentHyperParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub k: usize,
    pub task: String,
    /// Variants to evaluate; all exported variants when absent.
    pub variants: Option<Vec<String>>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k: 5,
            task: "synthetic".into(),
            variants: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub warmup: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection { warmup: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub artifacts_dir: PathBuf,
    pub data: DataConfig,
    pub summarizer: SummarizerConfig,
    pub clients: ClientsConfig,
    pub encoder: EncoderSection,
    pub alignment: AlignmentSection,
    pub eval: EvalSection,
    pub benchmark: BenchmarkSection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig = serde_json::from_str(&body)
            .map_err(|e| Error::config("config", format!("{e} in {}", path.display())))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.artifacts_dir.as_os_str().is_empty() {
            return Err(Error::config("artifacts_dir", "must not be empty"));
        }
        match self.data.source {
            DataSource::Csv => {
                if self.data.csv_path.is_none() {
                    return Err(Error::config("data.csv_path", "required when data.source is csv"));
                }
            }
            DataSource::Synthetic => {
                if self.data.n_clients < 2 {
                    return Err(Error::config("data.n_clients", "need at least 2 clients"));
                }
            }
        }
        if !(self.data.holdout_frac > 0.0 && self.data.holdout_frac < 1.0) {
            return Err(Error::config("data.holdout_frac", "must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.data.synthetic.signal_strength) {
            return Err(Error::config("data.synthetic.signal_strength", "must be in [0, 1]"));
        }
        if self.clients.mock_dim < 8 {
            return Err(Error::config("clients.mock_dim", "must be >= 8"));
        }
        if self.encoder.d_emb == 0 || self.encoder.d_hidden == 0 || self.encoder.d_out == 0 {
            return Err(Error::config("encoder", "dimensions must be positive"));
        }
        if self.alignment.heads.is_empty() {
            return Err(Error::config("alignment.heads", "need at least one head"));
        }
        self.alignment.hyper.validate()?;
        if self.eval.k < 2 {
            return Err(Error::config("eval.k", "need k >= 2"));
        }
        self.clients.generator.validate()?;
        self.clients.embedder.validate()?;
        Ok(())
    }

    pub fn mock_seed(&self) -> u64 {
        self.clients
            .mock_seed
            .unwrap_or_else(|| crate::math::mix_seed(self.seed, 0x0c7e))
    }
}
