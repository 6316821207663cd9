//! Cross-modal contrastive alignment of sequence embeddings with frozen text
//! embeddings: the three head losses, the trainable text-side projection, the
//! alignment training loop, and structural/fused embedding export.

mod heads;
mod train;

pub use heads::{
    ortho_head_loss, sigmoid_head_loss, softmax_head_loss, OrthoGrads, PairGrads,
};
pub use train::{retrieval_accuracy, train_alignment, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderParams, OptimizerKind, SeqEmbedding};
use crate::error::{Error, Result};
use crate::math::{normalize, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Symmetric softmax contrastive head (bidirectional InfoNCE).
    Softmax,
    /// Pairwise binary sigmoid head with trainable bias.
    Sigmoid,
    /// Softmax head on a shared projection block plus an orthogonality
    /// regularizer against the modality-specific block.
    Ortho,
}

impl HeadKind {
    pub fn tag(&self) -> &'static str {
        match self {
            HeadKind::Softmax => "softmax",
            HeadKind::Sigmoid => "sigmoid",
            HeadKind::Ortho => "ortho",
        }
    }

    /// Temperature init: 0.07 for softmax-style heads; the sigmoid head
    /// starts at τ=10 with a strongly negative bias so the N²−N negative
    /// pairs dominate gracefully at the start.
    pub fn default_init_tau(&self) -> f64 {
        match self {
            HeadKind::Sigmoid => 10.0,
            _ => 0.07,
        }
    }

    pub fn default_init_bias(&self) -> f64 {
        match self {
            HeadKind::Sigmoid => -10.0,
            _ => 0.0,
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "softmax" => Ok(HeadKind::Softmax),
            "sigmoid" => Ok(HeadKind::Sigmoid),
            "ortho" => Ok(HeadKind::Ortho),
            other => Err(Error::config("head", format!("unknown head `{other}`"))),
        }
    }
}

/// Which embedding the ortho head exports for downstream use: the full
/// pre-projection encoder output (default) or the shared block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrthoExport {
    #[default]
    Full,
    Shared,
}

/// Trainable affine map taking frozen text embeddings (dimension `d_text`)
/// into the alignment space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextProjection {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl TextProjection {
    pub fn init(d_text: usize, d_out: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(crate::math::mix_seed(seed, 0x7e87));
        let bound = 1.0 / (d_text as f64).sqrt();
        TextProjection {
            w: Mat::from_fn(d_out, d_text, |_, _| rng.gen_range(-bound..bound)),
            b: vec![0.0; d_out],
        }
    }

    pub fn d_text(&self) -> usize {
        self.w.cols
    }

    pub fn d_out(&self) -> usize {
        self.w.rows
    }

    /// Affine map without normalization (the heads normalize internally).
    pub fn apply_raw(&self, z_text: &[f64]) -> Result<Vec<f64>> {
        if z_text.len() != self.w.cols {
            return Err(Error::DimensionMismatch {
                expected: self.w.cols,
                got: z_text.len(),
            });
        }
        let mut out = self.b.clone();
        self.w.matvec_add(z_text, &mut out);
        Ok(out)
    }
}

/// Projects a frozen text embedding into the alignment space and
/// L2-normalizes it. A projection that collapses the input to (near) zero is
/// reported as a degenerate-projection error.
pub fn text_projection(z_text: &[f64], proj: &TextProjection) -> Result<Vec<f64>> {
    let raw = proj.apply_raw(z_text)?;
    let (unit, _) = normalize(&raw).map_err(|_| {
        Error::Degenerate("text projection collapsed the embedding to zero".into())
    })?;
    Ok(unit)
}

/// Projection head of the ortho head: one affine map from the encoder output
/// to `d_shared + d_spec`, split into the two blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub w: Mat,
    pub b: Vec<f64>,
    pub d_shared: usize,
    pub d_spec: usize,
}

impl ProjectionParams {
    pub fn init(d_in: usize, d_shared: usize, d_spec: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(crate::math::mix_seed(seed, 0x0817));
        let bound = 1.0 / (d_in as f64).sqrt();
        ProjectionParams {
            w: Mat::from_fn(d_shared + d_spec, d_in, |_, _| rng.gen_range(-bound..bound)),
            b: vec![0.0; d_shared + d_spec],
            d_shared,
            d_spec,
        }
    }

    pub fn apply(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if z.len() != self.w.cols {
            return Err(Error::DimensionMismatch {
                expected: self.w.cols,
                got: z.len(),
            });
        }
        let mut out = self.b.clone();
        self.w.matvec_add(z, &mut out);
        let spec = out.split_off(self.d_shared);
        Ok((out, spec))
    }
}

/// A paired batch: row i of both matrices belongs to the same client. The
/// sequence side holds raw encoder outputs; the text side holds frozen
/// embeddings already projected into the alignment space. Heads normalize
/// rows internally before computing similarities.
#[derive(Debug, Clone)]
pub struct AlignedBatch {
    pub client_ids: Vec<String>,
    pub z_seq: Mat,
    pub z_text: Mat,
}

impl AlignedBatch {
    pub fn new(client_ids: Vec<String>, z_seq: Mat, z_text: Mat) -> Result<Self> {
        if z_seq.rows != z_text.rows || z_seq.rows != client_ids.len() {
            return Err(Error::Invalid(format!(
                "batch row mismatch: {} ids, {} seq rows, {} text rows",
                client_ids.len(),
                z_seq.rows,
                z_text.rows
            )));
        }
        Ok(AlignedBatch {
            client_ids,
            z_seq,
            z_text,
        })
    }

    /// Convenience constructor for loss-level tests: rows only, synthetic ids.
    pub fn from_rows(z_seq: Vec<Vec<f64>>, z_text: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..z_seq.len()).map(|i| format!("row{i}")).collect();
        Self::new(ids, Mat::from_rows(z_seq), Mat::from_rows(z_text))
    }

    pub fn len(&self) -> usize {
        self.z_seq.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Training hyperparameters for the alignment stage. τ is stored (and
/// learned) as log-temperature so it stays positive; `b` only applies to the
/// sigmoid head and `lambda_ortho` only to the ortho head.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentHyperParams {
    pub head: HeadKind,
    /// Temperature init; per-head default when absent.
    pub init_tau: Option<f64>,
    pub init_bias: Option<f64>,
    pub lambda_ortho: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip: f64,
    /// Train on unlabeled clients too (they have text embeddings but no
    /// labels); holdout clients never train.
    pub include_unlabeled: bool,
    /// Warm start from the pretrained encoder checkpoint (default) instead of
    /// a fresh initialization.
    pub warm_start: bool,
    /// Shared-block width for the ortho head; defaults to d_out / 2.
    pub d_shared: Option<usize>,
    pub ortho_export: OrthoExport,
    pub optimizer: OptimizerKind,
}

impl Default for AlignmentHyperParams {
    fn default() -> Self {
        AlignmentHyperParams {
            head: HeadKind::Softmax,
            init_tau: None,
            init_bias: None,
            lambda_ortho: 0.1,
            batch_size: 64,
            epochs: 10,
            lr: 0.02,
            momentum: 0.9,
            clip: 5.0,
            include_unlabeled: true,
            warm_start: true,
            d_shared: None,
            ortho_export: OrthoExport::Full,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl AlignmentHyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_ortho < 0.0 {
            return Err(Error::config("alignment.lambda_ortho", "must be >= 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("alignment.batch_size", "must be >= 1"));
        }
        if let Some(tau) = self.init_tau {
            if tau <= 0.0 {
                return Err(Error::config("alignment.init_tau", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Everything the alignment stage trains, plus enough config to reload it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentParams {
    pub head: HeadKind,
    pub encoder: EncoderParams,
    pub text_proj: TextProjection,
    pub ortho_proj: Option<ProjectionParams>,
    pub log_tau: f64,
    pub bias: f64,
    pub lambda_ortho: f64,
    pub ortho_export: OrthoExport,
}

impl AlignmentParams {
    pub fn init(
        head: HeadKind,
        encoder: EncoderParams,
        d_text: usize,
        hparams: &AlignmentHyperParams,
        seed: u64,
    ) -> Self {
        let d_out = encoder.config.d_out;
        let (proj_dim, ortho_proj) = match head {
            HeadKind::Ortho => {
                let d_shared = hparams.d_shared.unwrap_or(d_out / 2).max(1);
                let d_spec = d_out.saturating_sub(d_shared).max(1);
                (
                    d_shared,
                    Some(ProjectionParams::init(d_out, d_shared, d_spec, seed)),
                )
            }
            _ => (d_out, None),
        };
        let tau = hparams.init_tau.unwrap_or_else(|| head.default_init_tau());
        let bias = hparams.init_bias.unwrap_or_else(|| head.default_init_bias());
        AlignmentParams {
            head,
            encoder,
            text_proj: TextProjection::init(d_text, proj_dim, seed),
            ortho_proj,
            log_tau: tau.ln(),
            bias,
            lambda_ortho: hparams.lambda_ortho,
            ortho_export: hparams.ortho_export,
        }
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn groups(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let mut groups = self.encoder.groups();
        groups.push(("text_proj_w", vec![self.text_proj.w.rows, self.text_proj.w.cols], &self.text_proj.w.data));
        groups.push(("text_proj_b", vec![self.text_proj.b.len()], &self.text_proj.b));
        if let Some(proj) = &self.ortho_proj {
            groups.push(("ortho_proj_w", vec![proj.w.rows, proj.w.cols], &proj.w.data));
            groups.push(("ortho_proj_b", vec![proj.b.len()], &proj.b));
        }
        groups.push(("log_tau", vec![1], std::slice::from_ref(&self.log_tau)));
        groups.push(("bias", vec![1], std::slice::from_ref(&self.bias)));
        groups
    }

    pub fn groups_mut(&mut self) -> Vec<(&'static str, Vec<usize>, &mut [f64])> {
        let mut groups = self.encoder.groups_mut();
        groups.push(("text_proj_w", vec![self.text_proj.w.rows, self.text_proj.w.cols], &mut self.text_proj.w.data));
        groups.push(("text_proj_b", vec![self.text_proj.b.len()], &mut self.text_proj.b));
        if let Some(proj) = &mut self.ortho_proj {
            groups.push(("ortho_proj_w", vec![proj.w.rows, proj.w.cols], &mut proj.w.data));
            groups.push(("ortho_proj_b", vec![proj.b.len()], &mut proj.b));
        }
        groups.push(("log_tau", vec![1], std::slice::from_mut(&mut self.log_tau)));
        groups.push(("bias", vec![1], std::slice::from_mut(&mut self.bias)));
        groups
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

    /// Structural embedding exported for downstream tasks. For the ortho
    /// head this is the full pre-projection embedding unless shared-block
    /// export was requested.
    pub fn structural_embedding(&self, seq: &crate::data_model::EventSequence) -> Result<Vec<f64>> {
        let raw = crate::encoder::encode(seq, &self.encoder)?.vector;
        match (self.head, self.ortho_export) {
            (HeadKind::Ortho, OrthoExport::Shared) => {
                let proj = self.ortho_proj.as_ref().expect("ortho head has projection");
                Ok(proj.apply(&raw)?.0)
            }
            _ => Ok(raw),
        }
    }

    /// The vector that lives in the aligned (retrieval) space: normalized
    /// encoder output, or the normalized shared block for the ortho head.
    pub fn aligned_space_embedding(&self, seq: &crate::data_model::EventSequence) -> Result<Vec<f64>> {
        let raw = crate::encoder::encode(seq, &self.encoder)?.vector;
        let pre = match self.head {
            HeadKind::Ortho => {
                let proj = self.ortho_proj.as_ref().expect("ortho head has projection");
                proj.apply(&raw)?.0
            }
            _ => raw,
        };
        Ok(normalize(&pre)?.0)
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        #[derive(Serialize)]
        struct Meta<'a> {
            head: HeadKind,
            encoder: &'a EncoderConfig,
            d_text: usize,
            d_shared: Option<usize>,
            d_spec: Option<usize>,
            lambda_ortho: f64,
            ortho_export: OrthoExport,
        }
        let meta = Meta {
            head: self.head,
            encoder: &self.encoder.config,
            d_text: self.text_proj.d_text(),
            d_shared: self.ortho_proj.as_ref().map(|p| p.d_shared),
            d_spec: self.ortho_proj.as_ref().map(|p| p.d_spec),
            lambda_ortho: self.lambda_ortho,
            ortho_export: self.ortho_export,
        };
        let config = serde_json::to_value(&meta).expect("meta serializes");
        crate::encoder::write_checkpoint(path, "alignment", config, &self.groups())
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            head: HeadKind,
            encoder: EncoderConfig,
            d_text: usize,
            d_shared: Option<usize>,
            d_spec: Option<usize>,
            lambda_ortho: f64,
            ortho_export: OrthoExport,
        }
        let (header, payload) = crate::encoder::read_checkpoint(path)?;
        if header.kind != "alignment" {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("expected an alignment checkpoint, found kind `{}`", header.kind),
            });
        }
        let meta: Meta = serde_json::from_value(header.config.clone()).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let d_out = meta.encoder.d_out;
        let proj_dim = meta.d_shared.unwrap_or(d_out);
        let mut params = AlignmentParams {
            head: meta.head,
            encoder: EncoderParams::init(meta.encoder, 0),
            text_proj: TextProjection::init(meta.d_text, proj_dim, 0),
            ortho_proj: match (meta.d_shared, meta.d_spec) {
                (Some(s), Some(p)) => Some(ProjectionParams::init(d_out, s, p, 0)),
                _ => None,
            },
            log_tau: 0.0,
            bias: 0.0,
            lambda_ortho: meta.lambda_ortho,
            ortho_export: meta.ortho_export,
        };
        crate::encoder::checkpoint_fill(path, &header, &payload, &mut params.groups_mut())?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuseMode {
    /// Structural embedding only.
    S,
    /// Structural embedding concatenated with the projected text embedding,
    /// each block L2-normalized.
    Full,
}

/// Builds the exported embedding for one client.
pub fn fuse_embeddings(
    z_seq_aligned: &SeqEmbedding,
    z_text: Option<&crate::clients::TextEmbedding>,
    proj: &TextProjection,
    mode: FuseMode,
) -> Result<Vec<f64>> {
    match mode {
        FuseMode::S => Ok(z_seq_aligned.vector.clone()),
        FuseMode::Full => {
            let text = z_text.ok_or_else(|| {
                Error::Invalid(format!(
                    "client {} has no text embedding for full fusion",
                    z_seq_aligned.client_id
                ))
            })?;
            let (seq_unit, _) = normalize(&z_seq_aligned.vector)?;
            let text_unit = text_projection(&text.vector, proj)?;
            let mut fused = seq_unit;
            fused.extend_from_slice(&text_unit);
            Ok(fused)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::TextEmbedding;
    use crate::math::l2_norm;

    #[test]
    fn identity_projection_normalizes() {
        let proj = TextProjection {
            w: Mat::identity(4),
            b: vec![0.0; 4],
        };
        let out = text_projection(&[3.0, 0.0, 4.0, 0.0], &proj).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-12);
        assert!((out[2] - 0.8).abs() < 1e-12);
        assert!((l2_norm(&out) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_projection_is_degenerate() {
        let proj = TextProjection {
            w: Mat::zeros(4, 4),
            b: vec![0.0; 4],
        };
        assert!(matches!(
            text_projection(&[1.0, 2.0, 3.0, 4.0], &proj),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn projection_output_is_unit_norm() {
        let proj = TextProjection::init(16, 8, 3);
        let z: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = text_projection(&z, &proj).unwrap();
        assert!((l2_norm(&out) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn projection_rejects_dimension_mismatch() {
        let proj = TextProjection::init(16, 8, 3);
        assert!(matches!(
            text_projection(&[1.0; 8], &proj),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn seq_embedding(v: Vec<f64>) -> SeqEmbedding {
        SeqEmbedding {
            client_id: "c".into(),
            vector: v,
        }
    }

    #[test]
    fn fuse_structural_mode_is_identity() {
        let proj = TextProjection::init(8, 4, 0);
        let z = seq_embedding(vec![1.0, 2.0, 3.0, 4.0]);
        let out = fuse_embeddings(&z, None, &proj, FuseMode::S).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn fuse_full_mode_concatenates_normalized_blocks() {
        let proj = TextProjection {
            w: Mat::identity(4),
            b: vec![0.0; 4],
        };
        let z = seq_embedding(vec![2.0, 0.0, 0.0, 0.0]);
        let text = TextEmbedding {
            client_id: "c".into(),
            vector: vec![0.0, 5.0, 0.0, 0.0],
        };
        let out = fuse_embeddings(&z, Some(&text), &proj, FuseMode::Full).unwrap();
        assert_eq!(out.len(), 8);
        assert_eq!(out[0], 1.0);
        assert_eq!(out[5], 1.0);
        assert!((l2_norm(&out) - 2.0f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn fuse_full_mode_requires_text() {
        let proj = TextProjection::init(4, 4, 0);
        let z = seq_embedding(vec![1.0, 0.0, 0.0, 0.0]);
        assert!(fuse_embeddings(&z, None, &proj, FuseMode::Full).is_err());
        let zero_text = TextEmbedding {
            client_id: "c".into(),
            vector: vec![0.0; 4],
        };
        assert!(fuse_embeddings(&z, Some(&zero_text), &proj, FuseMode::Full).is_err());
    }
}
