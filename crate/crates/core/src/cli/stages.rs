//! The pipeline stages. Each stage reads its inputs from the artifact
//! directory, writes its outputs into a per-stage subdirectory, and records a
//! manifest entry; a stage whose config and inputs are unchanged is a no-op.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::alignment::{
    fuse_embeddings, retrieval_accuracy, train_alignment, AlignmentParams, FuseMode, HeadKind,
};
use crate::clients::{
    mock_embed, mock_generate, read_descriptions_jsonl, read_embeddings, read_prompts_jsonl,
    run_batch, write_descriptions_jsonl, write_embeddings, write_prompts_jsonl, ChatClient,
    Description, DiskCache, EmbedClient, PromptRecord, TextEmbedding,
};
use crate::data_model::{
    generate_synthetic, load_dataset, save_dataset, split_holdout, Dataset, DatasetManifest,
    SplitTag,
};
use crate::encoder::{
    encode, pretrain_coles, write_loss_curve, EncoderConfig, EncoderParams,
};
use crate::error::{Error, Result};
use crate::eval::{
    fom_report, holdout_score, kfold_evaluate, throughput_benchmark, BenchResult, EvalReport,
};
use crate::summarizer::{
    agg_features, compute_profile, render_prompt, render_raw_prompt, BehaviorProfile,
    CategoryNames,
};

use super::config::{ClientMode, DataSource, PipelineConfig, PromptFormat};
use super::manifest::{config_hash, hash_inputs, Manifest};

pub struct Pipeline {
    pub config: PipelineConfig,
    manifest: Manifest,
}

struct StagePaths;

impl StagePaths {
    fn dataset(dir: &Path) -> PathBuf {
        dir.join("synth/dataset.csv")
    }
    fn dataset_manifest(dir: &Path) -> PathBuf {
        dir.join("synth/dataset_manifest.json")
    }
    fn mcc_names(dir: &Path) -> PathBuf {
        dir.join("synth/mcc_names.csv")
    }
    fn profiles(dir: &Path) -> PathBuf {
        dir.join("summarize/profiles.json")
    }
    fn prompts(dir: &Path) -> PathBuf {
        dir.join("summarize/prompts.jsonl")
    }
    fn descriptions(dir: &Path) -> PathBuf {
        dir.join("generate/descriptions.jsonl")
    }
    fn text_embeddings(dir: &Path) -> PathBuf {
        dir.join("embed_text/text.emb")
    }
    fn encoder_ckpt(dir: &Path) -> PathBuf {
        dir.join("pretrain/encoder.ckpt")
    }
    fn pretrain_curve(dir: &Path) -> PathBuf {
        dir.join("pretrain/loss_curve.csv")
    }
    fn align_ckpt(dir: &Path, head: HeadKind) -> PathBuf {
        dir.join(format!("align/align_{}.ckpt", head.tag()))
    }
    fn align_curve(dir: &Path, head: HeadKind) -> PathBuf {
        dir.join(format!("align/loss_{}.csv", head.tag()))
    }
    fn export(dir: &Path, variant: &str) -> PathBuf {
        dir.join(format!("export/{variant}.emb"))
    }
    fn eval_report(dir: &Path) -> PathBuf {
        dir.join("evaluate/eval_report.json")
    }
    fn holdout_report(dir: &Path) -> PathBuf {
        dir.join("evaluate/holdout.json")
    }
    fn bench(dir: &Path) -> PathBuf {
        dir.join("benchmark/bench.json")
    }
    fn fom_csv(dir: &Path) -> PathBuf {
        dir.join("fom/fom.csv")
    }
    fn fom_svg(dir: &Path) -> PathBuf {
        dir.join("fom/fom.svg")
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let body = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl Pipeline {
    pub fn open(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(&config.artifacts_dir)
            .map_err(|e| Error::io(&config.artifacts_dir, e))?;
        let manifest = Manifest::load(&config.artifacts_dir)?;
        Ok(Pipeline { config, manifest })
    }

    fn dir(&self) -> &Path {
        &self.config.artifacts_dir
    }

    pub fn stage_stats(&self, stage: &str) -> Option<&BTreeMap<String, serde_json::Value>> {
        self.manifest.stages.get(stage).map(|e| &e.stats)
    }

    fn load_dataset_artifact(&self) -> Result<(Dataset, CategoryNames, DatasetManifest)> {
        let dir = self.dir();
        let csv = StagePaths::dataset(dir);
        let manifest_path = StagePaths::dataset_manifest(dir);
        if !csv.exists() || !manifest_path.exists() {
            return Err(Error::MissingArtifact {
                stage: "synth".into(),
            });
        }
        let mut dataset = load_dataset(&csv, &crate::data_model::CsvSchema::default())?;
        let ds_manifest = DatasetManifest::load(&manifest_path)?;
        ds_manifest.apply(&mut dataset);
        let names = CategoryNames::load_mcc_csv(
            &StagePaths::mcc_names(dir),
            dataset.mcc_vocab(),
            dataset.tx_vocab(),
        )?;
        Ok((dataset, names, ds_manifest))
    }

    fn read_text_embeddings(&self) -> Result<BTreeMap<String, Vec<f64>>> {
        let path = StagePaths::text_embeddings(self.dir());
        if !path.exists() {
            return Err(Error::MissingArtifact {
                stage: "embed_text".into(),
            });
        }
        let file = read_embeddings(&path)?;
        Ok(file
            .client_ids
            .into_iter()
            .zip(file.vectors)
            .collect())
    }

    /// Stage A/B: materialize the dataset (synthetic or ingested CSV), apply
    /// the holdout split, and write the dataset manifest plus category names.
    pub fn cmd_synth(&mut self) -> Result<()> {
        let stage = "synth";
        let hash = config_hash(self.config.seed, &(&self.config.data, &self.config.summarizer.currency));
        let inputs = match self.config.data.source {
            DataSource::Csv => {
                let path = self.config.data.csv_path.clone().expect("validated");
                let mut files = vec![("input csv", path)];
                if let Some(names) = &self.config.data.mcc_names_path {
                    files.push(("mcc names csv", names.clone()));
                }
                match hash_inputs(&files) {
                    Ok(h) => h,
                    Err(Error::MissingArtifact { .. }) => {
                        return Err(Error::config(
                            "data.csv_path",
                            "input CSV (or MCC names file) does not exist",
                        ));
                    }
                    Err(e) => return Err(e),
                }
            }
            DataSource::Synthetic => BTreeMap::new(),
        };
        if self.manifest.is_fresh(stage, &hash, &inputs) {
            log::info!("synth: up to date");
            return Ok(());
        }

        let mut dataset = match self.config.data.source {
            DataSource::Synthetic => generate_synthetic(
                self.config.data.n_clients,
                self.config.seed,
                &self.config.data.synthetic,
            )?,
            DataSource::Csv => load_dataset(
                self.config.data.csv_path.as_ref().expect("validated"),
                &self.config.data.schema,
            )?,
        };
        split_holdout(&mut dataset, self.config.data.holdout_frac, self.config.seed)?;

        let names = match (&self.config.data.source, &self.config.data.mcc_names_path) {
            (DataSource::Csv, Some(path)) => {
                CategoryNames::load_mcc_csv(path, dataset.mcc_vocab(), dataset.tx_vocab())?
            }
            _ => CategoryNames::generated(dataset.mcc_vocab(), dataset.tx_vocab()),
        };

        let dir = self.dir().to_path_buf();
        let csv = StagePaths::dataset(&dir);
        ensure_parent(&csv)?;
        save_dataset(&dataset, &csv)?;
        let manifest_path = StagePaths::dataset_manifest(&dir);
        DatasetManifest::from_dataset(&dataset, &self.config.summarizer.currency).save(&manifest_path)?;
        let names_path = StagePaths::mcc_names(&dir);
        names.save_mcc_csv(&names_path)?;

        let stats = BTreeMap::from([
            ("clients".to_string(), json!(dataset.n_clients())),
            ("holdout".to_string(), json!(dataset.holdout_indices().len())),
        ]);
        self.manifest.record(
            &dir,
            stage,
            hash,
            inputs,
            &[csv, manifest_path, names_path],
            stats,
        )
    }

    /// Stage B: behavioral profiles and rendered prompts for every client.
    pub fn cmd_summarize(&mut self) -> Result<()> {
        let stage = "summarize";
        let dir = self.dir().to_path_buf();
        let hash = config_hash(self.config.seed, &self.config.summarizer);
        let inputs = hash_inputs(&[
            ("synth", StagePaths::dataset(&dir)),
            ("synth", StagePaths::dataset_manifest(&dir)),
            ("synth", StagePaths::mcc_names(&dir)),
        ])?;
        if self.manifest.is_fresh(stage, &hash, &inputs) {
            log::info!("summarize: up to date");
            return Ok(());
        }

        let (dataset, names, _) = self.load_dataset_artifact()?;
        let mut profiles = Vec::with_capacity(dataset.n_clients());
        let mut prompts = Vec::with_capacity(dataset.n_clients());
        for seq in &dataset.sequences {
            let profile = compute_profile(seq, &names)?;
            let prompt = match self.config.summarizer.prompt_format {
                PromptFormat::Stats => render_prompt(&profile, &self.config.summarizer.currency),
                PromptFormat::Raw => {
                    render_raw_prompt(seq, &names, self.config.summarizer.max_raw_events)
                }
            };
            prompts.push(PromptRecord {
                client_id: seq.client_id.clone(),
                prompt,
            });
            profiles.push(profile);
        }

        let profiles_path = StagePaths::profiles(&dir);
        write_json(&profiles_path, &profiles)?;
        let prompts_path = StagePaths::prompts(&dir);
        ensure_parent(&prompts_path)?;
        write_prompts_jsonl(&prompts_path, &prompts)?;

        let stats = BTreeMap::from([("prompts".to_string(), json!(prompts.len()))]);
        self.manifest
            .record(&dir, stage, hash, inputs, &[profiles_path, prompts_path], stats)
    }

    /// Stage C/D: behavioral descriptions, via the configured endpoint or the
    /// offline mock, with a content-addressed cache.
    pub fn cmd_generate(&mut self) -> Result<()> {
        let stage = "generate";
        let dir = self.dir().to_path_buf();
        let hash = config_hash(
            self.config.seed,
            &(&self.config.clients.mode, &self.config.clients.generator.model, self.config.mock_seed()),
        );
        let inputs = hash_inputs(&[
            ("summarize", StagePaths::prompts(&dir)),
            ("summarize", StagePaths::profiles(&dir)),
        ])?;
        if self.manifest.is_fresh(stage, &hash, &inputs) {
            log::info!("generate: up to date");
            return Ok(());
        }

        let prompts = read_prompts_jsonl(&StagePaths::prompts(&dir))?;
        let cache = DiskCache::open(dir.join("generate/cache"))?;
        let salt = match self.config.clients.mode {
            ClientMode::Mock => format!("mock-generate:{}", self.config.mock_seed()),
            ClientMode::Endpoint => format!("chat:{}", self.config.clients.generator.model),
        };

        let mut new_generations = 0usize;
        let mut cache_hits = 0usize;
        let mut descriptions = Vec::with_capacity(prompts.len());
        match self.config.clients.mode {
            ClientMode::Mock => {
                let profiles: Vec<BehaviorProfile> = read_json(&StagePaths::profiles(&dir))?;
                let by_client: BTreeMap<&str, &BehaviorProfile> =
                    profiles.iter().map(|p| (p.client_id.as_str(), p)).collect();
                for record in &prompts {
                    let key = DiskCache::content_key(&format!("{salt}\n{}", record.prompt));
                    if let Some(text) = cache.get(&key) {
                        cache_hits += 1;
                        descriptions.push(Description::new(record.client_id.clone(), text)?);
                        continue;
                    }
                    let profile = by_client.get(record.client_id.as_str()).ok_or_else(|| {
                        Error::Invalid(format!("no profile for client {}", record.client_id))
                    })?;
                    let d = mock_generate(profile, self.config.mock_seed())?;
                    cache.put(&key, &d.text)?;
                    new_generations += 1;
                    descriptions.push(d);
                }
            }
            ClientMode::Endpoint => {
                let client = ChatClient::new(self.config.clients.generator.clone())?;
                // resolve cache hits first, then batch the misses
                let mut pending = Vec::new();
                let mut slots: Vec<Option<Description>> = Vec::with_capacity(prompts.len());
                for (i, record) in prompts.iter().enumerate() {
                    let key = DiskCache::content_key(&format!("{salt}\n{}", record.prompt));
                    if let Some(text) = cache.get(&key) {
                        cache_hits += 1;
                        slots.push(Some(Description::new(record.client_id.clone(), text)?));
                    } else {
                        slots.push(None);
                        pending.push((i, key, record));
                    }
                }
                let outcomes = run_batch(
                    &pending,
                    self.config.clients.generator.max_parallel,
                    |_, (_, _, record)| client.generate_description(&record.client_id, &record.prompt),
                );
                for ((slot, key, record), outcome) in pending.iter().zip(outcomes) {
                    match outcome {
                        Ok(d) => {
                            cache.put(key, &d.text)?;
                            new_generations += 1;
                            slots[*slot] = Some(d);
                        }
                        Err(e) => {
                            log::warn!(
                                "generation failed for client {}; excluding: {e}",
                                record.client_id
                            );
                        }
                    }
                }
                descriptions.extend(slots.into_iter().flatten());
                if descriptions.is_empty() {
                    return Err(Error::Content("every generation request failed".into()));
                }
            }
        }

        let out = StagePaths::descriptions(&dir);
        ensure_parent(&out)?;
        write_descriptions_jsonl(&out, &descriptions)?;
        let stats = BTreeMap::from([
            ("new_generations".to_string(), json!(new_generations)),
            ("cache_hits".to_string(), json!(cache_hits)),
            ("descriptions".to_string(), json!(descriptions.len())),
        ]);
        self.manifest.record(&dir, stage, hash, inputs, &[out], stats)
    }

    /// Stage E/F: frozen text embeddings for every description.
    pub fn cmd_embed_text(&mut self) -> Result<()> {
        let stage = "embed_text";
        let dir = self.dir().to_path_buf();
        let hash = config_hash(
            self.config.seed,
            &(
                &self.config.clients.mode,
                &self.config.clients.embedder.model,
                self.config.clients.mock_dim,
                self.config.mock_seed(),
            ),
        );
        let inputs = hash_inputs(&[("generate", StagePaths::descriptions(&dir))])?;
        if self.manifest.is_fresh(stage, &hash, &inputs) {
            log::info!("embed_text: up to date");
            return Ok(());
        }

        let descriptions = read_descriptions_jsonl(&StagePaths::descriptions(&dir))?;
        let cache = DiskCache::open(dir.join("embed_text/cache"))?;
        let salt = match self.config.clients.mode {
            ClientMode::Mock => format!(
                "mock-embed:{}:{}",
                self.config.clients.mock_dim,
                self.config.mock_seed()
            ),
            ClientMode::Endpoint => format!("embed:{}", self.config.clients.embedder.model),
        };

        let mut new_embeddings = 0usize;
        let mut cache_hits = 0usize;
        let mut embeddings: Vec<TextEmbedding> = Vec::with_capacity(descriptions.len());
        match self.config.clients.mode {
            ClientMode::Mock => {
                for d in &descriptions {
                    let key = DiskCache::content_key(&format!("{salt}\n{}", d.text));
                    if let Some(payload) = cache.get(&key) {
                        let vector: Vec<f64> =
                            serde_json::from_str(&payload).map_err(|e| Error::Content(e.to_string()))?;
                        cache_hits += 1;
                        embeddings.push(TextEmbedding {
                            client_id: d.client_id.clone(),
                            vector,
                        });
                        continue;
                    }
                    let e = mock_embed(
                        &d.client_id,
                        &d.text,
                        self.config.clients.mock_dim,
                        self.config.mock_seed(),
                    )?;
                    cache.put(&key, &serde_json::to_string(&e.vector).expect("vector serializes"))?;
                    new_embeddings += 1;
                    embeddings.push(e);
                }
            }
            ClientMode::Endpoint => {
                let client = EmbedClient::new(self.config.clients.embedder.clone())?;
                let mut pending = Vec::new();
                let mut slots: Vec<Option<TextEmbedding>> = Vec::with_capacity(descriptions.len());
                for (i, d) in descriptions.iter().enumerate() {
                    let key = DiskCache::content_key(&format!("{salt}\n{}", d.text));
                    if let Some(payload) = cache.get(&key) {
                        let vector: Vec<f64> =
                            serde_json::from_str(&payload).map_err(|e| Error::Content(e.to_string()))?;
                        cache_hits += 1;
                        slots.push(Some(TextEmbedding {
                            client_id: d.client_id.clone(),
                            vector,
                        }));
                    } else {
                        slots.push(None);
                        pending.push((i, key, d));
                    }
                }
                let outcomes = run_batch(
                    &pending,
                    self.config.clients.embedder.max_parallel,
                    |_, (_, _, d)| client.embed_text(&d.client_id, &d.text),
                );
                for ((slot, key, d), outcome) in pending.iter().zip(outcomes) {
                    match outcome {
                        Ok(e) => {
                            cache.put(key, &serde_json::to_string(&e.vector).expect("serializes"))?;
                            new_embeddings += 1;
                            slots[*slot] = Some(e);
                        }
                        Err(err) => {
                            log::warn!("embedding failed for client {}; excluding: {err}", d.client_id);
                        }
                    }
                }
                embeddings.extend(slots.into_iter().flatten());
                if embeddings.is_empty() {
                    return Err(Error::Content("every embedding request failed".into()));
                }
            }
        }

        // enforce a single dimension across the run
        if let Some(first) = embeddings.first() {
            let dim = first.vector.len();
            for e in &embeddings {
                if e.vector.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: e.vector.len(),
                    });
                }
            }
        }

        let out = StagePaths::text_embeddings(&dir);
        ensure_parent(&out)?;
        let ids: Vec<String> = embeddings.iter().map(|e| e.client_id.clone()).collect();
        let vectors: Vec<Vec<f64>> = embeddings.iter().map(|e| e.vector.clone()).collect();
        write_embeddings(&out, &ids, &vectors)?;

        let index_file = {
            let mut name = out.file_name().unwrap().to_os_string();
            name.push(".index.json");
            out.with_file_name(name)
        };
        let stats = BTreeMap::from([
            ("new_embeddings".to_string(), json!(new_embeddings)),
            ("cache_hits".to_string(), json!(cache_hits)),
            (
                "dim".to_string(),
                json!(embeddings.first().map(|e| e.vector.len()).unwrap_or(0)),
            ),
        ]);
        self.manifest
            .record(&dir, stage, hash, inputs, &[out, index_file], stats)
    }

    /// Stage G: subsequence-contrastive pretraining of the encoder.
    pub fn cmd_pretrain(&mut self) -> Result<()> {
        let stage = "pretrain";
        let dir = self.dir().to_path_buf();
        let hash = config_hash(self.config.seed, &self.config.encoder);
        let inputs = hash_inputs(&[
            ("synth", StagePaths::dataset(&dir)),
            ("synth", StagePaths::dataset_manifest(&dir)),
        ])?;
        if self.manifest.is_fresh(stage, &hash, &inputs) {
            log::info!("pretrain: up to date");
            return Ok(());
        }

        let (dataset, _, _) = self.load_dataset_artifact()?;
        let mut encoder_config = EncoderConfig::with_dims(
            &dataset,
            self.config.encoder.d_emb,
            self.config.encoder.d_hidden,
            self.config.encoder.d_out,
        );
        encoder_config.pooling = self.config.encoder.pooling;
        let (params, curve) =
            pretrain_coles(&dataset, encoder_config, &self.config.encoder.coles, self.config.seed)?;

        let ckpt = StagePaths::encoder_ckpt(&dir);
        ensure_parent(&ckpt)?;
        params.save_checkpoint(&ckpt)?;
        let curve_path = StagePaths::pretrain_curve(&dir);
        write_loss_curve(&curve_path, &curve)?;

        let stats = BTreeMap::from([
            ("steps".to_string(), json!(curve.len())),
            ("params".to_string(), json!(params.param_count())),
            (
                "final_loss".to_string(),
                json!(curve.last().map(|&(_, l)| l).unwrap_or(f64::NAN)),
            ),
        ]);
        self.manifest
            .record(&dir, stage, hash, inputs, &[ckpt, curve_path], stats)
    }

    /// Stage I: contrastive alignment against the frozen text embeddings,
    /// one checkpoint per configured head.
    pub fn cmd_align(&mut self) -> Result<()> {
        let stage = "align";
        let dir = self.dir().to_path_buf();
        let hash = config_hash(self.config.seed, &self.config.alignment);
        let inputs = hash_inputs(&[
            ("pretrain", StagePaths::encoder_ckpt(&dir)),
            ("embed_text", StagePaths::text_embeddings(&dir)),
            ("synth", StagePaths::dataset(&dir)),
        ])?;
        if self.manifest.is_fresh(stage, &hash, &inputs) {
            log::info!("align: up to date");
            return Ok(());
        }

        let (dataset, _, _) = self.load_dataset_artifact()?;
        let encoder = EncoderParams::load_checkpoint(&StagePaths::encoder_ckpt(&dir))?;
        let texts = self.read_text_embeddings()?;

        let mut outputs = Vec::new();
        let mut stats = BTreeMap::new();
        for &head in &self.config.alignment.heads {
            let mut hyper = self.config.alignment.hyper.clone();
            hyper.head = head;
            let outcome = train_alignment(&dataset, &texts, &encoder, &hyper, self.config.seed)?;
            let ckpt = StagePaths::align_ckpt(&dir, head);
            ensure_parent(&ckpt)?;
            outcome.params.save_checkpoint(&ckpt)?;
            let curve_path = StagePaths::align_curve(&dir, head);
            write_loss_curve(&curve_path, &outcome.loss_curve)?;
            stats.insert(
                format!("{}_final_loss", head.tag()),
                json!(outcome.loss_curve.last().map(|&(_, l)| l).unwrap_or(f64::NAN)),
            );
            stats.insert(format!("{}_excluded", head.tag()), json!(outcome.excluded.len()));
            outputs.push(ckpt);
            outputs.push(curve_path);
        }
        self.manifest.record(&dir, stage, hash, inputs, &outputs, stats)
    }

    fn variant_tags(&self) -> Vec<String> {
        let mut tags = vec!["agg".to_string(), "coles".to_string()];
        for &head in &self.config.alignment.heads {
            tags.push(format!("latte-s[{}]", head.tag()));
            tags.push(format!("latte[{}]", head.tag()));
        }
        tags
    }

    /// Stage J: embedding export for every variant.
    pub fn cmd_export(&mut self) -> Result<()> {
        let stage = "export";
        let dir = self.dir().to_path_buf();
        let hash = config_hash(self.config.seed, &(&self.config.alignment.heads, &self.config.encoder.d_out));
        let mut input_files = vec![
            ("synth", StagePaths::dataset(&dir)),
            ("pretrain", StagePaths::encoder_ckpt(&dir)),
            ("embed_text", StagePaths::text_embeddings(&dir)),
        ];
        for &head in &self.config.alignment.heads {
            input_files.push(("align", StagePaths::align_ckpt(&dir, head)));
        }
        let inputs = hash_inputs(&input_files)?;
        if self.manifest.is_fresh(stage, &hash, &inputs) {
            log::info!("export: up to date");
            return Ok(());
        }

        let (dataset, _, _) = self.load_dataset_artifact()?;
        let coles_encoder = EncoderParams::load_checkpoint(&StagePaths::encoder_ckpt(&dir))?;
        let texts = self.read_text_embeddings()?;
        let ids: Vec<String> = dataset.sequences.iter().map(|s| s.client_id.clone()).collect();

        let mut outputs = Vec::new();
        let mut write_variant = |variant: &str, vectors: Vec<Vec<f64>>| -> Result<()> {
            let path = StagePaths::export(&dir, variant);
            ensure_parent(&path)?;
            write_embeddings(&path, &ids, &vectors)?;
            let index_file = {
                let mut name = path.file_name().unwrap().to_os_string();
                name.push(".index.json");
                path.with_file_name(name)
            };
            outputs.push(path);
            outputs.push(index_file);
            Ok(())
        };

        // aggregate baseline
        let mcc_vocab = dataset.mcc_vocab();
        let tx_vocab = dataset.tx_vocab();
        let agg: Vec<Vec<f64>> = dataset
            .sequences
            .iter()
            .map(|s| agg_features(s, mcc_vocab, tx_vocab).map(|f| f.values))
            .collect::<Result<_>>()?;
        write_variant("agg", agg)?;

        // pretrained encoder only
        let coles: Vec<Vec<f64>> = dataset
            .sequences
            .iter()
            .map(|s| encode(s, &coles_encoder).map(|e| e.vector))
            .collect::<Result<_>>()?;
        write_variant("coles", coles)?;

        for &head in &self.config.alignment.heads {
            let align = AlignmentParams::load_checkpoint(&StagePaths::align_ckpt(&dir, head))?;
            let mut structural = Vec::with_capacity(dataset.n_clients());
            let mut fused = Vec::with_capacity(dataset.n_clients());
            for seq in &dataset.sequences {
                let s = align.structural_embedding(seq)?;
                let seq_embedding = crate::encoder::SeqEmbedding {
                    client_id: seq.client_id.clone(),
                    vector: s.clone(),
                };
                let text = texts.get(&seq.client_id).map(|v| TextEmbedding {
                    client_id: seq.client_id.clone(),
                    vector: v.clone(),
                });
                let f = fuse_embeddings(
                    &seq_embedding,
                    text.as_ref(),
                    &align.text_proj,
                    FuseMode::Full,
                )?;
                structural.push(s);
                fused.push(f);
            }
            write_variant(&format!("latte-s[{}]", head.tag()), structural)?;
            write_variant(&format!("latte[{}]", head.tag()), fused)?;
        }

        let stats = BTreeMap::from([("variants".to_string(), json!(self.variant_tags()))]);
        self.manifest.record(&dir, stage, hash, inputs, &outputs, stats)
    }

    /// Stage J (evaluation): stratified k-fold CV per variant on the labeled
    /// training clients, plus a single held-out score.
    pub fn cmd_evaluate(&mut self) -> Result<()> {
        let stage = "evaluate";
        let dir = self.dir().to_path_buf();
        let variants = self
            .config
            .eval
            .variants
            .clone()
            .unwrap_or_else(|| self.variant_tags());
        let hash = config_hash(self.config.seed, &(&self.config.eval, &variants));
        let mut input_files = vec![("synth", StagePaths::dataset_manifest(&dir))];
        let variant_paths: Vec<PathBuf> = variants.iter().map(|v| StagePaths::export(&dir, v)).collect();
        for path in &variant_paths {
            input_files.push(("export", path.clone()));
        }
        let inputs = hash_inputs(&input_files)?;
        if self.manifest.is_fresh(stage, &hash, &inputs) {
            log::info!("evaluate: up to date");
            return Ok(());
        }

        let (dataset, _, _) = self.load_dataset_artifact()?;
        let train_idx = dataset.labeled_train_indices();
        let holdout_idx = dataset.holdout_indices();

        let mut reports: Vec<EvalReport> = Vec::new();
        let mut holdout_reports = Vec::new();
        for (variant, path) in variants.iter().zip(&variant_paths) {
            let file = read_embeddings(path)?;
            let vector_of = |i: usize| -> Result<Vec<f64>> {
                let client = &dataset.sequences[i].client_id;
                let row = file.row_of(client).ok_or_else(|| {
                    Error::Invalid(format!("variant {variant} is missing client {client}"))
                })?;
                Ok(file.vectors[row].clone())
            };
            let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| vector_of(i)).collect::<Result<_>>()?;
            let train_y: Vec<i64> = train_idx
                .iter()
                .map(|&i| dataset.sequences[i].label.expect("labeled"))
                .collect();
            let report = kfold_evaluate(
                &train_x,
                &train_y,
                self.config.eval.k,
                self.config.seed,
                &self.config.eval.task,
                variant,
            )?;
            reports.push(report);

            if !holdout_idx.is_empty() {
                let test_x: Vec<Vec<f64>> =
                    holdout_idx.iter().map(|&i| vector_of(i)).collect::<Result<_>>()?;
                let test_y: Vec<i64> = holdout_idx
                    .iter()
                    .map(|&i| dataset.sequences[i].label.expect("holdout is labeled"))
                    .collect();
                let (metric, value) = holdout_score(&train_x, &train_y, &test_x, &test_y)?;
                holdout_reports.push(json!({
                    "variant": variant,
                    "metric": metric,
                    "value": value,
                    "n_holdout": test_y.len(),
                }));
            }
        }

        let report_path = StagePaths::eval_report(&dir);
        write_json(&report_path, &reports)?;
        let holdout_path = StagePaths::holdout_report(&dir);
        write_json(&holdout_path, &holdout_reports)?;

        let stats = BTreeMap::from([("variants".to_string(), json!(variants.len()))]);
        self.manifest
            .record(&dir, stage, hash, inputs, &[report_path, holdout_path], stats)
    }

    /// Stage: throughput benchmark per variant.
    pub fn cmd_benchmark(&mut self) -> Result<()> {
        let stage = "benchmark";
        let dir = self.dir().to_path_buf();
        let hash = config_hash(self.config.seed, &(&self.config.benchmark, &self.config.alignment.heads));
        let mut input_files = vec![
            ("synth", StagePaths::dataset(&dir)),
            ("pretrain", StagePaths::encoder_ckpt(&dir)),
        ];
        for &head in &self.config.alignment.heads {
            input_files.push(("align", StagePaths::align_ckpt(&dir, head)));
        }
        let inputs = hash_inputs(&input_files)?;
        if self.manifest.is_fresh(stage, &hash, &inputs) {
            log::info!("benchmark: up to date");
            return Ok(());
        }

        let (dataset, names, _) = self.load_dataset_artifact()?;
        let coles_encoder = EncoderParams::load_checkpoint(&StagePaths::encoder_ckpt(&dir))?;
        let warmup = self.config.benchmark.warmup;
        let mut results: Vec<BenchResult> = Vec::new();

        // aggregate baseline timing
        {
            let mcc_vocab = dataset.mcc_vocab();
            let tx_vocab = dataset.tx_vocab();
            for seq in dataset.sequences.iter().take(warmup) {
                let _ = agg_features(seq, mcc_vocab, tx_vocab)?;
            }
            let t0 = std::time::Instant::now();
            for seq in &dataset.sequences {
                std::hint::black_box(agg_features(seq, mcc_vocab, tx_vocab)?);
            }
            let wall = t0.elapsed().as_secs_f64();
            results.push(BenchResult {
                variant: "agg".into(),
                samples_per_sec: dataset.n_clients() as f64 / wall,
                wall_seconds: wall,
                n_samples: dataset.n_clients(),
                params_count: 0,
            });
        }

        // pretrained encoder timing
        {
            for seq in dataset.sequences.iter().take(warmup) {
                let _ = encode(seq, &coles_encoder)?;
            }
            let t0 = std::time::Instant::now();
            for seq in &dataset.sequences {
                std::hint::black_box(encode(seq, &coles_encoder)?);
            }
            let wall = t0.elapsed().as_secs_f64();
            results.push(BenchResult {
                variant: "coles".into(),
                samples_per_sec: dataset.n_clients() as f64 / wall,
                wall_seconds: wall,
                n_samples: dataset.n_clients(),
                params_count: coles_encoder.param_count(),
            });
        }

        for &head in &self.config.alignment.heads {
            let align = AlignmentParams::load_checkpoint(&StagePaths::align_ckpt(&dir, head))?;
            let tag_s = format!("latte-s[{}]", head.tag());
            let tag_full = format!("latte[{}]", head.tag());
            let (s, full) = throughput_benchmark(
                &align,
                &names,
                &dataset,
                warmup,
                self.config.clients.mock_dim,
                self.config.mock_seed(),
                (&tag_s, &tag_full),
            )?;
            results.push(s);
            results.push(full);
        }

        let out = StagePaths::bench(&dir);
        write_json(&out, &results)?;
        let stats = BTreeMap::from([("variants".to_string(), json!(results.len()))]);
        self.manifest.record(&dir, stage, hash, inputs, &[out], stats)
    }

    /// Stage: figure-of-merit CSV + SVG from the eval and benchmark outputs.
    pub fn cmd_fom(&mut self) -> Result<()> {
        let stage = "fom";
        let dir = self.dir().to_path_buf();
        let hash = config_hash(self.config.seed, &"fom");
        let inputs = hash_inputs(&[
            ("evaluate", StagePaths::eval_report(&dir)),
            ("benchmark", StagePaths::bench(&dir)),
        ])?;
        if self.manifest.is_fresh(stage, &hash, &inputs) {
            log::info!("fom: up to date");
            return Ok(());
        }

        let reports: Vec<EvalReport> = read_json(&StagePaths::eval_report(&dir))?;
        let bench: Vec<BenchResult> = read_json(&StagePaths::bench(&dir))?;
        let csv = StagePaths::fom_csv(&dir);
        let svg = StagePaths::fom_svg(&dir);
        ensure_parent(&csv)?;
        fom_report(&reports, &bench, &csv, &svg)?;

        self.manifest
            .record(&dir, stage, hash, inputs, &[csv, svg], BTreeMap::new())
    }

    /// Runs every stage in dependency order.
    pub fn run_all(&mut self) -> Result<()> {
        self.cmd_synth()?;
        self.cmd_summarize()?;
        self.cmd_generate()?;
        self.cmd_embed_text()?;
        self.cmd_pretrain()?;
        self.cmd_align()?;
        self.cmd_export()?;
        self.cmd_evaluate()?;
        self.cmd_benchmark()?;
        self.cmd_fom()
    }

    /// Post-hoc retrieval diagnostic over the holdout clients.
    pub fn holdout_retrieval(&self, head: HeadKind) -> Result<f64> {
        let dir = self.dir();
        let (dataset, _, _) = self.load_dataset_artifact()?;
        let align = AlignmentParams::load_checkpoint(&StagePaths::align_ckpt(dir, head))?;
        let texts = self.read_text_embeddings()?;
        let holdout: Vec<usize> = dataset
            .holdout_indices()
            .into_iter()
            .filter(|&i| texts.contains_key(&dataset.sequences[i].client_id))
            .collect();
        if holdout.is_empty() {
            return Err(Error::Invalid("no holdout clients with text embeddings".into()));
        }
        retrieval_accuracy(&align, &dataset, &holdout, &texts)
    }
}

/// Convenience for tests and the binary: spot-check which clients are
/// holdout vs train after a pipeline run.
pub fn split_counts(dataset: &Dataset) -> (usize, usize, usize) {
    let mut labeled = 0;
    let mut unlabeled = 0;
    let mut holdout = 0;
    for tag in &dataset.splits {
        match tag {
            SplitTag::TrainLabeled => labeled += 1,
            SplitTag::TrainUnlabeled => unlabeled += 1,
            SplitTag::Holdout => holdout += 1,
        }
    }
    (labeled, unlabeled, holdout)
}
