//! Experiment configuration and the end-to-end run: ingest, index, train
//! embeddings, evaluate, write artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{ingest, Corpus, CorpusError, CorpusFormat};
use crate::embed::{build_training_corpus, EmbedError, EmbeddingModel, Hyperparams};
use crate::eval::{run_protocol, EvalError, EvaluationReport, ProtocolConfig};
use crate::recommend::{AlgorithmId, RecommendConfig, Resources};
use crate::report;
use crate::synth::{generate_synthetic, SynthProfile};
use crate::text::{default_stopwords, load_stopwords, PreprocessConfig};
use crate::tfidf::TfidfParams;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";
pub const MODEL_FILE: &str = "embeddings.bin";

/// Pipeline failure tagged with the stage it happened in.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Data { stage: &'static str, message: String },
    #[error("{stage}: {message}")]
    Numeric { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data { .. } => 3,
            PipelineError::Numeric { .. } => 4,
        }
    }

    pub fn data(stage: &'static str, e: impl std::fmt::Display) -> Self {
        PipelineError::Data {
            stage,
            message: e.to_string(),
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Parameter { .. } => PipelineError::Config(e.to_string()),
            _ => PipelineError::data("ingest", e),
        }
    }
}

impl From<EmbedError> for PipelineError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::NonFinite { .. } => PipelineError::Numeric {
                stage: "train-embeddings",
                message: e.to_string(),
            },
            EmbedError::Hyperparameter(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::data("train-embeddings", e),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::BadFraction(_) | EvalError::ZeroK | EvalError::Recommend(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::data("evaluate", e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSource {
    pub seed: u64,
    pub n_books: usize,
    pub profile: SynthProfile,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        SyntheticSource {
            seed: 1,
            n_books: 5000,
            profile: SynthProfile::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSource {
    /// JSONL or CSV file; when absent the synthetic generator is used.
    pub path: Option<PathBuf>,
    pub format: Option<CorpusFormat>,
    pub synthetic: SyntheticSource,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessingSection {
    /// One stopword per line; the built-in list is used when absent.
    pub stopwords: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub preprocessing: PreprocessingSection,
    pub tfidf: TfidfParams,
    pub top_n: usize,
    pub embedding: Hyperparams,
    /// Pre-trained model to load instead of training one.
    pub embedding_model: Option<PathBuf>,
    pub algorithms: Vec<String>,
    pub protocol: ProtocolConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusSource::default(),
            preprocessing: PreprocessingSection::default(),
            tfidf: TfidfParams::default(),
            top_n: 20,
            embedding: Hyperparams::default(),
            embedding_model: None,
            algorithms: AlgorithmId::all().iter().map(ToString::to_string).collect(),
            protocol: ProtocolConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self, PipelineError> {
        toml::from_str(s).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let s = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<Vec<AlgorithmId>, PipelineError> {
        let algorithms = self.algorithm_ids()?;
        if algorithms.is_empty() {
            return Err(PipelineError::Config("algorithms: empty list".into()));
        }
        self.embedding.validate().map_err(|e| PipelineError::Config(format!("embedding: {e}")))?;
        self.protocol.validate().map_err(|e| PipelineError::Config(format!("protocol: {e}")))?;
        if let Some(sel) = &self.protocol.selection {
            sel.validate().map_err(|e| PipelineError::Config(format!("protocol.selection: {e}")))?;
        }
        if self.top_n == 0 {
            return Err(PipelineError::Config("top_n: must be at least 1".into()));
        }
        if self.corpus.path.is_none() {
            self.corpus
                .synthetic
                .profile
                .validate()
                .map_err(|e| PipelineError::Config(format!("corpus.synthetic: {e}")))?;
        }
        Ok(algorithms)
    }

    pub fn algorithm_ids(&self) -> Result<Vec<AlgorithmId>, PipelineError> {
        let ids = self
            .algorithms
            .iter()
            .map(|s| s.parse::<AlgorithmId>().map_err(|e| PipelineError::Config(format!("algorithms: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(PipelineError::Config(format!("algorithms: `{dup}` listed twice")));
        }
        Ok(ids)
    }

    pub fn preprocess_config(&self) -> Result<PreprocessConfig, PipelineError> {
        let stopwords = match &self.preprocessing.stopwords {
            Some(p) => load_stopwords(p).map_err(|e| PipelineError::data("preprocessing", format!("{}: {e}", p.display())))?,
            None => default_stopwords(),
        };
        Ok(PreprocessConfig {
            stopwords,
            min_word_length: 1,
        })
    }

    pub fn recommend_config(&self) -> RecommendConfig {
        RecommendConfig {
            tfidf: self.tfidf,
            top_n: self.top_n,
        }
    }

    pub fn load_corpus(&self) -> Result<Corpus, PipelineError> {
        match &self.corpus.path {
            Some(path) => {
                let format = self.corpus.format.unwrap_or_else(|| CorpusFormat::from_path(path));
                Ok(ingest(path, format)?)
            }
            None => {
                let s = &self.corpus.synthetic;
                Ok(generate_synthetic(s.seed, s.n_books, &s.profile)?)
            }
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::data("ingest", format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun an experiment bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub inputs: Vec<InputDigest>,
    /// Digest of the ingested corpus in canonical JSONL form.
    pub corpus_sha256: String,
    pub n_books: usize,
    pub model_sha256: String,
    pub report_sha256: String,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let s = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&s).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Fails when an input file no longer matches its recorded digest.
    pub fn verify_inputs(&self) -> Result<(), PipelineError> {
        for input in &self.inputs {
            let now = file_digest(&input.path)?;
            if now != input.sha256 {
                return Err(PipelineError::data(
                    "manifest",
                    format!("{} changed since the manifest was written", input.path.display()),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: EvaluationReport,
    pub manifest: Manifest,
    pub model: EmbeddingModel,
}

pub fn train_embeddings(corpus: &Corpus, hyper: &Hyperparams, preprocessing: &PreprocessConfig) -> Result<EmbeddingModel, PipelineError> {
    let training = build_training_corpus(corpus, preprocessing)?;
    if !training.skipped.is_empty() {
        log::info!("{} books without text skipped for embedding training", training.skipped.len());
    }
    Ok(EmbeddingModel::train(&training.docs, hyper, preprocessing)?)
}

/// Runs the whole experiment in memory.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput, PipelineError> {
    let algorithms = config.validate()?;
    let preprocessing = config.preprocess_config()?;
    let mut inputs = Vec::new();
    if let Some(p) = &config.corpus.path {
        inputs.push(InputDigest {
            path: p.clone(),
            sha256: file_digest(p)?,
        });
    }
    if let Some(p) = &config.preprocessing.stopwords {
        inputs.push(InputDigest {
            path: p.clone(),
            sha256: file_digest(p)?,
        });
    }

    let corpus = config.load_corpus()?;
    log::info!("corpus: {} books", corpus.len());
    let model = match &config.embedding_model {
        Some(p) => {
            inputs.push(InputDigest {
                path: p.clone(),
                sha256: file_digest(p)?,
            });
            EmbeddingModel::load(p)?
        }
        None => train_embeddings(&corpus, &config.embedding, &preprocessing)?,
    };
    log::info!("embedding model {}", model.content_hash());

    let mut resources = Resources::build(&corpus, &config.recommend_config(), &preprocessing);
    let report = run_protocol(&corpus, &mut resources, &algorithms, &model, &config.protocol)?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        inputs,
        corpus_sha256: sha256_hex(corpus.to_jsonl().as_bytes()),
        n_books: corpus.len(),
        model_sha256: model.content_hash(),
        report_sha256: sha256_hex(report.to_json().as_bytes()),
    };
    Ok(RunOutput { report, manifest, model })
}

/// Files written so far; removed again unless the run completes.
struct Artifacts {
    written: Vec<PathBuf>,
    done: bool,
}

impl Artifacts {
    fn write(&mut self, path: PathBuf, contents: &[u8]) -> Result<(), PipelineError> {
        fs::write(&path, contents).map_err(|e| PipelineError::data("write-artifacts", format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }
}

impl Drop for Artifacts {
    fn drop(&mut self) {
        if !self.done {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// Runs the experiment and writes manifest, reports and the embedding model
/// under `out_dir`. Nothing is left behind on failure.
pub fn run_to_dir(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput, PipelineError> {
    let out = run(config)?;
    fs::create_dir_all(out_dir).map_err(|e| PipelineError::data("write-artifacts", format!("{}: {e}", out_dir.display())))?;
    let mut artifacts = Artifacts {
        written: Vec::new(),
        done: false,
    };
    artifacts.write(out_dir.join(REPORT_JSON), out.report.to_json().as_bytes())?;
    artifacts.write(out_dir.join(REPORT_CSV), report::to_csv(&out.report).as_bytes())?;
    artifacts.write(out_dir.join(REPORT_MD), report::to_markdown(&out.report).as_bytes())?;
    if config.embedding_model.is_none() {
        artifacts.write(out_dir.join(MODEL_FILE), &out.model.to_bytes())?;
    }
    let manifest = serde_json::to_string_pretty(&out.manifest).expect("manifest serializes");
    artifacts.write(out_dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    artifacts.done = true;
    Ok(out)
}
