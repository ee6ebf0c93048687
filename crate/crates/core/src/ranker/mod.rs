//! Candidate reranker: a projection network trained contrastively, plus a
//! linear scoring head trained on normalized ROUGE-L with the network frozen.

pub mod features;
pub mod loss;
pub mod net;
pub mod train;

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{featurize, lexical_features, RankerFeatures};
pub use loss::{
    info_nce_gradient, info_nce_loss, info_nce_with_grads, normalize_labels, select_positive,
    soft_cross_entropy, softmax,
};
pub use net::{ForwardTrace, NetGradient, ProjectionNet};
pub use train::{
    contrastive_margin, featurize_instances, train_phase1, train_phase1_featurized, train_phase2,
    train_phase2_featurized, Adam, FeaturizedInstance, Phase1Result, Phase2Result,
};

use crate::corpus::Document;
use crate::retrieval::{EmbeddingProvider, ProviderError};
use crate::rouge::rouge_l_f1;
use features::{embed_document, featurize_with_doc_embedding};

pub const CHECKPOINT_VERSION: &str = "pads-ranker/1";

/// Backbone rate used for the 400M-parameter encoder-decoder; far too small
/// for the desk-scale network, kept for reference runs.
pub const REFERENCE_LR_BACKBONE: f64 = 1e-6;
pub const DEFAULT_LR_BACKBONE: f64 = 1e-3;
pub const DEFAULT_LR_HEAD: f64 = 3e-4;
pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Debug, Error)]
pub enum RankerError {
    #[error("embedding failed for {context}: {source}")]
    Provider {
        context: String,
        #[source]
        source: ProviderError,
    },
    #[error("empty candidate for document {doc_id:?}")]
    EmptyCandidate { doc_id: String },
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("projection has zero norm")]
    ZeroNorm,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("positive index {index} out of range for {k} candidates")]
    InvalidPositive { index: usize, k: usize },
    #[error("invalid training instance: {0}")]
    InvalidInstance(String),
    #[error("no training instances")]
    EmptyInstances,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model was trained with provider {expected}, scoring with {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("checkpoint version {found:?} is not supported (expected {expected:?})")]
    VersionMismatch { expected: String, found: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub tau: f64,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: DEFAULT_TAU,
            lr_backbone: DEFAULT_LR_BACKBONE,
            lr_head: DEFAULT_LR_HEAD,
            epochs_phase1: 10,
            epochs_phase2: 20,
            batch_size: 16,
            hidden_dim: 64,
            proj_dim: 32,
            seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RankerError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(RankerError::InvalidTemperature(self.tau));
        }
        for (name, lr) in [("lr_backbone", self.lr_backbone), ("lr_head", self.lr_head)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(RankerError::InvalidConfig(format!("{name} must be > 0, got {lr}")));
            }
        }
        if self.batch_size == 0 || self.hidden_dim == 0 || self.proj_dim == 0 {
            return Err(RankerError::InvalidConfig(
                "batch_size, hidden_dim and proj_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A document, its candidates, and each candidate's ROUGE-L F1 against the gold summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub doc: Document,
    pub candidates: Vec<String>,
    pub rouge_l: Vec<f64>,
}

impl TrainingInstance {
    pub fn from_candidates(doc: Document, candidates: Vec<String>) -> Result<Self, RankerError> {
        let gold = doc.summary.as_deref().ok_or_else(|| {
            RankerError::InvalidInstance(format!("{:?} has no gold summary", doc.id))
        })?;
        let rouge_l = candidates.iter().map(|c| rouge_l_f1(c, gold)).collect();
        let inst = TrainingInstance {
            doc,
            candidates,
            rouge_l,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), RankerError> {
        let id = &self.doc.id;
        let bad = |m: String| Err(RankerError::InvalidInstance(format!("{id:?}: {m}")));
        if self.doc.summary.as_deref().is_none_or(str::is_empty) {
            return bad("missing gold summary".into());
        }
        if self.candidates.len() < 2 {
            return bad(format!("{} candidates, need at least 2", self.candidates.len()));
        }
        if self.candidates.len() != self.rouge_l.len() {
            return bad("candidate and label counts differ".into());
        }
        if self.candidates.iter().any(String::is_empty) {
            return Err(RankerError::EmptyCandidate { doc_id: id.clone() });
        }
        if self.rouge_l.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("ROUGE-L labels must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Line record of a training-instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub doc_id: String,
    pub text: String,
    pub summary: String,
    pub candidates: Vec<String>,
    pub rouge_l: Vec<f64>,
}

impl From<&TrainingInstance> for TrainingRecord {
    fn from(inst: &TrainingInstance) -> Self {
        TrainingRecord {
            doc_id: inst.doc.id.clone(),
            text: inst.doc.text.clone(),
            summary: inst.doc.summary.clone().unwrap_or_default(),
            candidates: inst.candidates.clone(),
            rouge_l: inst.rouge_l.clone(),
        }
    }
}

impl TryFrom<TrainingRecord> for TrainingInstance {
    type Error = RankerError;

    fn try_from(r: TrainingRecord) -> Result<Self, Self::Error> {
        let inst = TrainingInstance {
            doc: Document::new(r.doc_id, r.text).with_summary(r.summary),
            candidates: r.candidates,
            rouge_l: r.rouge_l,
        };
        inst.validate()?;
        Ok(inst)
    }
}

pub fn save_training_instances(path: impl AsRef<Path>, instances: &[TrainingInstance]) -> Result<(), RankerError> {
    let path = path.as_ref();
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(&TrainingRecord::from(inst)).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| RankerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_training_instances(path: impl AsRef<Path>) -> Result<Vec<TrainingInstance>, RankerError> {
    let path = path.as_ref();
    let io = |source| RankerError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrainingRecord = serde_json::from_str(&line)
            .map_err(|e| RankerError::InvalidInstance(format!("line {}: {e}", i + 1)))?;
        out.push(rec.try_into()?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringHead {
    pub w: Vec<f64>,
    pub b: f64,
}

impl ScoringHead {
    pub fn zeros(dim: usize) -> Self {
        ScoringHead {
            w: vec![0.0; dim],
            b: 0.0,
        }
    }

    pub fn logit(&self, projection: &[f64]) -> f64 {
        net::dot(&self.w, projection) + self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankerModel {
    pub version: String,
    pub provider_fingerprint: String,
    pub embedding_dim: usize,
    pub train_config: TrainConfig,
    pub net: ProjectionNet,
    pub head: ScoringHead,
}

impl RankerModel {
    pub fn new(
        net: ProjectionNet,
        head: ScoringHead,
        provider: &dyn EmbeddingProvider,
        train_config: TrainConfig,
    ) -> Result<Self, RankerError> {
        let model = RankerModel {
            version: CHECKPOINT_VERSION.to_string(),
            provider_fingerprint: provider.fingerprint(),
            embedding_dim: provider.dim(),
            train_config,
            net,
            head,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), RankerError> {
        self.net.validate()?;
        if self.net.input_dim != RankerFeatures::input_dim(self.embedding_dim) {
            return Err(RankerError::Corrupt(format!(
                "network input dim {} does not match embedding dim {}",
                self.net.input_dim, self.embedding_dim
            )));
        }
        if self.head.w.len() != self.net.proj_dim {
            return Err(RankerError::Corrupt("head width differs from projection dim".into()));
        }
        if !self.head.b.is_finite() || self.head.w.iter().any(|w| !w.is_finite()) {
            return Err(RankerError::Corrupt("non-finite head weight".into()));
        }
        Ok(())
    }

    /// Head logits for each candidate, in input order.
    pub fn logits(
        &self,
        doc: &Document,
        candidates: &[String],
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vec<f64>, RankerError> {
        let found = provider.fingerprint();
        if found != self.provider_fingerprint {
            return Err(RankerError::FingerprintMismatch {
                expected: self.provider_fingerprint.clone(),
                found,
            });
        }
        if candidates.is_empty() {
            return Err(RankerError::NoCandidates);
        }
        let doc_emb = embed_document(doc, provider)?;
        candidates
            .iter()
            .map(|c| {
                let f = featurize_with_doc_embedding(doc, &doc_emb, c, provider)?;
                Ok(self.head.logit(&self.net.project(&f.to_input())?))
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RankerError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, text).map_err(|source| RankerError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RankerError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| RankerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, RankerError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| RankerError::Corrupt(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(serde_json::Value::as_str)
            .ok_or_else(|| RankerError::Corrupt("missing version tag".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(RankerError::VersionMismatch {
                expected: CHECKPOINT_VERSION.into(),
                found: version.into(),
            });
        }
        let model: RankerModel =
            serde_json::from_value(value).map_err(|e| RankerError::Corrupt(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }
}

/// Trains both phases and packages the checkpoint.
pub fn train_ranker(
    instances: &[TrainingInstance],
    cfg: &TrainConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<(RankerModel, Phase1Result, Phase2Result), RankerError> {
    if instances.is_empty() {
        return Err(RankerError::EmptyInstances);
    }
    let data = featurize_instances(instances, provider)?;
    let p1 = train_phase1_featurized(&data, cfg)?;
    let p2 = train_phase2_featurized(&p1.net, &data, cfg)?;
    let model = RankerModel::new(p1.net.clone(), p2.head.clone(), provider, cfg.clone())?;
    Ok((model, p1, p2))
}

/// Softmax over head logits across the candidate set.
pub fn score_candidates(
    model: &RankerModel,
    doc: &Document,
    candidates: &[String],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<f64>, RankerError> {
    Ok(softmax(&model.logits(doc, candidates, provider)?))
}

/// Highest-probability candidate; lowest index on ties.
pub fn select_best(
    model: &RankerModel,
    doc: &Document,
    candidates: &[String],
    provider: &dyn EmbeddingProvider,
) -> Result<usize, RankerError> {
    let scores = score_candidates(model, doc, candidates, provider)?;
    Ok(argmax_first(&scores))
}

pub(crate) fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
