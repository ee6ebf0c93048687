//! Planted-signal fixtures for tests, benchmarks and offline demos.
//!
//! Each document is a run of `w<n>` tokens; its gold summary is an in-order
//! subsequence of the document. A candidate keeps some of the gold tokens in
//! place and swaps the rest for `z<n>` filler tokens that never occur in any
//! document, so a candidate keeping `m` of `L` gold tokens has ROUGE-L F1
//! exactly `m / L` and unigram overlap with the document exactly `m / L`.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::collections::HashMap;

use crate::corpus::Document;
use crate::llm::{render_candidates, ChatRequest, ChatTransport, Role, TransportError};
use crate::ranker::TrainingInstance;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub doc_len: usize,
    pub summary_len: usize,
    pub vocab: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            doc_len: 40,
            summary_len: 10,
            vocab: 400,
            k: 5,
            seed: 7,
        }
    }
}

impl PlantedConfig {
    /// Number of gold tokens kept by each quality level, spread evenly over
    /// `1..summary_len` and strictly increasing.
    pub fn kept_levels(&self) -> Vec<usize> {
        let l = self.summary_len;
        assert!(self.k >= 1 && l > self.k, "summary_len must exceed k");
        (0..self.k)
            .map(|i| 1 + (i * (l - 2)) / (self.k - 1).max(1))
            .collect()
    }
}

/// `n` documents with gold summaries, ids `<prefix><i>`.
pub fn planted_documents(cfg: &PlantedConfig, prefix: &str, n: usize) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..n)
        .map(|i| {
            let tokens: Vec<String> = (0..cfg.doc_len)
                .map(|_| format!("w{}", rng.random_range(0..cfg.vocab)))
                .collect();
            let mut keep = index::sample(&mut rng, cfg.doc_len, cfg.summary_len).into_vec();
            keep.sort_unstable();
            let gold: Vec<&str> = keep.iter().map(|&p| tokens[p].as_str()).collect();
            Document::new(format!("{prefix}{i}"), tokens.join(" ")).with_summary(gold.join(" "))
        })
        .collect()
}

/// A candidate keeping `kept` gold tokens at random positions.
pub fn degrade(gold: &str, kept: usize, rng: &mut impl Rng) -> String {
    let tokens: Vec<&str> = gold.split_whitespace().collect();
    let kept = kept.min(tokens.len());
    let keep = index::sample(rng, tokens.len(), kept).into_vec();
    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if keep.contains(&i) {
                t.to_string()
            } else {
                format!("z{}", rng.random_range(0..1000))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// One candidate per quality level, shuffled. With `with_gold`, the gold
/// summary replaces the strongest candidate.
pub fn planted_candidates(
    cfg: &PlantedConfig,
    doc: &Document,
    with_gold: bool,
    rng: &mut impl Rng,
) -> Vec<String> {
    let gold = doc.summary.as_deref().expect("planted documents carry a summary");
    let mut out: Vec<String> = cfg
        .kept_levels()
        .into_iter()
        .map(|kept| degrade(gold, kept, rng))
        .collect();
    if with_gold {
        let last = out.len() - 1;
        out[last] = gold.to_string();
    }
    out.shuffle(rng);
    out
}

/// Training instances over `n` fresh documents.
pub fn planted_instances(cfg: &PlantedConfig, prefix: &str, n: usize, with_gold: bool) -> Vec<TrainingInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0ffee);
    planted_documents(cfg, prefix, n)
        .into_iter()
        .map(|doc| {
            let cands = planted_candidates(cfg, &doc, with_gold, &mut rng);
            TrainingInstance::from_candidates(doc, cands).expect("planted instance is valid")
        })
        .collect()
}

/// Scripted chat endpoint answering for planted documents.
///
/// The target document is the one whose text appears last in the most recent
/// non-corrective user turn. Zero-shot requests get one unenumerated summary
/// keeping `zero_kept` gold tokens; demonstration requests get the document's
/// planted candidate list. A document listed in `malformed` gets that many
/// unparseable replies before a well-formed one.
pub struct PlantedChat {
    cfg: PlantedConfig,
    docs: Vec<Document>,
    zero_kept: usize,
    malformed: HashMap<String, usize>,
}

const CORRECTIVE_PREFIX: &str = "Answer in this format";

impl PlantedChat {
    pub fn new(cfg: PlantedConfig, docs: Vec<Document>, zero_kept: usize) -> Self {
        PlantedChat {
            cfg,
            docs,
            zero_kept,
            malformed: HashMap::new(),
        }
    }

    pub fn with_malformed(mut self, doc_id: impl Into<String>, replies: usize) -> Self {
        self.malformed.insert(doc_id.into(), replies);
        self
    }

    fn rng_for(&self, doc_id: &str, salt: u64) -> ChaCha8Rng {
        let h = doc_id
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        ChaCha8Rng::seed_from_u64(self.cfg.seed ^ h ^ salt)
    }

    /// The reply list this endpoint gives for `doc` once it answers in format.
    pub fn candidates_for(&self, doc: &Document) -> Vec<String> {
        planted_candidates(&self.cfg, doc, false, &mut self.rng_for(&doc.id, 1))
    }

    pub fn zero_shot_for(&self, doc: &Document) -> String {
        let gold = doc.summary.as_deref().unwrap_or_default();
        degrade(gold, self.zero_kept, &mut self.rng_for(&doc.id, 2))
    }
}

impl ChatTransport for PlantedChat {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        let (turn, corrections) = {
            let users: Vec<&str> = request
                .messages
                .iter()
                .filter(|m| m.role == Role::User)
                .map(|m| m.content.as_str())
                .collect();
            let corrections = users.iter().filter(|u| u.starts_with(CORRECTIVE_PREFIX)).count();
            let turn = users
                .iter()
                .rev()
                .find(|u| !u.starts_with(CORRECTIVE_PREFIX))
                .copied()
                .unwrap_or_default();
            (turn, corrections)
        };
        let doc = self
            .docs
            .iter()
            .filter_map(|d| turn.rfind(&d.text).map(|pos| (pos, d)))
            .max_by_key(|(pos, _)| *pos)
            .map(|(_, d)| d)
            .ok_or_else(|| TransportError::Fatal("request names no known document".into()))?;
        if turn.starts_with("Generate a summary") {
            return Ok(self.zero_shot_for(doc));
        }
        if corrections < self.malformed.get(&doc.id).copied().unwrap_or(0) {
            return Ok("Here are some summaries of the text above.".into());
        }
        Ok(render_candidates(&self.candidates_for(doc)))
    }

    fn acknowledge(&self, _request: &ChatRequest<'_>) -> Result<String, TransportError> {
        Ok("Understood.".into())
    }
}
