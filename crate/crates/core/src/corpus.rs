//! Line-delimited JSON corpora: one `{"id", "text", "summary"?, "domain"?}`
//! record per line.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rouge::tokenize;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: record is missing `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: duplicate id {id:?} (first seen on line {first_line})")]
    DuplicateId {
        line: usize,
        first_line: usize,
        id: String,
    },
    #[error("invalid document {id:?}: {message}")]
    InvalidDocument { id: String, message: String },
    #[error("cannot sample {requested} documents from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            summary: None,
            domain: None,
        }
    }

    pub fn with_summary(mut self, summary: impl Into<String>) -> Self {
        self.summary = Some(summary.into());
        self
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = Some(domain.into());
        self
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |message: &str| CorpusError::InvalidDocument {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.is_empty() {
            return Err(bad("id is empty"));
        }
        if self.text.is_empty() {
            return Err(bad("text is empty"));
        }
        if matches!(&self.summary, Some(s) if s.is_empty()) {
            return Err(bad("summary is present but empty"));
        }
        Ok(())
    }
}

/// Loose on-disk shape so missing fields get a line-numbered error instead of
/// a generic serde message.
#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    text: Option<String>,
    summary: Option<String>,
    domain: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub name: String,
    pub documents: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus, checking per-document invariants and id uniqueness.
    pub fn new(name: impl Into<String>, documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, doc) in documents.iter().enumerate() {
            doc.validate()?;
            if !seen.insert(doc.id.as_str()) {
                let first = documents.iter().position(|d| d.id == doc.id).unwrap_or(0);
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    first_line: first + 1,
                    id: doc.id.clone(),
                });
            }
        }
        Ok(Corpus {
            name: name.into(),
            documents,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    /// Serializes to the line-delimited record format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(doc).expect("document serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let io = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = fs::File::create(path).map_err(io)?;
        file.write_all(self.to_jsonl().as_bytes()).map_err(io)
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.documents.iter()
    }
}

/// Parses line-delimited records. Blank lines are skipped but still counted
/// for line numbers.
pub fn parse_corpus(name: &str, reader: impl BufRead) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    let mut first_seen: std::collections::HashMap<String, usize> = Default::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = raw
            .id
            .filter(|s| !s.is_empty())
            .ok_or(CorpusError::MissingField {
                line: line_no,
                field: "id",
            })?;
        let text = raw
            .text
            .filter(|s| !s.is_empty())
            .ok_or(CorpusError::MissingField {
                line: line_no,
                field: "text",
            })?;
        if let Some(&first_line) = first_seen.get(&id) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                first_line,
                id,
            });
        }
        if matches!(&raw.summary, Some(s) if s.is_empty()) {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "summary is present but empty".into(),
            });
        }
        first_seen.insert(id.clone(), line_no);
        documents.push(Document {
            id,
            text,
            summary: raw.summary,
            domain: raw.domain,
        });
    }
    Ok(Corpus {
        name: name.to_string(),
        documents,
    })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_corpus(&name, BufReader::new(file))
}

/// Uniform sample of `n` documents without replacement, in original order.
///
/// Uses ChaCha8 seeded with `seed`, so the sample is stable across platforms.
pub fn sample_corpus(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus, CorpusError> {
    if n > corpus.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, corpus.len(), n).into_vec();
    picked.sort_unstable();
    Ok(Corpus {
        name: corpus.name.clone(),
        documents: picked
            .into_iter()
            .map(|i| corpus.documents[i].clone())
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub avg_text_tokens: f64,
    pub avg_summary_tokens: f64,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let count = corpus.len();
    let text_total: usize = corpus.iter().map(|d| tokenize(&d.text).len()).sum();
    let summaries: Vec<usize> = corpus
        .iter()
        .filter_map(|d| d.summary.as_deref())
        .map(|s| tokenize(s).len())
        .collect();
    let mean = |total: usize, n: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    CorpusStats {
        count,
        avg_text_tokens: mean(text_total, count),
        avg_summary_tokens: mean(summaries.iter().sum(), summaries.len()),
    }
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "documents: {}\navg text tokens: {:.1}\navg summary tokens: {:.1}",
            self.count, self.avg_text_tokens, self.avg_summary_tokens
        )
    }
}
