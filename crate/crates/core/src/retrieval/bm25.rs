//! Okapi BM25 over the shared tokenizer.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{rank_hits, RetrievalError, RetrievalHit};
use crate::corpus::Corpus;
use crate::rouge::tokenize;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Index {
    pub doc_ids: Vec<String>,
    pub doc_freq: HashMap<String, usize>,
    pub doc_term_freq: Vec<HashMap<String, usize>>,
    pub doc_len: Vec<usize>,
    pub avgdl: f64,
    pub k1: f64,
    pub b: f64,
}

/// Non-negative idf: ln((N - df + 0.5) / (df + 0.5) + 1).
pub fn idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

pub fn build_bm25(corpus: &Corpus, k1: f64, b: f64) -> Result<Bm25Index, RetrievalError> {
    if corpus.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    if !(k1 > 0.0 && k1.is_finite()) {
        return Err(RetrievalError::InvalidParameter(format!("k1 must be > 0, got {k1}")));
    }
    if !(0.0..=1.0).contains(&b) {
        return Err(RetrievalError::InvalidParameter(format!("b must lie in [0, 1], got {b}")));
    }
    let mut doc_freq: HashMap<String, usize> = HashMap::new();
    let mut doc_term_freq = Vec::with_capacity(corpus.len());
    let mut doc_len = Vec::with_capacity(corpus.len());
    for doc in corpus {
        let tokens = tokenize(&doc.text);
        let mut tf: HashMap<String, usize> = HashMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_insert(0) += 1;
        }
        for term in tf.keys() {
            *doc_freq.entry(term.clone()).or_insert(0) += 1;
        }
        doc_len.push(tokens.len());
        doc_term_freq.push(tf);
    }
    let avgdl = doc_len.iter().sum::<usize>() as f64 / doc_len.len() as f64;
    Ok(Bm25Index {
        doc_ids: corpus.iter().map(|d| d.id.clone()).collect(),
        doc_freq,
        doc_term_freq,
        doc_len,
        avgdl,
        k1,
        b,
    })
}

impl Bm25Index {
    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    /// BM25 score of every indexed document, in index order. Repeated query
    /// terms contribute once per occurrence.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let query_terms = tokenize(query);
        let n = self.n_docs();
        let idfs: Vec<Option<f64>> = query_terms
            .iter()
            .map(|t| self.doc_freq.get(t).map(|&df| idf(n, df)))
            .collect();
        (0..n)
            .map(|d| {
                let len_ratio = if self.avgdl > 0.0 {
                    self.doc_len[d] as f64 / self.avgdl
                } else {
                    1.0
                };
                let norm = self.k1 * (1.0 - self.b + self.b * len_ratio);
                query_terms
                    .iter()
                    .zip(&idfs)
                    .filter_map(|(t, idf)| {
                        let idf = (*idf)?;
                        let tf = *self.doc_term_freq[d].get(t)? as f64;
                        Some(idf * tf * (self.k1 + 1.0) / (tf + norm))
                    })
                    .sum()
            })
            .collect()
    }
}

pub fn retrieve_sparse(
    index: &Bm25Index,
    query: &str,
    top_k: usize,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if top_k == 0 {
        return Err(RetrievalError::InvalidTopK);
    }
    let scores = index.scores(query);
    Ok(rank_hits(
        index.doc_ids.iter().cloned().zip(scores).collect(),
        top_k,
    ))
}
