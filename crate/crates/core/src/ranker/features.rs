//! Per-(document, summary) input features for the projection network.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::RankerError;
use crate::corpus::Document;
use crate::retrieval::{EmbedInput, EmbeddingProvider, EmbeddingVector};
use crate::rouge::tokenize;

pub const LEXICAL_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerFeatures {
    /// L2-normalized document embedding (zero when the provider returns zero).
    pub doc_embedding: EmbeddingVector,
    /// L2-normalized summary embedding.
    pub summary_embedding: EmbeddingVector,
    /// `[unigram overlap with document, |summary| / |document|, novel-bigram ratio]`.
    pub lexical: [f64; LEXICAL_DIM],
}

impl RankerFeatures {
    pub fn input_dim(embedding_dim: usize) -> usize {
        2 * embedding_dim + LEXICAL_DIM
    }

    /// Network input: document embedding, summary embedding, lexical triple.
    pub fn to_input(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.doc_embedding.dim() * 2 + LEXICAL_DIM);
        x.extend_from_slice(self.doc_embedding.values());
        x.extend_from_slice(self.summary_embedding.values());
        x.extend_from_slice(&self.lexical);
        x
    }
}

/// Lexical features from the shared tokenizer.
///
/// Unigram overlap is the fraction of summary tokens present in the document.
/// The novel-bigram ratio is the fraction of summary bigrams absent from the
/// document; for one-token summaries it falls back to the novel-unigram ratio.
pub fn lexical_features(document: &str, summary: &str) -> [f64; LEXICAL_DIM] {
    let doc = tokenize(document);
    let sum = tokenize(summary);
    if sum.is_empty() {
        return [0.0; LEXICAL_DIM];
    }
    let doc_unigrams: HashSet<&str> = doc.iter().map(String::as_str).collect();
    let overlap =
        sum.iter().filter(|t| doc_unigrams.contains(t.as_str())).count() as f64 / sum.len() as f64;
    let length_ratio = sum.len() as f64 / doc.len().max(1) as f64;
    let novel_bigrams = if sum.len() < 2 {
        1.0 - overlap
    } else {
        let doc_bigrams: HashSet<(&str, &str)> =
            doc.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect();
        let total = sum.len() - 1;
        let novel = sum
            .windows(2)
            .filter(|w| !doc_bigrams.contains(&(w[0].as_str(), w[1].as_str())))
            .count();
        novel as f64 / total as f64
    };
    [overlap, length_ratio, novel_bigrams]
}

fn unit(v: EmbeddingVector) -> EmbeddingVector {
    EmbeddingVector::new(v.normalized_or_zero()).expect("normalized vector stays finite")
}

pub fn featurize(
    doc: &Document,
    summary: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<RankerFeatures, RankerError> {
    let doc_embedding = embed_document(doc, provider)?;
    featurize_with_doc_embedding(doc, &doc_embedding, summary, provider)
}

pub(crate) fn embed_document(
    doc: &Document,
    provider: &dyn EmbeddingProvider,
) -> Result<EmbeddingVector, RankerError> {
    provider
        .embed(EmbedInput::keyed(&doc.id, &doc.text))
        .map(unit)
        .map_err(|source| RankerError::Provider {
            context: format!("document {:?}", doc.id),
            source,
        })
}

/// Same as [`featurize`] with the (already normalized) document embedding supplied.
pub(crate) fn featurize_with_doc_embedding(
    doc: &Document,
    doc_embedding: &EmbeddingVector,
    summary: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<RankerFeatures, RankerError> {
    if summary.is_empty() {
        return Err(RankerError::EmptyCandidate {
            doc_id: doc.id.clone(),
        });
    }
    let summary_embedding = provider
        .embed(EmbedInput::text(summary))
        .map(unit)
        .map_err(|source| RankerError::Provider {
            context: format!("summary for document {:?}", doc.id),
            source,
        })?;
    if summary_embedding.dim() != doc_embedding.dim() {
        return Err(RankerError::DimMismatch {
            expected: doc_embedding.dim(),
            found: summary_embedding.dim(),
        });
    }
    Ok(RankerFeatures {
        doc_embedding: doc_embedding.clone(),
        summary_embedding,
        lexical: lexical_features(&doc.text, summary),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::HashedProjection;

    #[test]
    fn self_summary() {
        let text = "the quick brown fox jumps over the lazy dog";
        let [overlap, len, novel] = lexical_features(text, text);
        assert_eq!((overlap, len, novel), (1.0, 1.0, 0.0));
    }

    #[test]
    fn disjoint_summary() {
        let [overlap, _, novel] = lexical_features("alpha beta gamma", "delta epsilon");
        assert_eq!((overlap, novel), (0.0, 1.0));
    }

    #[test]
    fn length_ratio() {
        let doc: Vec<String> = (0..50).map(|i| format!("w{i}")).collect();
        let [_, len, _] = lexical_features(&doc.join(" "), "w1 w2 w3 w4 w5");
        assert!((len - 0.1).abs() < 1e-15);
    }

    #[test]
    fn featurize_is_deterministic_and_sized() {
        let p = HashedProjection::new(16, 3);
        let doc = Document::new("d", "markets rallied on friday");
        let a = featurize(&doc, "markets rallied", &p).unwrap();
        let b = featurize(&doc, "markets rallied", &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_input().len(), RankerFeatures::input_dim(16));
        assert!((a.summary_embedding.norm() - 1.0).abs() < 1e-12);
        assert!(matches!(
            featurize(&doc, "", &p),
            Err(RankerError::EmptyCandidate { .. })
        ));
    }
}
