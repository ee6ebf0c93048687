//! Demonstration retrieval: BM25, ROUGE-L overlap, or dense cosine similarity
//! behind one [`Retriever`].

pub mod bm25;
pub mod embedding;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{build_bm25, retrieve_sparse, Bm25Index};
pub use embedding::{
    cosine_similarity, EmbedInput, EmbeddingProvider, EmbeddingVector, HashedProjection,
    PrecomputedEmbeddings, ProviderError, RemoteEmbeddings, VectorError,
};

use crate::corpus::{Corpus, Document};
use crate::rouge::{rouge_l, tokenize};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("top_k must be at least 1")]
    InvalidTopK,
    #[error("{0}")]
    InvalidParameter(String),
    #[error("embedding failed for {doc_id:?}: {source}")]
    Provider {
        doc_id: String,
        #[source]
        source: ProviderError,
    },
    #[error("similarity for {doc_id:?}: {source}")]
    Vector {
        doc_id: String,
        #[source]
        source: VectorError,
    },
    #[error("no pool document with a gold summary is eligible as a demonstration for {doc_id:?}")]
    NoDemonstration { doc_id: String },
    #[error("unknown retrieval strategy {0:?} (expected bm25, dense or rouge)")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub doc_id: String,
    pub score: f64,
}

/// Sorts by descending score, ties by ascending id, and keeps `top_k`.
pub(crate) fn rank_hits(scored: Vec<(String, f64)>, top_k: usize) -> Vec<RetrievalHit> {
    let mut hits: Vec<RetrievalHit> = scored
        .into_iter()
        .map(|(doc_id, score)| RetrievalHit { doc_id, score })
        .collect();
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    hits.truncate(top_k);
    hits
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Bm25,
    Dense,
    Rouge,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Bm25, Strategy::Dense, Strategy::Rouge];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Bm25 => "bm25",
            Strategy::Dense => "dense",
            Strategy::Rouge => "rouge",
        })
    }
}

impl FromStr for Strategy {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bm25" => Ok(Strategy::Bm25),
            "dense" => Ok(Strategy::Dense),
            "rouge" => Ok(Strategy::Rouge),
            _ => Err(RetrievalError::UnknownStrategy(s.to_string())),
        }
    }
}

/// Document embeddings for a corpus, computed once.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    doc_ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
}

impl DenseIndex {
    pub fn build(provider: &dyn EmbeddingProvider, corpus: &Corpus) -> Result<Self, RetrievalError> {
        let vectors = corpus
            .iter()
            .map(|d| {
                provider
                    .embed(EmbedInput::keyed(&d.id, &d.text))
                    .map_err(|source| RetrievalError::Provider {
                        doc_id: d.id.clone(),
                        source,
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(DenseIndex {
            doc_ids: corpus.iter().map(|d| d.id.clone()).collect(),
            vectors,
        })
    }

    pub fn search(
        &self,
        query: &EmbeddingVector,
        top_k: usize,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if top_k == 0 {
            return Err(RetrievalError::InvalidTopK);
        }
        let scored = self
            .doc_ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| {
                cosine_similarity(query, v)
                    .map(|s| (id.clone(), s))
                    .map_err(|source| RetrievalError::Vector {
                        doc_id: id.clone(),
                        source,
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(rank_hits(scored, top_k))
    }
}

fn embed_query(
    provider: &dyn EmbeddingProvider,
    query: EmbedInput<'_>,
) -> Result<EmbeddingVector, RetrievalError> {
    provider
        .embed(query)
        .map_err(|source| RetrievalError::Provider {
            doc_id: query.id.unwrap_or("<query>").to_string(),
            source,
        })
}

pub fn retrieve_dense(
    provider: &dyn EmbeddingProvider,
    corpus: &Corpus,
    query: EmbedInput<'_>,
    top_k: usize,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if top_k == 0 {
        return Err(RetrievalError::InvalidTopK);
    }
    let index = DenseIndex::build(provider, corpus)?;
    index.search(&embed_query(provider, query)?, top_k)
}

pub fn retrieve_rouge(
    corpus: &Corpus,
    query: &str,
    top_k: usize,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if top_k == 0 {
        return Err(RetrievalError::InvalidTopK);
    }
    let q = tokenize(query);
    let scored = corpus
        .iter()
        .map(|d| (d.id.clone(), rouge_l(&q, &tokenize(&d.text)).f1))
        .collect();
    Ok(rank_hits(scored, top_k))
}

enum Backend<'p> {
    Bm25(Bm25Index),
    Dense(DenseIndex, &'p dyn EmbeddingProvider),
    Rouge(Vec<Vec<String>>),
}

/// A demonstration pool indexed for one strategy.
pub struct Retriever<'p> {
    pool: Corpus,
    backend: Backend<'p>,
}

impl<'p> Retriever<'p> {
    pub fn new(
        strategy: Strategy,
        pool: Corpus,
        provider: Option<&'p dyn EmbeddingProvider>,
    ) -> Result<Self, RetrievalError> {
        if pool.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let backend = match strategy {
            Strategy::Bm25 => Backend::Bm25(build_bm25(&pool, bm25::DEFAULT_K1, bm25::DEFAULT_B)?),
            Strategy::Dense => {
                let provider = provider.ok_or_else(|| {
                    RetrievalError::InvalidParameter("dense retrieval needs an embedding provider".into())
                })?;
                Backend::Dense(DenseIndex::build(provider, &pool)?, provider)
            }
            Strategy::Rouge => Backend::Rouge(pool.iter().map(|d| tokenize(&d.text)).collect()),
        };
        Ok(Retriever { pool, backend })
    }

    pub fn pool(&self) -> &Corpus {
        &self.pool
    }

    pub fn strategy(&self) -> Strategy {
        match self.backend {
            Backend::Bm25(_) => Strategy::Bm25,
            Backend::Dense(..) => Strategy::Dense,
            Backend::Rouge(_) => Strategy::Rouge,
        }
    }

    pub fn retrieve(&self, query: &Document, top_k: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if top_k == 0 {
            return Err(RetrievalError::InvalidTopK);
        }
        match &self.backend {
            Backend::Bm25(index) => retrieve_sparse(index, &query.text, top_k),
            Backend::Dense(index, provider) => {
                let q = embed_query(*provider, EmbedInput::keyed(&query.id, &query.text))?;
                index.search(&q, top_k)
            }
            Backend::Rouge(docs) => {
                let q = tokenize(&query.text);
                let scored = self
                    .pool
                    .iter()
                    .zip(docs)
                    .map(|(d, toks)| (d.id.clone(), rouge_l(&q, toks).f1))
                    .collect();
                Ok(rank_hits(scored, top_k))
            }
        }
    }

    /// Best-ranked pool document that carries a gold summary, optionally
    /// skipping a pool entry with the inference document's id.
    pub fn select_demonstration(
        &self,
        inference_doc: &Document,
        exclude_self: bool,
    ) -> Result<Document, RetrievalError> {
        let hits = self.retrieve(inference_doc, self.pool.len())?;
        hits.iter()
            .filter(|h| !(exclude_self && h.doc_id == inference_doc.id))
            .filter_map(|h| self.pool.get(&h.doc_id))
            .find(|d| d.summary.is_some())
            .cloned()
            .ok_or_else(|| RetrievalError::NoDemonstration {
                doc_id: inference_doc.id.clone(),
            })
    }
}

/// How the demonstration for an inference document is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemoSelection {
    Retrieved(Strategy),
    /// The inference document itself, with its own gold summary.
    UpperBound,
}

pub fn select_demonstration(
    selection: DemoSelection,
    pool: &Corpus,
    provider: Option<&dyn EmbeddingProvider>,
    inference_doc: &Document,
    exclude_self: bool,
) -> Result<Document, RetrievalError> {
    match selection {
        DemoSelection::UpperBound => upper_bound_demonstration(inference_doc),
        DemoSelection::Retrieved(strategy) => {
            Retriever::new(strategy, pool.clone(), provider)?
                .select_demonstration(inference_doc, exclude_self)
        }
    }
}

pub fn upper_bound_demonstration(inference_doc: &Document) -> Result<Document, RetrievalError> {
    if inference_doc.summary.is_none() {
        return Err(RetrievalError::NoDemonstration {
            doc_id: inference_doc.id.clone(),
        });
    }
    Ok(inference_doc.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool() -> Corpus {
        Corpus::new(
            "p",
            vec![
                Document::new("a", "solar panels convert sunlight into electricity")
                    .with_summary("solar power"),
                Document::new("b", "the football team won the league final").with_summary("football"),
                Document::new("c", "stock markets fell sharply on inflation fears")
                    .with_summary("markets"),
                Document::new("d", "stock markets fell on fears").with_summary("markets again"),
                Document::new("e", "photovoltaic solar cells and sunlight"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn strategy_parses() {
        assert_eq!("BM25".parse::<Strategy>().unwrap(), Strategy::Bm25);
        assert!("sbert".parse::<Strategy>().is_err());
        assert_eq!(Strategy::Dense.to_string(), "dense");
    }

    #[test]
    fn query_in_corpus_ranks_first_everywhere() {
        let p = pool();
        let provider = HashedProjection::default();
        let q = p.get("c").unwrap().clone();
        for s in Strategy::ALL {
            let r = Retriever::new(s, p.clone(), Some(&provider)).unwrap();
            let hits = r.retrieve(&q, 3).unwrap();
            assert_eq!(hits[0].doc_id, "c", "{s}");
            assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        }
        let dense = retrieve_dense(&provider, &p, EmbedInput::text(&q.text), 1).unwrap();
        assert!((dense[0].score - 1.0).abs() < 1e-12);
        let rouge = retrieve_rouge(&p, &q.text, 1).unwrap();
        assert_eq!(rouge[0].score, 1.0);
    }

    #[test]
    fn rouge_disjoint_scores_zero() {
        let hits = retrieve_rouge(&pool(), "zebra xylophone", 10).unwrap();
        assert_eq!(hits.len(), 5);
        assert!(hits.iter().all(|h| h.score == 0.0));
    }

    #[test]
    fn dense_missing_precomputed_names_id() {
        let mut map = std::collections::HashMap::new();
        map.insert("a".to_string(), EmbeddingVector::new(vec![1.0, 0.0]).unwrap());
        let p = PrecomputedEmbeddings::from_map(map).unwrap();
        let err = retrieve_dense(&p, &pool(), EmbedInput::keyed("a", "x"), 1).unwrap_err();
        match err {
            RetrievalError::Provider { doc_id, .. } => assert_eq!(doc_id, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exclude_self_and_summary_requirement() {
        let p = Corpus::new(
            "p",
            vec![
                Document::new("q", "alpha beta gamma").with_summary("s"),
                Document::new("o", "delta epsilon").with_summary("t"),
            ],
        )
        .unwrap();
        let q = p.get("q").unwrap().clone();
        let r = Retriever::new(Strategy::Bm25, p.clone(), None).unwrap();
        assert_eq!(r.select_demonstration(&q, true).unwrap().id, "o");
        assert_eq!(r.select_demonstration(&q, false).unwrap().id, "q");

        // "e" is the closest to a solar query but has no summary
        let r = Retriever::new(Strategy::Rouge, pool(), None).unwrap();
        let query = Document::new("x", "photovoltaic solar cells and sunlight");
        assert_eq!(r.select_demonstration(&query, true).unwrap().id, "a");

        let bare = Corpus::new("b", vec![Document::new("z", "text")]).unwrap();
        let r = Retriever::new(Strategy::Bm25, bare, None).unwrap();
        assert!(matches!(
            r.select_demonstration(&query, true),
            Err(RetrievalError::NoDemonstration { .. })
        ));
    }

    #[test]
    fn upper_bound_returns_inference_doc() {
        let d = Document::new("i", "body").with_summary("gold");
        let got = select_demonstration(DemoSelection::UpperBound, &pool(), None, &d, true).unwrap();
        assert_eq!(got, d);
        assert!(upper_bound_demonstration(&Document::new("i", "body")).is_err());
    }

    #[test]
    fn dense_needs_provider() {
        assert!(Retriever::new(Strategy::Dense, pool(), None).is_err());
    }
}
