//! Domain-adapted summarization with a chat LLM.
//!
//! The pipeline has three stages:
//!
//! 1. [`retrieval`] picks one in-context demonstration per inference document
//!    (BM25, ROUGE overlap, or dense cosine over a pluggable embedding provider).
//! 2. [`llm`] builds a multi-turn conversation, asks an OpenAI-compatible chat
//!    endpoint (or a replay file) for `k` enumerated candidates and re-prompts
//!    when the reply is badly formatted.
//! 3. [`ranker`] scores the candidates with a projection network trained by
//!    InfoNCE followed by a frozen-backbone scoring head fit to normalized
//!    ROUGE-L labels, and keeps the argmax.
//!
//! [`eval`] runs all baseline modes and writes comparable reports; [`config`]
//! holds the run configuration consumed by the `pads` command line tool.

pub mod config;
pub mod corpus;
pub mod eval;
pub mod llm;
pub mod ranker;
pub mod retrieval;
pub mod rouge;
pub mod synthetic;

pub use corpus::{Corpus, CorpusStats, Document};
pub use rouge::{RougeReport, RougeScore};
