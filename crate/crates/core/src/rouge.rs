//! ROUGE-1 / ROUGE-2 / ROUGE-L with precision, recall and F1.
//!
//! Tokenization is lowercase alphanumeric runs with no stemming or stopword
//! removal. Callers needing a different tokenizer can implement [`Tokenizer`]
//! and use [`corpus_rouge_with`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RougeError {
    #[error("n-gram order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("cannot average ROUGE over an empty pair list")]
    EmptyPairs,
    #[error("reference {index} is empty")]
    EmptyReference { index: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub const ZERO: RougeScore = RougeScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }

    fn from_counts(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        if hyp_total == 0 || ref_total == 0 {
            return Self::ZERO;
        }
        Self::from_precision_recall(
            overlap as f64 / hyp_total as f64,
            overlap as f64 / ref_total as f64,
        )
    }
}

/// Corpus-level report: arithmetic means of per-pair scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
    pub n_pairs: usize,
}

/// Replacement point for the default tokenizer.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Lowercased maximal runs of alphanumeric characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlnumTokenizer;

impl Tokenizer for AlnumTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text)
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub(crate) fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            let key: Vec<&str> = window.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap score.
pub fn rouge_n<S: AsRef<str>>(
    hypothesis: &[S],
    reference: &[S],
    n: usize,
) -> Result<RougeScore, RougeError> {
    if n < 1 {
        return Err(RougeError::InvalidOrder(n));
    }
    let hyp = ngram_counts(hypothesis, n);
    let reference = ngram_counts(reference, n);
    let hyp_total: usize = hyp.values().sum();
    let ref_total: usize = reference.values().sum();
    let overlap: usize = hyp
        .iter()
        .map(|(gram, &c)| c.min(reference.get(gram).copied().unwrap_or(0)))
        .sum();
    Ok(RougeScore::from_counts(overlap, hyp_total, ref_total))
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence-level LCS score over the full token sequences.
pub fn rouge_l<S: AsRef<str>>(hypothesis: &[S], reference: &[S]) -> RougeScore {
    let lcs = lcs_len(hypothesis, reference);
    RougeScore::from_counts(lcs, hypothesis.len(), reference.len())
}

/// ROUGE-L F1 between two raw strings using the default tokenizer.
pub fn rouge_l_f1(hypothesis: &str, reference: &str) -> f64 {
    rouge_l(&tokenize(hypothesis), &tokenize(reference)).f1
}

/// R-1, R-2 and R-L for one (hypothesis, reference) pair.
pub fn pair_scores(
    tokenizer: &dyn Tokenizer,
    hypothesis: &str,
    reference: &str,
) -> (RougeScore, RougeScore, RougeScore) {
    let h = tokenizer.tokenize(hypothesis);
    let r = tokenizer.tokenize(reference);
    // n is a literal >= 1
    let r1 = rouge_n(&h, &r, 1).expect("n = 1");
    let r2 = rouge_n(&h, &r, 2).expect("n = 2");
    (r1, r2, rouge_l(&h, &r))
}

pub fn corpus_rouge<H, R>(pairs: &[(H, R)]) -> Result<RougeReport, RougeError>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    corpus_rouge_with(&AlnumTokenizer, pairs)
}

pub fn corpus_rouge_with<H, R>(
    tokenizer: &dyn Tokenizer,
    pairs: &[(H, R)],
) -> Result<RougeReport, RougeError>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    if pairs.is_empty() {
        return Err(RougeError::EmptyPairs);
    }
    let mut acc = [[0.0f64; 3]; 3];
    for (index, (hyp, reference)) in pairs.iter().enumerate() {
        if reference.as_ref().trim().is_empty() {
            return Err(RougeError::EmptyReference { index });
        }
        let scores = pair_scores(tokenizer, hyp.as_ref(), reference.as_ref());
        for (slot, s) in acc.iter_mut().zip([scores.0, scores.1, scores.2]) {
            slot[0] += s.precision;
            slot[1] += s.recall;
            slot[2] += s.f1;
        }
    }
    let n = pairs.len() as f64;
    let mean = |a: [f64; 3]| RougeScore {
        precision: a[0] / n,
        recall: a[1] / n,
        f1: a[2] / n,
    };
    Ok(RougeReport {
        r1: mean(acc[0]),
        r2: mean(acc[1]),
        rl: mean(acc[2]),
        n_pairs: pairs.len(),
    })
}
