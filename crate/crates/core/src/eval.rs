//! Experiment harness: baseline and reranked modes, candidate spread,
//! format-qualification counts and report rendering.
//!
//! Scores come from the built-in ROUGE implementation (lowercased
//! alphanumeric tokens, no stemming), so absolute values are not directly
//! comparable with numbers produced by stemming ROUGE toolkits.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document};
use crate::llm::{
    generate_all, generate_zero_shot, run_bounded, CandidateRecord, ChatTransport,
    GenerationConfig, GenerationOutcome, LlmError, PromptShape, RetryPolicy, SkipReason,
};
use crate::ranker::{argmax_first, select_best, RankerError, RankerModel};
use crate::retrieval::{
    upper_bound_demonstration, EmbeddingProvider, RetrievalError, Retriever, Strategy,
};
use crate::rouge::{corpus_rouge, pair_scores, rouge_l_f1, AlnumTokenizer, RougeError, RougeReport, RougeScore};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("pads mode needs a trained ranker model")]
    MissingModel,
    #[error("{0} needs an embedding provider")]
    MissingProvider(&'static str),
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("document {0:?} has no gold summary")]
    MissingGold(String),
    #[error("no pool document with a summary is available for {0:?}")]
    NoDemonstration(String),
    #[error("document {doc_id:?} has {found} candidates, need at least {min}")]
    TooFewCandidates { doc_id: String, found: usize, min: usize },
    #[error("arms cover different documents: {0}")]
    ArmMismatch(String),
    #[error("no reports to render")]
    NoReports,
    #[error("unknown mode {0:?}")]
    UnknownMode(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error(transparent)]
    Rouge(#[from] RougeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Zero,
    RandomDemo,
    RandomDemoNoSummary,
    SimilarDemo,
    SimilarDemoNoSummary,
    UpperBound,
    Pads,
}

impl EvalMode {
    pub const ALL: [EvalMode; 7] = [
        EvalMode::Zero,
        EvalMode::RandomDemo,
        EvalMode::RandomDemoNoSummary,
        EvalMode::SimilarDemo,
        EvalMode::SimilarDemoNoSummary,
        EvalMode::UpperBound,
        EvalMode::Pads,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Zero => "zero",
            EvalMode::RandomDemo => "random_demo",
            EvalMode::RandomDemoNoSummary => "random_demo_no_summary",
            EvalMode::SimilarDemo => "similar_demo",
            EvalMode::SimilarDemoNoSummary => "similar_demo_no_summary",
            EvalMode::UpperBound => "upper_bound",
            EvalMode::Pads => "pads",
        }
    }

    fn strips_summary(self) -> bool {
        matches!(self, EvalMode::RandomDemoNoSummary | EvalMode::SimilarDemoNoSummary)
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        EvalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| EvalError::UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub generation: GenerationConfig,
    pub retry: RetryPolicy,
    /// Retrieval strategy for the similar-demonstration and pads modes.
    pub strategy: Strategy,
    /// Seed for random demonstration draws.
    pub seed: u64,
    pub concurrency: usize,
    /// Never use a pool document with the inference document's id as its demonstration.
    pub exclude_self: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            generation: GenerationConfig::default(),
            retry: RetryPolicy::default(),
            strategy: Strategy::Dense,
            seed: 0,
            concurrency: 4,
            exclude_self: true,
        }
    }
}

/// Outcome for one test document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRow {
    pub doc_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub demo_id: Option<String>,
    /// Index of the candidate that was scored; absent when skipped.
    pub selected: Option<usize>,
    pub candidate_rouge_l: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<SkipReason>,
    pub retries_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    /// Averaged over evaluated documents; all zero when every document was skipped.
    pub rouge: RougeReport,
    pub n_evaluated: usize,
    pub n_skipped: usize,
    pub rows: Vec<DocumentRow>,
}

/// Everything a mode run produces, including the raw generation outcomes.
#[derive(Debug, Clone)]
pub struct ModeRun {
    pub report: EvalReport,
    pub outcomes: Vec<GenerationOutcome>,
}

fn gold(doc: &Document) -> Result<&str, EvalError> {
    doc.summary
        .as_deref()
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| EvalError::MissingGold(doc.id.clone()))
}

/// One uniformly random pool document with a summary per test document, drawn
/// in test order from a stream seeded by `seed`.
pub fn random_demonstrations(
    test: &Corpus,
    pool: &Corpus,
    seed: u64,
    exclude_self: bool,
) -> Result<Vec<Document>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    test.iter()
        .map(|doc| {
            let eligible: Vec<&Document> = pool
                .iter()
                .filter(|d| d.summary.is_some() && !(exclude_self && d.id == doc.id))
                .collect();
            eligible
                .choose(&mut rng)
                .map(|d| (*d).clone())
                .ok_or_else(|| EvalError::NoDemonstration(doc.id.clone()))
        })
        .collect()
}

fn demonstrations(
    mode: EvalMode,
    test: &Corpus,
    pool: &Corpus,
    provider: Option<&dyn EmbeddingProvider>,
    cfg: &EvalConfig,
) -> Result<Vec<Document>, EvalError> {
    let mut demos = match mode {
        EvalMode::Zero => unreachable!("zero-shot has no demonstration"),
        EvalMode::RandomDemo | EvalMode::RandomDemoNoSummary => {
            if pool.is_empty() {
                return Err(EvalError::EmptyCorpus("pool"));
            }
            random_demonstrations(test, pool, cfg.seed, cfg.exclude_self)?
        }
        EvalMode::UpperBound => test
            .iter()
            .map(upper_bound_demonstration)
            .collect::<Result<_, _>>()?,
        EvalMode::SimilarDemo | EvalMode::SimilarDemoNoSummary | EvalMode::Pads => {
            if pool.is_empty() {
                return Err(EvalError::EmptyCorpus("pool"));
            }
            if cfg.strategy == Strategy::Dense && provider.is_none() {
                return Err(EvalError::MissingProvider("dense retrieval"));
            }
            let retriever = Retriever::new(cfg.strategy, pool.clone(), provider)?;
            test.iter()
                .map(|d| retriever.select_demonstration(d, cfg.exclude_self))
                .collect::<Result<_, _>>()?
        }
    };
    if mode.strips_summary() {
        for d in &mut demos {
            d.summary = None;
        }
    }
    Ok(demos)
}

/// Runs one mode over `test`.
///
/// `zero` asks for a single summary without demonstration. Demonstration modes
/// request `k` candidates and keep the first. `pads` uses the similar
/// demonstration and keeps the ranker's choice. Skipped documents are left out
/// of the ROUGE averages.
#[allow(clippy::too_many_arguments)]
pub fn run_mode(
    mode: EvalMode,
    test: &Corpus,
    pool: &Corpus,
    transport: &dyn ChatTransport,
    provider: Option<&dyn EmbeddingProvider>,
    model: Option<&RankerModel>,
    cfg: &EvalConfig,
) -> Result<ModeRun, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyCorpus("test"));
    }
    for d in test.iter() {
        gold(d)?;
    }
    let ranker = match mode {
        EvalMode::Pads => Some((
            model.ok_or(EvalError::MissingModel)?,
            provider.ok_or(EvalError::MissingProvider("pads mode"))?,
        )),
        _ => None,
    };

    let (outcomes, demo_ids) = if mode == EvalMode::Zero {
        let outcomes = run_bounded(test.documents.as_slice(), cfg.concurrency, |doc| {
            generate_zero_shot(transport, doc, &cfg.generation, &cfg.retry)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        (outcomes, vec![None; test.len()])
    } else {
        let demos = demonstrations(mode, test, pool, provider, cfg)?;
        let demo_ids = demos.iter().map(|d| Some(d.id.clone())).collect();
        let jobs: Vec<(Option<Document>, Document)> =
            demos.into_iter().map(Some).zip(test.iter().cloned()).collect();
        let outcomes = generate_all(
            transport,
            &jobs,
            &cfg.generation,
            &cfg.retry,
            PromptShape::MultiTurn,
            cfg.concurrency,
        )?;
        (outcomes, demo_ids)
    };

    let mut rows = Vec::with_capacity(test.len());
    let mut pairs: Vec<(String, String)> = Vec::new();
    for ((doc, outcome), demo_id) in test.iter().zip(&outcomes).zip(demo_ids) {
        let reference = gold(doc)?;
        let row = match outcome {
            GenerationOutcome::Generated(set) => {
                let selected = match ranker {
                    Some((model, provider)) => select_best(model, doc, &set.candidates, provider)?,
                    None => 0,
                };
                let summary = set.candidates[selected].clone();
                pairs.push((summary.clone(), reference.to_string()));
                DocumentRow {
                    doc_id: doc.id.clone(),
                    demo_id,
                    selected: Some(selected),
                    candidate_rouge_l: set.candidates.iter().map(|c| rouge_l_f1(c, reference)).collect(),
                    summary: Some(summary),
                    skip_reason: None,
                    retries_used: set.retries_used,
                }
            }
            GenerationOutcome::Skipped(skip) => DocumentRow {
                doc_id: doc.id.clone(),
                demo_id,
                selected: None,
                candidate_rouge_l: Vec::new(),
                summary: None,
                skip_reason: Some(skip.reason.clone()),
                retries_used: skip.retries_used,
            },
        };
        rows.push(row);
    }
    let rouge = if pairs.is_empty() {
        RougeReport {
            r1: RougeScore::ZERO,
            r2: RougeScore::ZERO,
            rl: RougeScore::ZERO,
            n_pairs: 0,
        }
    } else {
        corpus_rouge(&pairs)?
    };
    let report = EvalReport {
        mode,
        rouge,
        n_evaluated: pairs.len(),
        n_skipped: test.len() - pairs.len(),
        rows,
    };
    Ok(ModeRun { report, outcomes })
}

/// Index of the candidate with the highest ROUGE-L F1 against `gold`; lowest index on ties.
pub fn oracle_select<S: AsRef<str>>(candidates: &[S], gold: &str) -> usize {
    let scores: Vec<f64> = candidates.iter().map(|c| rouge_l_f1(c.as_ref(), gold)).collect();
    argmax_first(&scores)
}

/// Best and worst candidate relative to the first one, per metric.
///
/// For each metric, `mean_*_delta` is the mean over documents of
/// `score(best) - score(first)` (or worst), and `relative_*` divides that mean
/// by the mean first-candidate score (zero when the latter is zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    pub n_documents: usize,
    /// Mean F1 of the first candidate, `[R-1, R-2, R-L]`.
    pub mean_first: [f64; 3],
    pub mean_best_delta: [f64; 3],
    pub mean_worst_delta: [f64; 3],
    pub relative_best: [f64; 3],
    pub relative_worst: [f64; 3],
    /// Share of documents where some later candidate has a strictly higher ROUGE-L than the first.
    pub not_first_best_fraction: f64,
}

pub fn candidate_spread<S: AsRef<str>, G: AsRef<str>>(sets: &[(Vec<S>, G)]) -> Result<SpreadStats, EvalError> {
    let mut first = [0.0; 3];
    let mut best = [0.0; 3];
    let mut worst = [0.0; 3];
    let mut not_first = 0usize;
    for (i, (cands, gold)) in sets.iter().enumerate() {
        let gold = gold.as_ref();
        if gold.trim().is_empty() {
            return Err(EvalError::MissingGold(format!("set {i}")));
        }
        if cands.len() < 2 {
            return Err(EvalError::TooFewCandidates {
                doc_id: format!("set {i}"),
                found: cands.len(),
                min: 2,
            });
        }
        let scores: Vec<[f64; 3]> = cands
            .iter()
            .map(|c| {
                let (r1, r2, rl) = pair_scores(&AlnumTokenizer, c.as_ref(), gold);
                [r1.f1, r2.f1, rl.f1]
            })
            .collect();
        for m in 0..3 {
            let base = scores[0][m];
            let hi = scores.iter().map(|s| s[m]).fold(f64::NEG_INFINITY, f64::max);
            let lo = scores.iter().map(|s| s[m]).fold(f64::INFINITY, f64::min);
            first[m] += base;
            best[m] += hi - base;
            worst[m] += lo - base;
        }
        if scores[1..].iter().any(|s| s[2] > scores[0][2]) {
            not_first += 1;
        }
    }
    let n = sets.len().max(1) as f64;
    let mean = |a: [f64; 3]| a.map(|v| v / n);
    let (first, best, worst) = (mean(first), mean(best), mean(worst));
    let rel = |d: [f64; 3]| {
        let mut out = [0.0; 3];
        for m in 0..3 {
            out[m] = if first[m] > 0.0 { d[m] / first[m] } else { 0.0 };
        }
        out
    };
    Ok(SpreadStats {
        n_documents: sets.len(),
        mean_first: first,
        mean_best_delta: best,
        mean_worst_delta: worst,
        relative_best: rel(best),
        relative_worst: rel(worst),
        not_first_best_fraction: if sets.is_empty() { 0.0 } else { not_first as f64 / n },
    })
}

/// A per-document generation log entry.
pub trait RunLog {
    fn log_doc_id(&self) -> &str;
    fn qualified(&self) -> bool;
}

impl RunLog for GenerationOutcome {
    fn log_doc_id(&self) -> &str {
        self.doc_id()
    }

    fn qualified(&self) -> bool {
        self.is_qualified()
    }
}

impl RunLog for CandidateRecord {
    fn log_doc_id(&self) -> &str {
        &self.doc_id
    }

    fn qualified(&self) -> bool {
        self.skip_reason.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualificationCount {
    pub arm: String,
    pub qualified: usize,
    pub total: usize,
}

impl fmt::Display for QualificationCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.qualified, self.total)
    }
}

/// Qualified/total counts per arm. Every arm must cover the same documents.
pub fn format_qualification_counts<L: RunLog>(arms: &[(&str, &[L])]) -> Result<Vec<QualificationCount>, EvalError> {
    let ids = |logs: &[L]| logs.iter().map(|l| l.log_doc_id().to_string()).collect::<BTreeSet<_>>();
    if let Some((first_name, first_logs)) = arms.first() {
        let reference = ids(first_logs);
        for (name, logs) in &arms[1..] {
            let other = ids(logs);
            if other != reference || logs.len() != first_logs.len() {
                let missing = reference.symmetric_difference(&other).next().cloned().unwrap_or_default();
                return Err(EvalError::ArmMismatch(format!(
                    "{first_name} and {name} differ (e.g. {missing:?})"
                )));
            }
        }
    }
    Ok(arms
        .iter()
        .map(|(name, logs)| QualificationCount {
            arm: name.to_string(),
            qualified: logs.iter().filter(|l| l.qualified()).count(),
            total: logs.len(),
        })
        .collect())
}

/// Score ×100 with one decimal, as conventionally printed in ROUGE tables.
pub fn format_score(f1: f64) -> String {
    format!("{:.1}", f1 * 100.0)
}

/// Fixed-width text table, one row per report.
pub fn render_report_table(reports: &[EvalReport]) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let width = reports
        .iter()
        .map(|r| r.mode.as_str().len())
        .max()
        .unwrap_or(0)
        .max("mode".len());
    let mut out = format!(
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>9}  {:>7}\n",
        "mode", "R-1", "R-2", "R-L", "evaluated", "skipped"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>9}  {:>7}\n",
            r.mode.as_str(),
            format_score(r.rouge.r1.f1),
            format_score(r.rouge.r2.f1),
            format_score(r.rouge.rl.f1),
            r.n_evaluated,
            r.n_skipped,
        ));
    }
    Ok(out)
}

/// Pretty JSON for a list of reports.
pub fn reports_to_json(reports: &[EvalReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    s
}

/// `(score - baseline) / baseline` for R-1, R-2, R-L (zero when the baseline is zero).
pub fn relative_to_baseline(report: &RougeReport, baseline: &RougeReport) -> [f64; 3] {
    let pairs = [
        (report.r1.f1, baseline.r1.f1),
        (report.r2.f1, baseline.r2.f1),
        (report.rl.f1, baseline.rl.f1),
    ];
    pairs.map(|(s, b)| if b > 0.0 { (s - b) / b } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(mode: EvalMode, r1: f64, r2: f64, rl: f64) -> EvalReport {
        let s = |f1| RougeScore { precision: f1, recall: f1, f1 };
        EvalReport {
            mode,
            rouge: RougeReport {
                r1: s(r1),
                r2: s(r2),
                rl: s(rl),
                n_pairs: 1,
            },
            n_evaluated: 1,
            n_skipped: 0,
            rows: Vec::new(),
        }
    }

    #[test]
    fn renders_one_decimal_percent() {
        let t = render_report_table(&[report(EvalMode::Pads, 0.264, 0.086, 0.234)]).unwrap();
        assert!(t.contains("23.4"), "{t}");
        assert!(t.contains("26.4") && t.contains("8.6"));
        assert_eq!(t.lines().count(), 2);
        assert_eq!(t, render_report_table(&[report(EvalMode::Pads, 0.264, 0.086, 0.234)]).unwrap());
        assert!(matches!(render_report_table(&[]), Err(EvalError::NoReports)));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in EvalMode::ALL {
            assert_eq!(m.as_str().parse::<EvalMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert_eq!("similar-demo".parse::<EvalMode>().unwrap(), EvalMode::SimilarDemo);
        assert!("best".parse::<EvalMode>().is_err());
    }

    #[test]
    fn oracle_selection() {
        assert_eq!(oracle_select(&["x y", "cat on mat", "cat"], "cat on mat"), 1);
        assert_eq!(oracle_select(&["a", "b", "c"], "zzz"), 0);
    }

    #[test]
    fn spread_of_identical_candidates_is_zero() {
        let s = candidate_spread(&[(vec!["the cat"; 5], "the cat sat")]).unwrap();
        assert_eq!(s.mean_best_delta, [0.0; 3]);
        assert_eq!(s.mean_worst_delta, [0.0; 3]);
        assert_eq!(s.not_first_best_fraction, 0.0);
    }

    #[test]
    fn spread_when_third_candidate_wins() {
        let sets = vec![
            (vec!["dog", "bird", "cat sat"], "cat sat"),
            (vec!["x", "y", "rain falls"], "rain falls today"),
        ];
        let s = candidate_spread(&sets).unwrap();
        assert_eq!(s.not_first_best_fraction, 1.0);
        assert!(s.mean_best_delta.iter().all(|d| *d > 0.0));
        assert_eq!(s.relative_best, [0.0; 3], "first candidates score zero");
        assert!(candidate_spread(&[(vec!["a"], "a")]).is_err());
    }

    #[test]
    fn qualification_counts() {
        let rec = |id: &str, ok: bool| CandidateRecord {
            doc_id: id.into(),
            candidates: if ok { vec!["a".into()] } else { vec![] },
            retries_used: 0,
            skip_reason: (!ok).then(|| SkipReason::ContentFiltered { reason: "x".into() }),
        };
        let multi: Vec<_> = (0..10).map(|i| rec(&i.to_string(), true)).collect();
        let concat: Vec<_> = (0..10).map(|i| rec(&i.to_string(), i >= 3)).collect();
        let counts = format_qualification_counts(&[("multi_turn", &multi[..]), ("concatenated", &concat[..])]).unwrap();
        assert_eq!(counts[0].to_string(), "10/10");
        assert_eq!(counts[1].to_string(), "7/10");
        let empty: Vec<CandidateRecord> = vec![];
        let c = format_qualification_counts(&[("a", &empty[..]), ("b", &empty[..])]).unwrap();
        assert_eq!(c[0].to_string(), "0/0");
        assert!(format_qualification_counts(&[("a", &multi[..]), ("b", &multi[..5])]).is_err());
    }

    #[test]
    fn relative_deltas() {
        let base = report(EvalMode::Zero, 0.2, 0.1, 0.0);
        let r = report(EvalMode::SimilarDemo, 0.3, 0.1, 0.2);
        let d = relative_to_baseline(&r.rouge, &base.rouge);
        assert!((d[0] - 0.5).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 0.0);
    }
}
