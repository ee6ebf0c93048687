//! Candidate generation with format re-prompting.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use super::parse::parse_candidates;
use super::prompt::{
    build_concatenated_turn, build_corrective_turn, build_demonstration_turn,
    build_document_only_demonstration_turn, build_inference_turn, build_zero_shot_turn,
};
use super::transport::{map_transport_error, send_chat_for, ChatRequest, RetryPolicy, DEMO_PLACEHOLDER};
use super::{ChatMessage, ChatTranscript, ChatTransport, GenerationConfig, LlmError};
use crate::corpus::Document;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub doc_id: String,
    pub candidates: Vec<String>,
    pub transcript: ChatTranscript,
    pub retries_used: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipReason {
    /// Every attempt (initial + retries) failed to parse.
    FormatExhausted { attempts: usize, last_error: String },
    ContentFiltered { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub doc_id: String,
    pub reason: SkipReason,
    pub retries_used: usize,
    pub transcript: ChatTranscript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GenerationOutcome {
    Generated(CandidateSet),
    Skipped(SkipRecord),
}

impl GenerationOutcome {
    pub fn doc_id(&self) -> &str {
        match self {
            GenerationOutcome::Generated(c) => &c.doc_id,
            GenerationOutcome::Skipped(s) => &s.doc_id,
        }
    }

    pub fn candidate_set(&self) -> Option<&CandidateSet> {
        match self {
            GenerationOutcome::Generated(c) => Some(c),
            GenerationOutcome::Skipped(_) => None,
        }
    }

    pub fn is_qualified(&self) -> bool {
        matches!(self, GenerationOutcome::Generated(_))
    }

    pub fn transcript(&self) -> &ChatTranscript {
        match self {
            GenerationOutcome::Generated(c) => &c.transcript,
            GenerationOutcome::Skipped(s) => &s.transcript,
        }
    }
}

/// How the demonstration and inference request are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptShape {
    /// Demonstration turn, discarded assistant reply, then the inference turn.
    MultiTurn,
    /// Demonstration and inference text in a single user turn.
    Concatenated,
}

fn demo_turn(demo: &Document) -> Result<ChatMessage, LlmError> {
    match demo.summary {
        Some(_) => build_demonstration_turn(demo),
        None => Ok(build_document_only_demonstration_turn(demo)),
    }
}

fn skip(doc_id: &str, reason: SkipReason, retries_used: usize, transcript: ChatTranscript) -> GenerationOutcome {
    GenerationOutcome::Skipped(SkipRecord {
        doc_id: doc_id.to_string(),
        reason,
        retries_used,
        transcript,
    })
}

/// Sends the transcript, then re-prompts with the corrective format turn until
/// the reply parses or the retry budget is spent.
fn complete_with_format_retries(
    transport: &dyn ChatTransport,
    mut transcript: ChatTranscript,
    doc_id: &str,
    cfg: &GenerationConfig,
    retry: &RetryPolicy,
) -> Result<GenerationOutcome, LlmError> {
    let mut attempt = 0;
    loop {
        let reply = match send_chat_for(transport, &transcript, cfg, retry, doc_id) {
            Ok(reply) => reply,
            Err(LlmError::ContentFiltered { reason, .. }) => {
                return Ok(skip(doc_id, SkipReason::ContentFiltered { reason }, attempt, transcript))
            }
            Err(e) => return Err(e),
        };
        let parsed = parse_candidates(&reply.content, cfg.k);
        transcript.push(reply)?;
        match parsed {
            Ok(candidates) => {
                return Ok(GenerationOutcome::Generated(CandidateSet {
                    doc_id: doc_id.to_string(),
                    candidates,
                    transcript,
                    retries_used: attempt,
                }))
            }
            Err(e) if attempt >= cfg.max_format_retries => {
                return Ok(skip(
                    doc_id,
                    SkipReason::FormatExhausted {
                        attempts: attempt + 1,
                        last_error: e.to_string(),
                    },
                    attempt,
                    transcript,
                ))
            }
            Err(_) => {
                transcript.push(build_corrective_turn(cfg.k))?;
                attempt += 1;
            }
        }
    }
}

/// Multi-turn generation. A demonstration without a summary is shown as
/// document-only.
pub fn generate_candidates(
    transport: &dyn ChatTransport,
    demo: Option<&Document>,
    doc: &Document,
    cfg: &GenerationConfig,
    retry: &RetryPolicy,
) -> Result<GenerationOutcome, LlmError> {
    cfg.validate()?;
    let mut transcript = ChatTranscript::new();
    if let Some(demo) = demo {
        transcript.push(demo_turn(demo)?)?;
        let request = ChatRequest::new(&transcript, cfg);
        let ack = match retry.run(|| transport.acknowledge(&request)) {
            Ok(ack) => ack,
            Err((e, attempts)) => match map_transport_error(e, attempts, &doc.id) {
                LlmError::ContentFiltered { reason, .. } => {
                    return Ok(skip(&doc.id, SkipReason::ContentFiltered { reason }, 0, transcript))
                }
                other => return Err(other),
            },
        };
        let ack = if ack.is_empty() { DEMO_PLACEHOLDER.to_string() } else { ack };
        transcript.push(ChatMessage::assistant(ack))?;
    }
    transcript.push(build_inference_turn(doc, cfg.k, demo.is_some()))?;
    complete_with_format_retries(transport, transcript, &doc.id, cfg, retry)
}

/// Ablation arm: the demonstration and the inference request share one user turn.
pub fn generate_concatenated(
    transport: &dyn ChatTransport,
    demo: &Document,
    doc: &Document,
    cfg: &GenerationConfig,
    retry: &RetryPolicy,
) -> Result<GenerationOutcome, LlmError> {
    cfg.validate()?;
    let mut transcript = ChatTranscript::new();
    transcript.push(build_concatenated_turn(&demo_turn(demo)?, doc, cfg.k))?;
    complete_with_format_retries(transport, transcript, &doc.id, cfg, retry)
}

/// One request, one summary, no demonstration and no format retries. A reply
/// that is not enumerated is taken whole.
pub fn generate_zero_shot(
    transport: &dyn ChatTransport,
    doc: &Document,
    cfg: &GenerationConfig,
    retry: &RetryPolicy,
) -> Result<GenerationOutcome, LlmError> {
    let cfg = GenerationConfig {
        k: 1,
        max_format_retries: 0,
        ..cfg.clone()
    };
    cfg.validate()?;
    let mut transcript = ChatTranscript::new();
    transcript.push(build_zero_shot_turn(doc))?;
    let reply = match send_chat_for(transport, &transcript, &cfg, retry, &doc.id) {
        Ok(r) => r,
        Err(LlmError::ContentFiltered { reason, .. }) => {
            return Ok(skip(&doc.id, SkipReason::ContentFiltered { reason }, 0, transcript))
        }
        Err(e) => return Err(e),
    };
    let summary = parse_candidates(&reply.content, 1)
        .ok()
        .and_then(|mut c| c.pop())
        .unwrap_or_else(|| reply.content.trim().to_string());
    transcript.push(reply)?;
    if summary.is_empty() {
        return Ok(skip(
            &doc.id,
            SkipReason::FormatExhausted {
                attempts: 1,
                last_error: "empty reply".into(),
            },
            0,
            transcript,
        ));
    }
    Ok(GenerationOutcome::Generated(CandidateSet {
        doc_id: doc.id.clone(),
        candidates: vec![summary],
        transcript,
        retries_used: 0,
    }))
}

/// Applies `f` to every item with at most `concurrency` workers; results come
/// back in input order.
pub fn run_bounded<T, R, F>(items: &[T], concurrency: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = concurrency.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .unwrap_or_else(|p| p.into_inner())
                .expect("every slot is filled")
        })
        .collect()
}

/// Generates for `(demonstration, document)` jobs with bounded parallelism.
/// The first error in input order is returned.
pub fn generate_all(
    transport: &dyn ChatTransport,
    jobs: &[(Option<Document>, Document)],
    cfg: &GenerationConfig,
    retry: &RetryPolicy,
    shape: PromptShape,
    concurrency: usize,
) -> Result<Vec<GenerationOutcome>, LlmError> {
    run_bounded(jobs, concurrency, |(demo, doc)| match (shape, demo) {
        (PromptShape::Concatenated, Some(demo)) => {
            generate_concatenated(transport, demo, doc, cfg, retry)
        }
        _ => generate_candidates(transport, demo.as_ref(), doc, cfg, retry),
    })
    .into_iter()
    .collect()
}

/// On-disk candidate record: one line per document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub doc_id: String,
    pub candidates: Vec<String>,
    pub retries_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<SkipReason>,
}

impl From<&GenerationOutcome> for CandidateRecord {
    fn from(o: &GenerationOutcome) -> Self {
        match o {
            GenerationOutcome::Generated(c) => CandidateRecord {
                doc_id: c.doc_id.clone(),
                candidates: c.candidates.clone(),
                retries_used: c.retries_used,
                skip_reason: None,
            },
            GenerationOutcome::Skipped(s) => CandidateRecord {
                doc_id: s.doc_id.clone(),
                candidates: Vec::new(),
                retries_used: s.retries_used,
                skip_reason: Some(s.reason.clone()),
            },
        }
    }
}

impl CandidateRecord {
    pub fn write_all(path: impl AsRef<Path>, records: &[CandidateRecord]) -> std::io::Result<()> {
        let mut out = String::new();
        for r in records {
            out.push_str(&serde_json::to_string(r).map_err(std::io::Error::other)?);
            out.push('\n');
        }
        fs::write(path, out)
    }

    pub fn read_all(path: impl AsRef<Path>) -> std::io::Result<Vec<CandidateRecord>> {
        let file = fs::File::open(path)?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
            })?;
            out.push(rec);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::parse::render_candidates;
    use crate::llm::transport::{FnTransport, ReplayBook, ReplayTransport, TransportError};
    use crate::llm::Role;

    fn doc() -> Document {
        Document::new("doc1", "The council approved the new budget on Monday.")
            .with_summary("Council approves budget.")
    }

    fn demo() -> Document {
        Document::new("demo", "Shares rose after strong earnings.").with_summary("Shares rise.")
    }

    fn five() -> String {
        render_candidates(&["a", "b", "c", "d", "e"])
    }

    /// Transport answering the n-th generation request with `replies[n]`.
    fn scripted(replies: Vec<String>) -> (FnTransport<impl Fn(&ChatRequest<'_>) -> Result<String, TransportError> + Send + Sync>, std::sync::Arc<AtomicUsize>) {
        let calls = std::sync::Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let t = FnTransport(move |_: &ChatRequest<'_>| {
            let i = c.fetch_add(1, Ordering::SeqCst);
            Ok(replies.get(i).cloned().unwrap_or_else(|| "garbage".into()))
        });
        (t, calls)
    }

    #[test]
    fn well_formed_reply_needs_no_retry() {
        let (t, calls) = scripted(vec!["ack".into(), five()]);
        let out = generate_candidates(&t, Some(&demo()), &doc(), &GenerationConfig::default(), &RetryPolicy::none()).unwrap();
        let set = out.candidate_set().unwrap();
        assert_eq!(set.retries_used, 0);
        assert_eq!(set.candidates, ["a", "b", "c", "d", "e"]);
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        let roles: Vec<_> = set.transcript.messages().iter().map(|m| m.role).collect();
        assert_eq!(roles, [Role::User, Role::Assistant, Role::User, Role::Assistant]);
        assert_eq!(set.transcript.messages()[1].content, "ack");
    }

    #[test]
    fn one_malformed_then_ok() {
        let (t, _) = scripted(vec!["ack".into(), "just prose".into(), five()]);
        let out = generate_candidates(&t, Some(&demo()), &doc(), &GenerationConfig::default(), &RetryPolicy::none()).unwrap();
        let set = out.candidate_set().unwrap();
        assert_eq!(set.retries_used, 1);
        let m = set.transcript.messages();
        assert_eq!(m[3].content, "just prose");
        assert_eq!(m[4].content, "Answer in this format: 1: xxx\n...5: xxx");
    }

    #[test]
    fn six_malformed_is_skipped() {
        let (t, calls) = scripted(vec!["not a list".into(); 6]);
        let cfg = GenerationConfig::default();
        let out = generate_candidates(&t, None, &doc(), &cfg, &RetryPolicy::none()).unwrap();
        match out {
            GenerationOutcome::Skipped(s) => {
                assert_eq!(s.retries_used, 5);
                assert!(matches!(s.reason, SkipReason::FormatExhausted { attempts: 6, .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(calls.load(Ordering::SeqCst), 1 + cfg.max_format_retries);
    }

    #[test]
    fn content_filter_is_skipped() {
        let t = FnTransport(|_: &ChatRequest<'_>| Err(TransportError::ContentFiltered("policy".into())));
        let out = generate_candidates(&t, None, &doc(), &GenerationConfig::default(), &RetryPolicy::none()).unwrap();
        assert!(matches!(
            out,
            GenerationOutcome::Skipped(SkipRecord { reason: SkipReason::ContentFiltered { .. }, .. })
        ));
    }

    #[test]
    fn fatal_transport_error_surfaces() {
        let t = FnTransport(|_: &ChatRequest<'_>| Err(TransportError::Fatal("401".into())));
        assert!(generate_candidates(&t, None, &doc(), &GenerationConfig::default(), &RetryPolicy::none()).is_err());
    }

    #[test]
    fn replay_demo_round_uses_placeholder() {
        let cfg = GenerationConfig::default();
        let d = doc();
        let mut t = ChatTranscript::new();
        t.push(build_demonstration_turn(&demo()).unwrap()).unwrap();
        t.push(ChatMessage::assistant(DEMO_PLACEHOLDER)).unwrap();
        t.push(build_inference_turn(&d, 5, true)).unwrap();
        let mut book = ReplayBook::new();
        book.insert(ChatRequest::new(&t, &cfg).digest(), five());
        let replay = ReplayTransport::new(book);
        let out = generate_candidates(&replay, Some(&demo()), &d, &cfg, &RetryPolicy::none()).unwrap();
        assert_eq!(out.candidate_set().unwrap().candidates.len(), 5);
    }

    #[test]
    fn concatenated_has_single_user_turn() {
        let (t, _) = scripted(vec![five()]);
        let out = generate_concatenated(&t, &demo(), &doc(), &GenerationConfig::default(), &RetryPolicy::none()).unwrap();
        let set = out.candidate_set().unwrap();
        assert_eq!(set.candidates, ["a", "b", "c", "d", "e"]);
        let m = set.transcript.messages();
        assert_eq!(m.len(), 2);
        assert!(m[0].content.contains("Text: Shares rose after strong earnings. Summary: Shares rise."));
        assert!(m[0].content.contains("Combining the above example, generate 5 different summaries"));
    }

    #[test]
    fn no_summary_demo_shows_document_only() {
        let (t, _) = scripted(vec!["ack".into(), five()]);
        let bare = Document::new("demo", "Shares rose.");
        let out = generate_candidates(&t, Some(&bare), &doc(), &GenerationConfig::default(), &RetryPolicy::none()).unwrap();
        let first = &out.transcript().messages()[0].content;
        assert!(!first.contains("Summary:"));
        assert!(first.contains("Text: Shares rose."));
    }

    #[test]
    fn zero_shot_single_request() {
        let (t, calls) = scripted(vec!["A plain summary.".into()]);
        let out = generate_zero_shot(&t, &doc(), &GenerationConfig::default(), &RetryPolicy::none()).unwrap();
        let set = out.candidate_set().unwrap();
        assert_eq!(set.candidates, ["A plain summary."]);
        assert_eq!(set.transcript.count_role(Role::User), 1);
        assert!(set.transcript.messages()[0].content.contains(&doc().text));
        assert_eq!(calls.load(Ordering::SeqCst), 1);

        let (t, _) = scripted(vec!["1. Enumerated.".into()]);
        let out = generate_zero_shot(&t, &doc(), &GenerationConfig::default(), &RetryPolicy::none()).unwrap();
        assert_eq!(out.candidate_set().unwrap().candidates, ["Enumerated."]);
    }

    #[test]
    fn run_bounded_keeps_order() {
        let items: Vec<usize> = (0..37).collect();
        let out = run_bounded(&items, 4, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(run_bounded(&Vec::<u8>::new(), 4, |x| *x).is_empty());
    }

    #[test]
    fn candidate_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let recs = vec![
            CandidateRecord {
                doc_id: "a".into(),
                candidates: vec!["x".into(), "y".into()],
                retries_used: 1,
                skip_reason: None,
            },
            CandidateRecord {
                doc_id: "b".into(),
                candidates: vec![],
                retries_used: 5,
                skip_reason: Some(SkipReason::FormatExhausted {
                    attempts: 6,
                    last_error: "expected 5 enumerated items, found 0".into(),
                }),
            },
        ];
        CandidateRecord::write_all(&path, &recs).unwrap();
        assert_eq!(CandidateRecord::read_all(&path).unwrap(), recs);
    }
}
