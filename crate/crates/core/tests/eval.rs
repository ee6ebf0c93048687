use std::sync::atomic::{AtomicUsize, Ordering};

use pads_core::eval::{candidate_spread, oracle_select, run_mode, EvalConfig, EvalError, EvalMode};
use pads_core::llm::{
    render_candidates, ChatRequest, ChatTransport, FnTransport, RecordingTransport, ReplayTransport,
    RetryPolicy,
};
use pads_core::ranker::{train_ranker, TrainConfig};
use pads_core::retrieval::{HashedProjection, Strategy};
use pads_core::rouge::{pair_scores, rouge_l_f1, AlnumTokenizer};
use pads_core::synthetic::{planted_documents, planted_instances, PlantedChat, PlantedConfig};
use pads_core::Corpus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> EvalConfig {
    EvalConfig {
        retry: RetryPolicy::none(),
        strategy: Strategy::Bm25,
        concurrency: 3,
        ..EvalConfig::default()
    }
}

fn corpora(n: usize) -> (Corpus, Corpus) {
    let cfg = PlantedConfig::default();
    let test = Corpus::new("test", planted_documents(&cfg, "t", n)).unwrap();
    let pool = Corpus::new("pool", planted_documents(&PlantedConfig { seed: 77, ..cfg }, "p", 20)).unwrap();
    (test, pool)
}

#[test]
fn upper_bound_with_gold_reply_scores_one() {
    let (test, pool) = corpora(6);
    // Echo the demonstration's summary as the first candidate.
    let chat = FnTransport(|req: &ChatRequest<'_>| {
        let demo = &req.messages[0].content;
        let gold = demo.split(" Summary: ").nth(1).unwrap_or("none");
        Ok(render_candidates(&[gold, "a", "b", "c", "d"]))
    });
    let run = run_mode(EvalMode::UpperBound, &test, &pool, &chat, None, None, &config()).unwrap();
    assert_eq!(run.report.rouge.rl.f1, 1.0);
    assert_eq!(run.report.n_evaluated, 6);
    for (row, doc) in run.report.rows.iter().zip(test.iter()) {
        assert_eq!(row.demo_id.as_deref(), Some(doc.id.as_str()));
    }
}

#[test]
fn zero_mode_sends_one_request_per_document() {
    let (test, pool) = corpora(9);
    let calls = AtomicUsize::new(0);
    let planted = PlantedChat::new(PlantedConfig::default(), test.documents.clone(), 3);
    let chat = FnTransport(|req: &ChatRequest<'_>| {
        calls.fetch_add(1, Ordering::SeqCst);
        assert_eq!(req.messages.len(), 1);
        assert_eq!(req.k, 1);
        planted.complete(req)
    });
    let run = run_mode(EvalMode::Zero, &test, &pool, &chat, None, None, &config()).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 9);
    assert!((run.report.rouge.rl.f1 - 0.3).abs() < 1e-12);
}

#[test]
fn pads_beats_first_candidate_and_respects_oracle() {
    let provider = HashedProjection::new(32, 5);
    let cfg = PlantedConfig::default();
    let train = planted_instances(&cfg, "train", 200, false);
    let tc = TrainConfig {
        hidden_dim: 16,
        proj_dim: 8,
        epochs_phase2: 30,
        ..TrainConfig::default()
    };
    let (model, ..) = train_ranker(&train, &tc, &provider).unwrap();
    let (test, pool) = corpora(30);
    let chat = PlantedChat::new(cfg, test.documents.clone(), 2);
    let ec = config();
    let similar = run_mode(EvalMode::SimilarDemo, &test, &pool, &chat, Some(&provider), None, &ec).unwrap();
    let pads = run_mode(EvalMode::Pads, &test, &pool, &chat, Some(&provider), Some(&model), &ec).unwrap();
    assert!(pads.report.rouge.rl.f1 > similar.report.rouge.rl.f1);
    for row in &pads.report.rows {
        let chosen = row.candidate_rouge_l[row.selected.unwrap()];
        let best = row.candidate_rouge_l.iter().copied().fold(0.0, f64::max);
        assert!(chosen <= best);
    }
    assert!(matches!(
        run_mode(EvalMode::Pads, &test, &pool, &chat, Some(&provider), None, &ec),
        Err(EvalError::MissingModel)
    ));
}

#[test]
fn modes_differ_only_in_demonstration() {
    let (test, pool) = corpora(5);
    let chat = PlantedChat::new(PlantedConfig::default(), test.documents.clone(), 2);
    let ec = config();
    let similar = run_mode(EvalMode::SimilarDemo, &test, &pool, &chat, None, None, &ec).unwrap();
    let upper = run_mode(EvalMode::UpperBound, &test, &pool, &chat, None, None, &ec).unwrap();
    for (a, b) in similar.outcomes.iter().zip(&upper.outcomes) {
        let (ta, tb) = (a.transcript().messages(), b.transcript().messages());
        assert_eq!(ta.len(), tb.len());
        assert_eq!(ta[1..], tb[1..]);
    }
}

#[test]
fn no_summary_modes_hide_the_demo_summary() {
    let (test, pool) = corpora(4);
    let chat = PlantedChat::new(PlantedConfig::default(), test.documents.clone(), 2);
    for mode in [EvalMode::RandomDemoNoSummary, EvalMode::SimilarDemoNoSummary] {
        let run = run_mode(mode, &test, &pool, &chat, None, None, &config()).unwrap();
        for o in &run.outcomes {
            let demo = &o.transcript().messages()[0].content;
            assert!(!demo.contains("Summary:"), "{demo}");
        }
    }
}

#[test]
fn random_demos_are_seeded() {
    let (test, pool) = corpora(8);
    let chat = PlantedChat::new(PlantedConfig::default(), test.documents.clone(), 2);
    let ids = |seed| {
        let cfg = EvalConfig { seed, ..config() };
        run_mode(EvalMode::RandomDemo, &test, &pool, &chat, None, None, &cfg)
            .unwrap()
            .report
            .rows
            .into_iter()
            .map(|r| r.demo_id.unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(ids(1), ids(1));
    assert_ne!(ids(1), ids(2));
}

#[test]
fn skipped_documents_leave_the_average() {
    let (test, pool) = corpora(5);
    let chat = PlantedChat::new(PlantedConfig::default(), test.documents.clone(), 2).with_malformed("t2", 100);
    let run = run_mode(EvalMode::SimilarDemo, &test, &pool, &chat, None, None, &config()).unwrap();
    assert_eq!((run.report.n_evaluated, run.report.n_skipped), (4, 1));
    assert_eq!(run.report.rouge.n_pairs, 4);
    let row = &run.report.rows[2];
    assert!(row.skip_reason.is_some() && row.selected.is_none());
    assert_eq!(row.retries_used, 5);
}

#[test]
fn replayed_run_matches_recorded_run() {
    let (test, pool) = corpora(6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("replay.jsonl");
    let chat = PlantedChat::new(PlantedConfig::default(), test.documents.clone(), 2).with_malformed("t1", 2);
    let recorder = RecordingTransport::new(&chat, &path).unwrap();
    let mut live = Vec::new();
    for mode in [EvalMode::Zero, EvalMode::SimilarDemo, EvalMode::UpperBound] {
        live.push(run_mode(mode, &test, &pool, &recorder, None, None, &config()).unwrap().report);
    }
    let replay = ReplayTransport::load(&path).unwrap();
    for (mode, want) in [EvalMode::Zero, EvalMode::SimilarDemo, EvalMode::UpperBound].into_iter().zip(&live) {
        let got = run_mode(mode, &test, &pool, &replay, None, None, &config()).unwrap().report;
        assert_eq!(&got, want);
    }
    let err = run_mode(EvalMode::RandomDemo, &test, &pool, &replay, None, None, &config());
    assert!(err.is_err(), "unrecorded requests must not be answered");
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| format!("t{}", rng.random_range(0..6))).collect::<Vec<_>>().join(" ")
}

#[test]
fn oracle_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..300 {
        let gold = words(&mut rng, 6);
        let cands: Vec<String> = (0..5).map(|_| { let n = rng.random_range(1..8); words(&mut rng, n) }).collect();
        let mut best = 0;
        for i in 1..cands.len() {
            if rouge_l_f1(&cands[i], &gold) > rouge_l_f1(&cands[best], &gold) {
                best = i;
            }
        }
        assert_eq!(oracle_select(&cands, &gold), best);
    }
}

#[test]
fn spread_matches_direct_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sets: Vec<(Vec<String>, String)> = (0..40)
        .map(|_| {
            let gold = words(&mut rng, 7);
            let cands = (0..5).map(|_| { let n = rng.random_range(2..9); words(&mut rng, n) }).collect();
            (cands, gold)
        })
        .collect();
    let s = candidate_spread(&sets).unwrap();
    let mut first = [0.0; 3];
    let mut hi = [0.0; 3];
    let mut lo = [0.0; 3];
    let mut not_first = 0.0;
    for (cands, gold) in &sets {
        let table: Vec<[f64; 3]> = cands
            .iter()
            .map(|c| {
                let (a, b, l) = pair_scores(&AlnumTokenizer, c, gold);
                [a.f1, b.f1, l.f1]
            })
            .collect();
        for m in 0..3 {
            let col: Vec<f64> = table.iter().map(|r| r[m]).collect();
            let mut mx = col[0];
            let mut mn = col[0];
            for &v in &col {
                if v > mx {
                    mx = v;
                }
                if v < mn {
                    mn = v;
                }
            }
            first[m] += col[0];
            hi[m] += mx - col[0];
            lo[m] += mn - col[0];
        }
        if table.iter().skip(1).any(|r| r[2] > table[0][2]) {
            not_first += 1.0;
        }
    }
    for m in 0..3 {
        assert!((s.mean_first[m] - first[m] / 40.0).abs() < 1e-12);
        assert!((s.mean_best_delta[m] - hi[m] / 40.0).abs() < 1e-12);
        assert!((s.mean_worst_delta[m] - lo[m] / 40.0).abs() < 1e-12);
        assert!(s.mean_best_delta[m] >= 0.0 && s.mean_worst_delta[m] <= 0.0);
        assert!((s.relative_best[m] - hi[m] / first[m]).abs() < 1e-12);
    }
    assert!((s.not_first_best_fraction - not_first / 40.0).abs() < 1e-12);
}
