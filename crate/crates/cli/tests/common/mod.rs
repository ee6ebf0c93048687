//! Replay fixtures shared by the CLI and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pads_core::config::RunConfig;
use pads_core::corpus::load_corpus;
use pads_core::eval::{run_mode, EvalMode, EvalReport};
use pads_core::llm::RecordingTransport;
use pads_core::ranker::{train_ranker, TrainConfig};
use pads_core::retrieval::Strategy;
use pads_core::synthetic::{planted_documents, planted_instances, PlantedChat, PlantedConfig};
use pads_core::Corpus;
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
    pub config: PathBuf,
    pub run: RunConfig,
    /// Reports produced while recording, straight from the library.
    pub recorded: Vec<EvalReport>,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

pub fn small_training() -> TrainConfig {
    TrainConfig {
        hidden_dim: 16,
        proj_dim: 8,
        epochs_phase1: 10,
        epochs_phase2: 30,
        ..TrainConfig::default()
    }
}

/// Writes planted test and pool corpora, trains and saves a ranker, and
/// records a replay file by running `modes` against a scripted endpoint with
/// exactly the settings the CLI derives from the written config.
/// `malformed` lists documents that first answer out of format.
pub fn replay_fixture(n_test: usize, modes: &[EvalMode], malformed: &[(&str, usize)]) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let planted = PlantedConfig::default();
    let test = Corpus::new("test", planted_documents(&planted, "t", n_test)).unwrap();
    let pool = Corpus::new("pool", planted_documents(&PlantedConfig { seed: 77, ..planted.clone() }, "p", 20)).unwrap();
    test.save(root.join("test.jsonl")).unwrap();
    pool.save(root.join("pool.jsonl")).unwrap();

    let mut run = RunConfig {
        test_corpus: Some(root.join("test.jsonl")),
        pool_corpus: Some(root.join("pool.jsonl")),
        strategy: Strategy::Bm25,
        modes: modes.to_vec(),
        concurrency: 3,
        model_path: Some(root.join("ranker.json")),
        output_dir: root.join("out"),
        training: small_training(),
        ..RunConfig::default()
    };
    run.provider.dim = 32;
    run.transport.replay_path = Some(root.join("replay.jsonl"));
    run.validate().unwrap();

    let provider = run.provider.build().unwrap();
    let train = planted_instances(&planted, "train", 200, false);
    let (model, ..) = train_ranker(&train, &run.training, provider.as_ref()).unwrap();
    model.save(root.join("ranker.json")).unwrap();

    let mut chat = PlantedChat::new(planted, test.documents.clone(), 2);
    for (id, n) in malformed {
        chat = chat.with_malformed(*id, *n);
    }
    let recorder = RecordingTransport::new(chat, root.join("replay.jsonl")).unwrap();
    let test = load_corpus(root.join("test.jsonl")).unwrap();
    let pool = load_corpus(root.join("pool.jsonl")).unwrap();
    let ec = run.eval_config();
    let recorded = modes
        .iter()
        .map(|&m| run_mode(m, &test, &pool, &recorder, Some(provider.as_ref()), Some(&model), &ec).unwrap().report)
        .collect();

    let config = root.join("config.toml");
    std::fs::write(&config, run.render()).unwrap();
    Fixture {
        dir,
        config,
        run,
        recorded,
    }
}

pub fn pads(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pads"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

/// R-L cell of `mode`'s row in a rendered report table.
pub fn table_rl(table: &str, mode: &str) -> Option<f64> {
    table
        .lines()
        .find(|l| l.split_whitespace().next() == Some(mode))
        .and_then(|l| l.split_whitespace().nth(3))
        .and_then(|v| v.parse().ok())
}
