use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pads_core::config::{ProviderKind, RunConfig, TransportKind};
use pads_core::corpus::{corpus_stats, load_corpus};
use pads_core::eval::{
    candidate_spread, format_qualification_counts, format_score, random_demonstrations,
    relative_to_baseline, render_report_table, reports_to_json, run_mode, EvalMode, EvalReport,
};
use pads_core::llm::{generate_all, CandidateRecord, PromptShape};
use pads_core::ranker::{
    load_training_instances, save_training_instances, score_candidates, select_best, train_ranker,
    RankerModel, TrainingInstance,
};
use pads_core::retrieval::{upper_bound_demonstration, Retriever, Strategy};
use pads_core::{Corpus, Document};
use serde_json::json;

use crate::{usage, Cli, Command, CommonArgs, DemoArg, ProviderArg, ShapeArg};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_toml(&text, path)?
        }
        None => RunConfig::default(),
    };
    apply_flags(&mut cfg, &cli.common);
    if let Command::TrainRanker {
        tau,
        lr_backbone,
        lr_head,
        epochs_phase1,
        epochs_phase2,
        batch_size,
        ..
    } = &cli.command
    {
        let t = &mut cfg.training;
        set(&mut t.tau, *tau);
        set(&mut t.lr_backbone, *lr_backbone);
        set(&mut t.lr_head, *lr_head);
        set(&mut t.epochs_phase1, *epochs_phase1);
        set(&mut t.epochs_phase2, *epochs_phase2);
        set(&mut t.batch_size, *batch_size);
    }
    if let Command::Evaluate { modes } = &cli.command {
        if !modes.is_empty() {
            cfg.modes = modes.iter().flatten().copied().collect();
        }
    }
    cfg.validate()?;

    match cli.command {
        Command::Stats { corpus } => {
            let corpus = load_corpus(&corpus)?;
            println!("{}", corpus_stats(&corpus));
            Ok(())
        }
        Command::Retrieve { query, top_k } => retrieve(&cfg, query, top_k),
        Command::Generate {
            demo,
            no_summary,
            shape,
            out,
        } => generate(&cfg, demo, no_summary, shape, out),
        Command::TrainRanker {
            instances,
            candidates,
            save_instances,
            ..
        } => train(&cfg, instances, candidates, save_instances),
        Command::Rank { candidates, out } => rank(&cfg, &candidates, out),
        Command::Evaluate { .. } => evaluate(&cfg),
        Command::Spread { candidates } => spread(&cfg, &candidates),
        Command::CompareRetrievers => compare_retrievers(&cfg),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_flags(cfg: &mut RunConfig, a: &CommonArgs) {
    if a.test.is_some() {
        cfg.test_corpus = a.test.clone();
    }
    if a.pool.is_some() {
        cfg.pool_corpus = a.pool.clone();
    }
    if a.model.is_some() {
        cfg.model_path = a.model.clone();
    }
    set(&mut cfg.strategy, a.strategy);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.concurrency, a.concurrency);
    set(&mut cfg.output_dir, a.output_dir.clone());
    set(&mut cfg.generation.k, a.k);
    set(&mut cfg.generation.max_format_retries, a.retries);
    set(&mut cfg.generation.temperature, a.temperature);
    set(&mut cfg.generation.model_name, a.model_name.clone());
    if let Some(path) = &a.replay {
        cfg.transport.kind = TransportKind::Replay;
        cfg.transport.replay_path = Some(path.clone());
    }
    if let Some(url) = &a.endpoint {
        cfg.transport.kind = TransportKind::Live;
        cfg.transport.endpoint = Some(url.clone());
    }
    if a.record.is_some() {
        cfg.transport.record_path = a.record.clone();
    }
    if let Some(p) = a.provider {
        cfg.provider.kind = match p {
            ProviderArg::Hashed => ProviderKind::Hashed,
            ProviderArg::Precomputed => ProviderKind::Precomputed,
            ProviderArg::Remote => ProviderKind::Remote,
        };
    }
    if a.embeddings.is_some() {
        cfg.provider.path = a.embeddings.clone();
    }
    if a.provider_endpoint.is_some() {
        cfg.provider.endpoint = a.provider_endpoint.clone();
    }
    set(&mut cfg.provider.dim, a.dim);
}

fn test_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let path = cfg.test_corpus.as_ref().ok_or_else(|| usage("--test (or test_corpus) is required"))?;
    Ok(load_corpus(path)?)
}

fn pool_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let path = cfg.pool_corpus.as_ref().ok_or_else(|| usage("--pool (or pool_corpus) is required"))?;
    Ok(load_corpus(path)?)
}

fn load_model(cfg: &RunConfig) -> Result<RankerModel> {
    let path = cfg.model_path.as_ref().ok_or_else(|| usage("--model (or model_path) is required"))?;
    Ok(RankerModel::load(path)?)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn retrieve(cfg: &RunConfig, query: Option<String>, top_k: usize) -> Result<()> {
    let pool = pool_corpus(cfg)?;
    let provider = cfg.provider.build()?;
    let retriever = Retriever::new(cfg.strategy, pool, Some(provider.as_ref()))?;
    match query {
        Some(text) => {
            for (rank, hit) in retriever.retrieve(&Document::new("query", text), top_k)?.iter().enumerate() {
                println!("{}\t{}\t{:.6}", rank + 1, hit.doc_id, hit.score);
            }
        }
        None => {
            let queries = cfg
                .test_corpus
                .as_ref()
                .ok_or_else(|| usage("give --query or --test"))
                .and_then(|_| test_corpus(cfg))?;
            for doc in queries.iter() {
                let hits = retriever.retrieve(doc, top_k)?;
                println!("{}", json!({ "query_id": doc.id, "hits": hits }));
            }
        }
    }
    Ok(())
}

fn generate(cfg: &RunConfig, demo: DemoArg, no_summary: bool, shape: ShapeArg, out: Option<PathBuf>) -> Result<()> {
    let test = test_corpus(cfg)?;
    let provider = cfg.provider.build()?;
    let transport = cfg.transport.build()?;
    if demo == DemoArg::None && shape != ShapeArg::MultiTurn {
        bail!(usage("a concatenated prompt needs a demonstration"));
    }
    let mut demos: Vec<Option<Document>> = match demo {
        DemoArg::None => vec![None; test.len()],
        DemoArg::UpperBound => test
            .iter()
            .map(|d| upper_bound_demonstration(d).map(Some))
            .collect::<Result<_, _>>()?,
        DemoArg::Random => random_demonstrations(&test, &pool_corpus(cfg)?, cfg.seed, cfg.exclude_self)?
            .into_iter()
            .map(Some)
            .collect(),
        DemoArg::Similar => {
            let retriever = Retriever::new(cfg.strategy, pool_corpus(cfg)?, Some(provider.as_ref()))?;
            test.iter()
                .map(|d| retriever.select_demonstration(d, cfg.exclude_self).map(Some))
                .collect::<Result<_, _>>()?
        }
    };
    if no_summary {
        demos.iter_mut().flatten().for_each(|d| d.summary = None);
    }
    let jobs: Vec<(Option<Document>, Document)> = demos.into_iter().zip(test.iter().cloned()).collect();
    let shapes: &[(PromptShape, &str)] = match shape {
        ShapeArg::MultiTurn => &[(PromptShape::MultiTurn, "multi_turn")],
        ShapeArg::Concatenated => &[(PromptShape::Concatenated, "concatenated")],
        ShapeArg::Both => &[(PromptShape::MultiTurn, "multi_turn"), (PromptShape::Concatenated, "concatenated")],
    };
    let retry = cfg.transport.retry_policy();
    let mut arms: Vec<(&str, Vec<CandidateRecord>)> = Vec::new();
    for (shape, name) in shapes {
        let outcomes = generate_all(transport.as_ref(), &jobs, &cfg.generation, &retry, *shape, cfg.concurrency)?;
        let records: Vec<CandidateRecord> = outcomes.iter().map(CandidateRecord::from).collect();
        let path = match (&out, shapes.len()) {
            (Some(p), 1) => p.clone(),
            (Some(p), _) => p.with_extension(format!("{name}.jsonl")),
            (None, 1) => cfg.output_dir.join("candidates.jsonl"),
            (None, _) => cfg.output_dir.join(format!("candidates.{name}.jsonl")),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        CandidateRecord::write_all(&path, &records).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
        arms.push((name, records));
    }
    let views: Vec<(&str, &[CandidateRecord])> = arms.iter().map(|(n, r)| (*n, r.as_slice())).collect();
    for count in format_qualification_counts(&views)? {
        println!("{:<14} {}", count.arm, count);
    }
    Ok(())
}

fn instances_from_records(records: &[CandidateRecord], corpus: &Corpus) -> Result<Vec<TrainingInstance>> {
    records
        .iter()
        .filter(|r| r.skip_reason.is_none())
        .map(|r| {
            let doc = corpus
                .get(&r.doc_id)
                .with_context(|| format!("candidate record {:?} is not in the corpus", r.doc_id))?;
            Ok(TrainingInstance::from_candidates(doc.clone(), r.candidates.clone())?)
        })
        .collect()
}

fn read_records(path: &Path) -> Result<Vec<CandidateRecord>> {
    CandidateRecord::read_all(path).with_context(|| format!("reading {}", path.display()))
}

fn train(
    cfg: &RunConfig,
    instances: Option<PathBuf>,
    candidates: Option<PathBuf>,
    save_instances: Option<PathBuf>,
) -> Result<()> {
    let instances = match (instances.or_else(|| cfg.train_instances.clone()), candidates) {
        (Some(path), _) => load_training_instances(&path)?,
        (None, Some(path)) => instances_from_records(&read_records(&path)?, &test_corpus(cfg)?)?,
        (None, None) => bail!(usage("give --instances, or --candidates with --test")),
    };
    if let Some(path) = save_instances {
        save_training_instances(&path, &instances)?;
    }
    let provider = cfg.provider.build()?;
    let (model, p1, p2) = train_ranker(&instances, &cfg.training, provider.as_ref())?;
    let path = cfg
        .model_path
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("ranker.json"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    model.save(&path)?;
    let last = |t: &[f64]| t.last().map_or("-".to_string(), |v| format!("{v:.4}"));
    println!("instances: {}", instances.len());
    println!("phase 1 loss: {}", last(&p1.loss_trace));
    println!("phase 2 loss: {}", last(&p2.loss_trace));
    println!("model: {}", path.display());
    Ok(())
}

fn rank(cfg: &RunConfig, candidates: &Path, out: Option<PathBuf>) -> Result<()> {
    let model = load_model(cfg)?;
    let corpus = test_corpus(cfg)?;
    let provider = cfg.provider.build()?;
    let mut lines = String::new();
    for r in read_records(candidates)?.iter().filter(|r| r.skip_reason.is_none()) {
        let doc = corpus
            .get(&r.doc_id)
            .with_context(|| format!("candidate record {:?} is not in the corpus", r.doc_id))?;
        let scores = score_candidates(&model, doc, &r.candidates, provider.as_ref())?;
        let best = select_best(&model, doc, &r.candidates, provider.as_ref())?;
        lines.push_str(&json!({
            "doc_id": r.doc_id,
            "selected": best,
            "summary": r.candidates[best],
            "scores": scores,
        })
        .to_string());
        lines.push('\n');
    }
    match out {
        Some(path) => write_file(&path, &lines),
        None => {
            print!("{lines}");
            Ok(())
        }
    }
}

fn evaluate(cfg: &RunConfig) -> Result<()> {
    if cfg.modes.is_empty() {
        bail!(usage("no modes selected; pass --mode or set modes in the config"));
    }
    let test = test_corpus(cfg)?;
    let needs_pool = cfg
        .modes
        .iter()
        .any(|m| !matches!(m, EvalMode::Zero | EvalMode::UpperBound));
    let pool = if needs_pool { pool_corpus(cfg)? } else { Corpus::new("pool", Vec::new())? };
    let provider = cfg.provider.build()?;
    let transport = cfg.transport.build()?;
    let model = match cfg.modes.contains(&EvalMode::Pads) {
        true => Some(load_model(cfg)?),
        false => None,
    };
    let ec = cfg.eval_config();
    let mut reports = Vec::new();
    for &mode in &cfg.modes {
        let run = run_mode(mode, &test, &pool, transport.as_ref(), Some(provider.as_ref()), model.as_ref(), &ec)
            .with_context(|| format!("mode {mode}"))?;
        reports.push(run.report);
    }
    let table = render_report_table(&reports)?;
    write_file(&cfg.output_dir.join("report.json"), &reports_to_json(&reports))?;
    write_file(&cfg.output_dir.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn spread(cfg: &RunConfig, candidates: &Path) -> Result<()> {
    let corpus = test_corpus(cfg)?;
    let mut sets = Vec::new();
    for r in read_records(candidates)?.into_iter().filter(|r| r.skip_reason.is_none()) {
        let gold = corpus
            .get(&r.doc_id)
            .and_then(|d| d.summary.clone())
            .with_context(|| format!("no gold summary for {:?}", r.doc_id))?;
        sets.push((r.candidates, gold));
    }
    let s = candidate_spread(&sets)?;
    println!("documents: {}", s.n_documents);
    println!("{:<8} {:>8} {:>8} {:>8}", "", "R-1", "R-2", "R-L");
    let pct = |v: [f64; 3]| v.map(|x| format!("{:+.1}%", x * 100.0));
    for (label, row) in [("best", pct(s.relative_best)), ("worst", pct(s.relative_worst))] {
        println!("{:<8} {:>8} {:>8} {:>8}", label, row[0], row[1], row[2]);
    }
    println!("first not best: {:.1}%", s.not_first_best_fraction * 100.0);
    write_file(
        &cfg.output_dir.join("spread.json"),
        &(serde_json::to_string_pretty(&s)? + "\n"),
    )
}

fn compare_retrievers(cfg: &RunConfig) -> Result<()> {
    let test = test_corpus(cfg)?;
    let pool = pool_corpus(cfg)?;
    let provider = cfg.provider.build()?;
    let transport = cfg.transport.build()?;
    let ec = cfg.eval_config();
    let run = |mode, strategy| {
        let ec = pads_core::eval::EvalConfig { strategy, ..ec.clone() };
        run_mode(mode, &test, &pool, transport.as_ref(), Some(provider.as_ref()), None, &ec)
            .map(|r| r.report)
            .with_context(|| format!("{mode} with {strategy}"))
    };
    let zero: EvalReport = run(EvalMode::Zero, cfg.strategy)?;
    let mut rows = Vec::new();
    let mut table = format!(
        "{:<8} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}\n",
        "strategy", "R-1", "R-2", "R-L", "dR-1", "dR-2", "dR-L"
    );
    table.push_str(&format!(
        "{:<8} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}\n",
        "zero",
        format_score(zero.rouge.r1.f1),
        format_score(zero.rouge.r2.f1),
        format_score(zero.rouge.rl.f1),
        "-",
        "-",
        "-"
    ));
    for strategy in Strategy::ALL {
        let report = run(EvalMode::SimilarDemo, strategy)?;
        let rel = relative_to_baseline(&report.rouge, &zero.rouge);
        table.push_str(&format!(
            "{:<8} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}\n",
            strategy.to_string(),
            format_score(report.rouge.r1.f1),
            format_score(report.rouge.r2.f1),
            format_score(report.rouge.rl.f1),
            format!("{:+.1}%", rel[0] * 100.0),
            format!("{:+.1}%", rel[1] * 100.0),
            format!("{:+.1}%", rel[2] * 100.0),
        ));
        rows.push(json!({ "strategy": strategy, "rouge": report.rouge, "relative_to_zero": rel }));
    }
    let out = json!({ "zero": zero.rouge, "strategies": rows });
    write_file(
        &cfg.output_dir.join("compare_retrievers.json"),
        &(serde_json::to_string_pretty(&out)? + "\n"),
    )?;
    print!("{table}");
    Ok(())
}
