use pads_core::ranker::{
    contrastive_margin, featurize_instances, info_nce_gradient, info_nce_loss, normalize_labels,
    score_candidates, select_best, train_phase1_featurized, train_phase2_featurized, train_ranker,
    ProjectionNet, RankerModel, TrainConfig,
};
use pads_core::retrieval::HashedProjection;
use pads_core::synthetic::{planted_instances, PlantedConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Loss with every parameter replaced by `params` (layout w1, b1, w2, b2).
fn loss_at(net: &ProjectionNet, params: &[f64], anchor: &[f64], cands: &[Vec<f64>], pos: usize, tau: f64) -> f64 {
    let mut n = net.clone();
    for (p, v) in n.params_mut().zip(params) {
        *p = *v;
    }
    let a = n.project(anchor).unwrap();
    let c: Vec<Vec<f64>> = cands.iter().map(|x| n.project(x).unwrap()).collect();
    info_nce_loss(&a, &c, pos, tau).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for trial in 0..25 {
        let input = rng.random_range(2..=8);
        let hidden = rng.random_range(2..=8);
        let proj = rng.random_range(2..=8);
        let k = rng.random_range(2..=5);
        let net = ProjectionNet::init(input, hidden, proj, trial);
        let anchor = random_vec(&mut rng, input);
        let cands: Vec<Vec<f64>> = (0..k).map(|_| random_vec(&mut rng, input)).collect();
        let pos = rng.random_range(0..k);
        let tau = [0.8, 0.3, 1.7][trial as usize % 3];
        let (_, grad) = info_nce_gradient(&net, &anchor, &cands, pos, tau).unwrap();
        let analytic = grad.flatten();
        let base = net.flatten();
        for i in 0..base.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += h;
            minus[i] -= h;
            let numeric = (loss_at(&net, &plus, &anchor, &cands, pos, tau)
                - loss_at(&net, &minus, &anchor, &cands, pos, tau))
                / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn unused_input_weights_get_zero_gradient() {
    // Input coordinates that are zero for every forward pass cannot affect the loss.
    let net = ProjectionNet::init(6, 4, 3, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut anchor = random_vec(&mut rng, 6);
    anchor[5] = 0.0;
    let cands: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let mut c = random_vec(&mut rng, 6);
            c[5] = 0.0;
            c
        })
        .collect();
    let (_, g) = info_nce_gradient(&net, &anchor, &cands, 1, 0.8).unwrap();
    for j in 0..4 {
        assert_eq!(g.w1[j * 6 + 5], 0.0);
    }
}

#[test]
fn uniform_similarity_loss_is_ln_k() {
    let net = ProjectionNet::init(4, 3, 3, 1);
    let x = vec![0.3, -0.2, 0.9, 0.1];
    let cands = vec![x.clone(); 5];
    let (loss, g) = info_nce_gradient(&net, &[1.0, 0.0, 0.0, 0.5], &cands, 0, 0.8).unwrap();
    assert!((loss - 5f64.ln()).abs() < 1e-9);
    assert!(g.flatten().iter().all(|v| v.is_finite()));
}

fn small_config() -> TrainConfig {
    TrainConfig {
        hidden_dim: 16,
        proj_dim: 8,
        epochs_phase1: 10,
        epochs_phase2: 30,
        ..TrainConfig::default()
    }
}

#[test]
fn phase2_leaves_backbone_bit_identical() {
    let provider = HashedProjection::new(16, 1);
    let data = featurize_instances(&planted_instances(&PlantedConfig::default(), "p", 30, false), &provider).unwrap();
    let cfg = small_config();
    let p1 = train_phase1_featurized(&data, &cfg).unwrap();
    let before: Vec<u64> = p1.net.flatten().iter().map(|v| v.to_bits()).collect();
    let p2 = train_phase2_featurized(&p1.net, &data, &cfg).unwrap();
    let after: Vec<u64> = p1.net.flatten().iter().map(|v| v.to_bits()).collect();
    assert_eq!(before, after);
    assert!(p2.head.w.iter().any(|w| *w != 0.0));
}

#[test]
fn training_is_deterministic() {
    let provider = HashedProjection::new(16, 1);
    let inst = planted_instances(&PlantedConfig::default(), "d", 40, false);
    let cfg = small_config();
    let (a, ..) = train_ranker(&inst, &cfg, &provider).unwrap();
    let (b, ..) = train_ranker(&inst, &cfg, &provider).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn planted_fixture_is_learned() {
    let provider = HashedProjection::new(32, 5);
    let cfg = PlantedConfig::default();
    let train = planted_instances(&cfg, "train", 200, false);
    let test = planted_instances(&PlantedConfig { seed: 99, ..cfg.clone() }, "test", 50, false);
    let tc = small_config();
    let (model, p1, _) = train_ranker(&train, &tc, &provider).unwrap();

    let held = featurize_instances(&test, &provider).unwrap();
    let (pos, neg) = contrastive_margin(&p1.net, &held).unwrap();
    assert!(pos > neg, "anchor-positive {pos} <= anchor-negative {neg}");

    let mut top = 0;
    for inst in &test {
        let best = select_best(&model, &inst.doc, &inst.candidates, &provider).unwrap();
        let max = inst.rouge_l.iter().copied().fold(f64::MIN, f64::max);
        if inst.rouge_l[best] == max {
            top += 1;
        }
    }
    assert!(top * 100 >= 80 * test.len(), "top-label ranked first on {top}/{}", test.len());
}

#[test]
fn gold_candidate_is_selected() {
    let provider = HashedProjection::new(32, 5);
    let cfg = PlantedConfig::default();
    let train = planted_instances(&cfg, "train", 200, false);
    let (model, ..) = train_ranker(&train, &small_config(), &provider).unwrap();
    let test = planted_instances(&PlantedConfig { seed: 3, ..cfg }, "gold", 20, true);
    for inst in &test {
        let gold = inst.doc.summary.as_deref().unwrap();
        let best = select_best(&model, &inst.doc, &inst.candidates, &provider).unwrap();
        assert_eq!(inst.candidates[best], gold, "{}", inst.doc.id);
    }
}

#[test]
fn checkpoint_scores_identically_after_round_trip() {
    let provider = HashedProjection::new(16, 1);
    let inst = planted_instances(&PlantedConfig::default(), "r", 20, false);
    let (model, ..) = train_ranker(&inst, &small_config(), &provider).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = RankerModel::load(&path).unwrap();
    assert_eq!(back, model);
    let probe = planted_instances(&PlantedConfig { seed: 1234, ..Default::default() }, "q", 10, false);
    for p in &probe {
        let a = score_candidates(&model, &p.doc, &p.candidates, &provider).unwrap();
        let b = score_candidates(&back, &p.doc, &p.candidates, &provider).unwrap();
        assert_eq!(a, b);
    }
}

proptest! {
    #[test]
    fn normalized_labels_form_a_distribution(labels in prop::collection::vec(0.0f64..=1.0, 2..12)) {
        let t = normalize_labels(&labels);
        prop_assert_eq!(t.len(), labels.len());
        prop_assert!(t.iter().all(|x| *x >= 0.0));
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_loss_is_ln_k_for_any_tau(k in 2usize..9, tau in 0.05f64..10.0) {
        let a = vec![0.6, 0.8];
        let c = vec![vec![0.0, 1.0]; k];
        prop_assert!((info_nce_loss(&a, &c, 0, tau).unwrap() - (k as f64).ln()).abs() < 1e-9);
    }
}
