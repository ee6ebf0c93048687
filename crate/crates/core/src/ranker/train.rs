//! Two-phase training: InfoNCE on the projection network, then a scoring head
//! fit to normalized ROUGE-L labels with the network frozen.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::features::{embed_document, featurize_with_doc_embedding};
use super::loss::{info_nce_gradient, normalize_labels, select_positive, soft_cross_entropy};
use super::net::{dot, NetGradient, ProjectionNet};
use super::{RankerError, ScoringHead, TrainConfig, TrainingInstance};
use crate::retrieval::EmbeddingProvider;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut f64>, grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in params.enumerate() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Network inputs for one training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedInstance {
    pub doc_id: String,
    /// Gold summary features.
    pub anchor: Vec<f64>,
    pub candidates: Vec<Vec<f64>>,
    pub rouge_l: Vec<f64>,
}

pub fn featurize_instances(
    instances: &[TrainingInstance],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<FeaturizedInstance>, RankerError> {
    instances
        .iter()
        .map(|inst| {
            inst.validate()?;
            let gold = inst.doc.summary.as_deref().expect("validated");
            let doc_emb = embed_document(&inst.doc, provider)?;
            let feats = |s: &str| -> Result<Vec<f64>, RankerError> {
                featurize_with_doc_embedding(&inst.doc, &doc_emb, s, provider)
                    .map(|f| f.to_input())
            };
            Ok(FeaturizedInstance {
                doc_id: inst.doc.id.clone(),
                anchor: feats(gold)?,
                candidates: inst
                    .candidates
                    .iter()
                    .map(|c| feats(c))
                    .collect::<Result<_, _>>()?,
                rouge_l: inst.rouge_l.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Phase1Result {
    pub net: ProjectionNet,
    /// Mean InfoNCE loss per epoch, measured on the minibatches before each update.
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Phase2Result {
    pub head: ScoringHead,
    /// Mean cross-entropy per epoch.
    pub loss_trace: Vec<f64>,
}

fn input_dim_of(data: &[FeaturizedInstance]) -> Result<usize, RankerError> {
    let first = data.first().ok_or(RankerError::EmptyInstances)?;
    let dim = first.anchor.len();
    for d in data {
        if d.candidates.len() < 2 {
            return Err(RankerError::InvalidInstance(format!(
                "{:?} has {} candidates, need at least 2",
                d.doc_id,
                d.candidates.len()
            )));
        }
        if let Some(bad) = std::iter::once(&d.anchor)
            .chain(&d.candidates)
            .find(|x| x.len() != dim)
        {
            return Err(RankerError::DimMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
    }
    Ok(dim)
}

fn minibatches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Phase 1 on pre-featurized data. Anchor = gold summary, positive = the
/// highest ROUGE-L candidate, negatives = the other candidates.
pub fn train_phase1_featurized(
    data: &[FeaturizedInstance],
    cfg: &TrainConfig,
) -> Result<Phase1Result, RankerError> {
    cfg.validate()?;
    let input_dim = input_dim_of(data)?;
    let mut net = ProjectionNet::init(input_dim, cfg.hidden_dim, cfg.proj_dim, cfg.seed);
    let mut adam = Adam::new(net.n_params(), cfg.lr_backbone);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut loss_trace = Vec::with_capacity(cfg.epochs_phase1);
    for _ in 0..cfg.epochs_phase1 {
        let mut epoch_loss = 0.0;
        for batch in minibatches(data.len(), cfg.batch_size, &mut rng) {
            let mut grad = NetGradient::zeros(&net);
            for &i in &batch {
                let inst = &data[i];
                let pos = select_positive(&inst.rouge_l);
                let (loss, g) = info_nce_gradient(&net, &inst.anchor, &inst.candidates, pos, cfg.tau)?;
                epoch_loss += loss;
                grad.add_assign(&g);
            }
            grad.scale(1.0 / batch.len() as f64);
            adam.step(net.params_mut(), &grad.flatten());
        }
        loss_trace.push(epoch_loss / data.len() as f64);
    }
    Ok(Phase1Result { net, loss_trace })
}

/// Phase 2 on pre-featurized data. Only the head is updated.
pub fn train_phase2_featurized(
    net: &ProjectionNet,
    data: &[FeaturizedInstance],
    cfg: &TrainConfig,
) -> Result<Phase2Result, RankerError> {
    cfg.validate()?;
    input_dim_of(data)?;
    let projected: Vec<(Vec<Vec<f64>>, Vec<f64>)> = data
        .iter()
        .map(|inst| {
            let proj = inst
                .candidates
                .iter()
                .map(|x| net.project(x))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((proj, normalize_labels(&inst.rouge_l)))
        })
        .collect::<Result<_, RankerError>>()?;
    let mut head = ScoringHead::zeros(net.proj_dim);
    let mut adam = Adam::new(net.proj_dim + 1, cfg.lr_head);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut loss_trace = Vec::with_capacity(cfg.epochs_phase2);
    for _ in 0..cfg.epochs_phase2 {
        let mut epoch_loss = 0.0;
        for batch in minibatches(data.len(), cfg.batch_size, &mut rng) {
            let mut grad = vec![0.0; net.proj_dim + 1];
            for &i in &batch {
                let (proj, targets) = &projected[i];
                let logits: Vec<f64> = proj.iter().map(|c| head.logit(c)).collect();
                let (loss, d_logits) = soft_cross_entropy(&logits, targets);
                epoch_loss += loss;
                for (c, d) in proj.iter().zip(&d_logits) {
                    for (g, ci) in grad.iter_mut().zip(c) {
                        *g += d * ci;
                    }
                    grad[net.proj_dim] += d;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(head.w.iter_mut().chain(std::iter::once(&mut head.b)), &grad);
        }
        loss_trace.push(epoch_loss / data.len() as f64);
    }
    Ok(Phase2Result { head, loss_trace })
}

pub fn train_phase1(
    instances: &[TrainingInstance],
    cfg: &TrainConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<Phase1Result, RankerError> {
    if instances.is_empty() {
        return Err(RankerError::EmptyInstances);
    }
    train_phase1_featurized(&featurize_instances(instances, provider)?, cfg)
}

pub fn train_phase2(
    net: &ProjectionNet,
    instances: &[TrainingInstance],
    cfg: &TrainConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<Phase2Result, RankerError> {
    if instances.is_empty() {
        return Err(RankerError::EmptyInstances);
    }
    train_phase2_featurized(net, &featurize_instances(instances, provider)?, cfg)
}

/// Mean anchor·candidate similarity for positives and negatives.
pub fn contrastive_margin(net: &ProjectionNet, data: &[FeaturizedInstance]) -> Result<(f64, f64), RankerError> {
    let (mut pos, mut neg, mut n_neg) = (0.0, 0.0, 0usize);
    for inst in data {
        let a = net.project(&inst.anchor)?;
        let p = select_positive(&inst.rouge_l);
        for (i, c) in inst.candidates.iter().enumerate() {
            let s = dot(&a, &net.project(c)?);
            if i == p {
                pos += s;
            } else {
                neg += s;
                n_neg += 1;
            }
        }
    }
    Ok((pos / data.len() as f64, neg / n_neg.max(1) as f64))
}
