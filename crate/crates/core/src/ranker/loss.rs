//! InfoNCE over candidate projections and soft-label cross-entropy.

use super::net::{dot, NetGradient, ProjectionNet};
use super::RankerError;

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|s| (s - lse).exp()).collect()
}

fn check_nce(n_candidates: usize, positive_index: usize, tau: f64) -> Result<(), RankerError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(RankerError::InvalidTemperature(tau));
    }
    if positive_index >= n_candidates {
        return Err(RankerError::InvalidPositive {
            index: positive_index,
            k: n_candidates,
        });
    }
    Ok(())
}

/// Loss and its gradients with respect to the anchor and each candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct NceOutput {
    pub loss: f64,
    pub d_anchor: Vec<f64>,
    pub d_candidates: Vec<Vec<f64>>,
}

/// `-log( exp(a·c₊/τ) / Σᵢ exp(a·cᵢ/τ) )`, the sum running over the candidates
/// only (the positive appears once).
pub fn info_nce_loss(
    anchor: &[f64],
    candidates: &[Vec<f64>],
    positive_index: usize,
    tau: f64,
) -> Result<f64, RankerError> {
    info_nce_with_grads(anchor, candidates, positive_index, tau).map(|o| o.loss)
}

pub fn info_nce_with_grads(
    anchor: &[f64],
    candidates: &[Vec<f64>],
    positive_index: usize,
    tau: f64,
) -> Result<NceOutput, RankerError> {
    check_nce(candidates.len(), positive_index, tau)?;
    if let Some(c) = candidates.iter().find(|c| c.len() != anchor.len()) {
        return Err(RankerError::DimMismatch {
            expected: anchor.len(),
            found: c.len(),
        });
    }
    let logits: Vec<f64> = candidates.iter().map(|c| dot(anchor, c) / tau).collect();
    let lse = log_sum_exp(&logits);
    let loss = lse - logits[positive_index];
    // dL/dlogit_i = p_i - [i = positive]
    let coeff: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, s)| (s - lse).exp() - if i == positive_index { 1.0 } else { 0.0 })
        .collect();
    let mut d_anchor = vec![0.0; anchor.len()];
    for (c, w) in candidates.iter().zip(&coeff) {
        for (d, ci) in d_anchor.iter_mut().zip(c) {
            *d += w * ci / tau;
        }
    }
    let d_candidates = coeff
        .iter()
        .map(|w| anchor.iter().map(|a| w * a / tau).collect())
        .collect();
    Ok(NceOutput {
        loss,
        d_anchor,
        d_candidates,
    })
}

/// InfoNCE loss of one instance and its exact gradient with respect to every
/// network parameter. The anchor and the candidates share the network.
pub fn info_nce_gradient(
    net: &ProjectionNet,
    anchor_input: &[f64],
    candidate_inputs: &[Vec<f64>],
    positive_index: usize,
    tau: f64,
) -> Result<(f64, NetGradient), RankerError> {
    check_nce(candidate_inputs.len(), positive_index, tau)?;
    let anchor = net.forward(anchor_input)?;
    let cands = candidate_inputs
        .iter()
        .map(|x| net.forward(x))
        .collect::<Result<Vec<_>, _>>()?;
    let cand_out: Vec<Vec<f64>> = cands.iter().map(|t| t.output.clone()).collect();
    let nce = info_nce_with_grads(&anchor.output, &cand_out, positive_index, tau)?;
    let mut grad = NetGradient::zeros(net);
    net.backward(&anchor, &nce.d_anchor, &mut grad);
    for (trace, up) in cands.iter().zip(&nce.d_candidates) {
        net.backward(trace, up, &mut grad);
    }
    Ok((nce.loss, grad))
}

/// Index of the highest ROUGE-L candidate; lowest index on ties.
pub fn select_positive(rouge_l: &[f64]) -> usize {
    let mut best = 0;
    for (i, &r) in rouge_l.iter().enumerate() {
        if r > rouge_l[best] {
            best = i;
        }
    }
    best
}

/// Sum-normalized labels, uniform when every score is zero.
pub fn normalize_labels(rouge_l: &[f64]) -> Vec<f64> {
    let total: f64 = rouge_l.iter().sum();
    if total > 0.0 {
        rouge_l.iter().map(|r| r / total).collect()
    } else {
        vec![1.0 / rouge_l.len() as f64; rouge_l.len()]
    }
}

/// `-Σ tᵢ log softmax(s)ᵢ` and its gradient `softmax(s) - t` with respect to the logits.
pub fn soft_cross_entropy(logits: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let lse = log_sum_exp(logits);
    let loss = targets
        .iter()
        .zip(logits)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, s)| -t * (s - lse))
        .sum();
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(s, t)| (s - lse).exp() - t)
        .collect();
    (loss, grad)
}
