//! InfoNCE over cosine similarity, with gradients w.r.t. every input vector.

use super::{ObjectiveError, Result};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// cos(a, b) and its gradients w.r.t. `a` and `b`. Both must be nonzero.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (na, nb) = (norm(a), norm(b));
    let sim = dot(a, b) / (na * nb);
    let da = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - sim * x / (na * na))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - sim * y / (nb * nb))
        .collect();
    (sim, da, db)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn require_nonzero(v: &[f64], which: impl FnOnce() -> String) -> Result<()> {
    if norm(v) == 0.0 || !v.iter().all(|x| x.is_finite()) {
        Err(ObjectiveError::ZeroVector(which()))
    } else {
        Ok(())
    }
}

/// Per-example contrastive loss and its input gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLoss {
    pub value: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negatives: Vec<Vec<f64>>,
}

/// -ln[ e^{sim(x,pos)/tau} / (e^{sim(x,pos)/tau} + sum_neg e^{sim(x,neg)/tau}) ].
pub fn cl_sample_loss(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>], tau: f64) -> Result<SampleLoss> {
    if !(tau > 0.0) {
        return Err(ObjectiveError::NonPositiveTemperature(tau));
    }
    if negatives.is_empty() {
        return Err(ObjectiveError::NoNegatives);
    }
    require_nonzero(anchor, || "anchor".into())?;
    require_nonzero(positive, || "positive".into())?;
    for (i, n) in negatives.iter().enumerate() {
        require_nonzero(n, || format!("negative {i}"))?;
    }
    let mut sims = Vec::with_capacity(negatives.len() + 1);
    sims.push(cosine_with_grad(anchor, positive));
    for n in negatives {
        sims.push(cosine_with_grad(anchor, n));
    }
    let logits: Vec<f64> = sims.iter().map(|(s, _, _)| s / tau).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let lse = max + log_z;
    let value = (max - logits[0]) + log_z;

    let mut grad_anchor = vec![0.0; anchor.len()];
    let mut others = Vec::with_capacity(sims.len());
    for (i, (l, (_, da, db))) in logits.iter().zip(&sims).enumerate() {
        let coeff = ((l - lse).exp() - if i == 0 { 1.0 } else { 0.0 }) / tau;
        for (g, x) in grad_anchor.iter_mut().zip(da) {
            *g += coeff * x;
        }
        others.push(db.iter().map(|x| coeff * x).collect::<Vec<f64>>());
    }
    let grad_positive = others.remove(0);
    Ok(SampleLoss {
        value,
        grad_anchor,
        grad_positive,
        grad_negatives: others,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub grad_anchors: Vec<Vec<f64>>,
    pub grad_answers: Vec<Vec<f64>>,
}

/// Sum over i of -ln[ e^{sim(x_i,a_i)/tau} / sum_j e^{sim(x_i,a_j)/tau} ];
/// the denominator includes the positive.
pub fn cl_batch_loss(anchors: &[Vec<f64>], answers: &[Vec<f64>], tau: f64) -> Result<BatchLoss> {
    if !(tau > 0.0) {
        return Err(ObjectiveError::NonPositiveTemperature(tau));
    }
    let b = anchors.len();
    if b < 2 {
        return Err(ObjectiveError::BatchTooSmall(b));
    }
    assert_eq!(b, answers.len(), "anchors and answers must pair up");
    for (i, v) in anchors.iter().enumerate() {
        require_nonzero(v, || format!("anchor {i}"))?;
    }
    for (i, v) in answers.iter().enumerate() {
        require_nonzero(v, || format!("answer {i}"))?;
    }
    let dim = anchors[0].len();
    let mut grad_anchors = vec![vec![0.0; dim]; b];
    let mut grad_answers = vec![vec![0.0; dim]; b];
    let mut value = 0.0;
    for i in 0..b {
        let sims: Vec<(f64, Vec<f64>, Vec<f64>)> = answers.iter().map(|a| cosine_with_grad(&anchors[i], a)).collect();
        let logits: Vec<f64> = sims.iter().map(|(s, _, _)| s / tau).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let lse = max + log_z;
        value += (max - logits[i]) + log_z;
        for (j, (l, (_, dx, da))) in logits.iter().zip(&sims).enumerate() {
            let coeff = ((l - lse).exp() - if i == j { 1.0 } else { 0.0 }) / tau;
            for (g, x) in grad_anchors[i].iter_mut().zip(dx) {
                *g += coeff * x;
            }
            for (g, x) in grad_answers[j].iter_mut().zip(da) {
                *g += coeff * x;
            }
        }
    }
    Ok(BatchLoss {
        value,
        grad_anchors,
        grad_answers,
    })
}
