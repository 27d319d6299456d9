//! Transport-weighted volume loss, the volume-contrastive loss, their
//! combination, and the training loop that drives the encoders with them.

mod train;

pub use train::{evaluate_frozen, prepare_batch, train, train_step, FrozenBatch, TrainRun, TrainState};

use log::warn;
use rand::Rng;

use crate::config::{ContrastiveForm, GroupMeasure};
use crate::error::{Error, Result};
use crate::geometry;
use crate::linalg::{dot, Matrix};
use crate::model::EmbeddingSet;
use crate::transport::MatchGroup;

/// Per-step loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub mover_loss: f64,
    pub contrastive_loss: f64,
    pub total: f64,
    pub group_count: usize,
    pub mean_pos_volume: f64,
    pub mean_neg_volume: f64,
}

/// A scalar loss and its gradient with respect to each embedding set, in the
/// same order as the embedding sets passed in.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grads: Vec<Matrix>,
}

impl LossGrad {
    fn zeros(embeddings: &[&EmbeddingSet]) -> Self {
        Self {
            value: 0.0,
            grads: embeddings.iter().map(|e| Matrix::zeros(e.len(), e.dim())).collect(),
        }
    }
}

impl GroupMeasure {
    /// Score of one group of columns and its `d×k` gradient.
    pub fn evaluate(self, columns: &[&[f64]]) -> (f64, Matrix) {
        match self {
            GroupMeasure::Volume => {
                let r = geometry::volume_of(columns);
                (r.volume, r.gradient)
            }
            GroupMeasure::PairwiseCosine => {
                let k = columns.len();
                let d = columns[0].len();
                let pairs = (k * (k - 1) / 2) as f64;
                let mut value = 0.0;
                for p in 0..k {
                    for q in p + 1..k {
                        value += 1.0 - dot(columns[p], columns[q]);
                    }
                }
                let mut grad = Matrix::zeros(d, k);
                for p in 0..k {
                    for (q, col) in columns.iter().enumerate() {
                        if q != p {
                            for r in 0..d {
                                grad[(r, p)] -= col[r] / pairs;
                            }
                        }
                    }
                }
                (value / pairs, grad)
            }
        }
    }
}

fn group_columns<'a>(indices: &[usize], embeddings: &[&'a EmbeddingSet]) -> Vec<&'a [f64]> {
    indices.iter().zip(embeddings).map(|(&i, e)| e.row(i)).collect()
}

fn check_indices(indices: &[usize], embeddings: &[&EmbeddingSet]) -> Result<()> {
    if indices.len() != embeddings.len() {
        return Err(Error::DimensionMismatch {
            context: "group arity",
            expected: embeddings.len(),
            found: indices.len(),
        });
    }
    for (pos, (&i, e)) in indices.iter().zip(embeddings).enumerate() {
        if i >= e.len() {
            return Err(Error::invalid(format!(
                "group index {i} out of range for position {pos} (batch {})",
                e.len()
            )));
        }
    }
    Ok(())
}

/// Scatter `scale · ∂measure/∂V` back into per-modality gradients.
fn accumulate(grads: &mut [Matrix], indices: &[usize], column_grad: &Matrix, scale: f64) {
    for (pos, &i) in indices.iter().enumerate() {
        let row = grads[pos].row_mut(i);
        for (r, g) in row.iter_mut().enumerate() {
            *g += scale * column_grad[(r, pos)];
        }
    }
}

/// `Σ_g w_g · measure(group_g)`. Weights are constants. `embeddings[p]` is the
/// modality at tuple position `p`.
pub fn mover_loss(groups: &[MatchGroup], embeddings: &[&EmbeddingSet], measure: GroupMeasure) -> Result<LossGrad> {
    let mut out = LossGrad::zeros(embeddings);
    if groups.is_empty() {
        warn!("mover loss over an empty group list");
        return Ok(out);
    }
    for g in groups {
        check_indices(&g.indices, embeddings)?;
        let (value, grad) = measure.evaluate(&group_columns(&g.indices, embeddings));
        out.value += g.weight * value;
        accumulate(&mut out.grads, &g.indices, &grad, g.weight);
    }
    Ok(out)
}

/// Positive and negative groups for every anchor sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub positives: Vec<Vec<usize>>,
    /// `negatives[a]` holds the negative tuples for anchor `a`.
    pub negatives: Vec<Vec<Vec<usize>>>,
    pub tau: f64,
    pub form: ContrastiveForm,
}

impl ContrastiveBatch {
    /// Each negative copies the positive tuple and swaps the index at one
    /// uniformly chosen non-anchor position for a different, uniformly chosen
    /// sample of that modality.
    pub fn corrupt<R: Rng + ?Sized>(
        positives: Vec<Vec<usize>>,
        batch_sizes: &[usize],
        count: usize,
        tau: f64,
        form: ContrastiveForm,
        rng: &mut R,
    ) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::config("tau", format!("must be > 0, got {tau}")));
        }
        if count == 0 {
            return Err(Error::config("negatives", "must be >= 1"));
        }
        if batch_sizes.len() < 2 || batch_sizes[1..].iter().any(|&b| b < 2) {
            return Err(Error::invalid(
                "negatives need >= 2 samples in every non-anchor modality",
            ));
        }
        let negatives = positives
            .iter()
            .map(|pos| {
                (0..count)
                    .map(|_| {
                        let slot = rng.random_range(1..pos.len());
                        let mut neg = pos.clone();
                        let other = rng.random_range(0..batch_sizes[slot] - 1);
                        neg[slot] = if other >= pos[slot] { other + 1 } else { other };
                        neg
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            positives,
            negatives,
            tau,
            form,
        })
    }
}

/// Softmax of `−score/τ`.
pub fn softmax_weights(scores: &[f64], tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = scores.iter().map(|s| -s / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-anchor loss and its derivative with respect to each score
/// (`scores[0]` positive, the rest negatives).
pub fn anchor_loss(scores: &[f64], tau: f64, form: ContrastiveForm) -> (f64, Vec<f64>) {
    let pos = scores[0];
    let mut dscore = vec![0.0; scores.len()];
    match form {
        ContrastiveForm::InfoNce => {
            // −log softmax_0 over all scores
            let p = softmax_weights(scores, tau);
            let logits = scores.iter().map(|s| -s / tau);
            let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.map(|z| (z - max).exp()).sum::<f64>().ln();
            dscore[0] = (1.0 - p[0]) / tau;
            for j in 1..scores.len() {
                dscore[j] = -p[j] / tau;
            }
            (pos / tau + lse, dscore)
        }
        ContrastiveForm::PaperLiteral => {
            let q = softmax_weights(&scores[1..], tau);
            let negs = scores[1..].iter().map(|s| -s / tau);
            let max = negs.clone().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + negs.map(|z| (z - max).exp()).sum::<f64>().ln();
            dscore[0] = 1.0 / tau;
            for (j, qj) in q.iter().enumerate() {
                dscore[j + 1] = -qj / tau;
            }
            (pos / tau + lse, dscore)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOutput {
    pub loss: LossGrad,
    pub mean_pos: f64,
    pub mean_neg: f64,
}

/// Mean over anchors of the volume-contrastive loss.
pub fn contrastive_loss(
    batch: &ContrastiveBatch,
    embeddings: &[&EmbeddingSet],
    measure: GroupMeasure,
) -> Result<ContrastiveOutput> {
    if !(batch.tau > 0.0) {
        return Err(Error::config("tau", format!("must be > 0, got {}", batch.tau)));
    }
    let mut loss = LossGrad::zeros(embeddings);
    let anchors = batch.positives.len();
    if anchors == 0 {
        return Ok(ContrastiveOutput {
            loss,
            mean_pos: 0.0,
            mean_neg: 0.0,
        });
    }
    let scale = 1.0 / anchors as f64;
    let (mut pos_sum, mut neg_sum, mut neg_count) = (0.0, 0.0, 0usize);
    for (pos, negs) in batch.positives.iter().zip(&batch.negatives) {
        if negs.is_empty() {
            return Err(Error::config("negatives", "must be >= 1"));
        }
        let tuples: Vec<&Vec<usize>> = std::iter::once(pos).chain(negs).collect();
        let mut scores = Vec::with_capacity(tuples.len());
        let mut grads = Vec::with_capacity(tuples.len());
        for t in &tuples {
            check_indices(t, embeddings)?;
            let (s, g) = measure.evaluate(&group_columns(t, embeddings));
            scores.push(s);
            grads.push(g);
        }
        let (li, dscore) = anchor_loss(&scores, batch.tau, batch.form);
        loss.value += scale * li;
        for ((t, g), ds) in tuples.iter().zip(&grads).zip(&dscore) {
            accumulate(&mut loss.grads, t, g, scale * ds);
        }
        pos_sum += scores[0];
        neg_sum += scores[1..].iter().sum::<f64>();
        neg_count += scores.len() - 1;
    }
    Ok(ContrastiveOutput {
        loss,
        mean_pos: pos_sum / anchors as f64,
        mean_neg: neg_sum / neg_count as f64,
    })
}

pub fn total_loss(mover: f64, contrastive: f64, lambda: f64) -> f64 {
    mover + lambda * contrastive
}
