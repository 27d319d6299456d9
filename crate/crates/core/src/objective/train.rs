//! Full-batch gradient descent with transport plans re-solved every step.
//!
//! One step: encode every active modality, solve the anchored plans on the
//! fresh embeddings, build groups and contrastive tuples from them, then treat
//! all of that as constant while differentiating the loss with respect to the
//! encoder weights.

use rand::RngCore;

use super::{contrastive_loss, mover_loss, total_loss, ContrastiveBatch, LossBreakdown};
use crate::config::{Matching, Strategy, TrainConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{
    encode, encode_backward, seeded_rng, stream, warm_start_encoders, EmbeddingSet, LinearEncoder, SyntheticDataset,
};
use crate::transport::{anchored_plans, hard_groups, soft_sample_groups, top_k_groups, MatchGroup, TransportPlan};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// One encoder per data modality, trained or not.
    pub encoders: Vec<LinearEncoder>,
    /// Trained modalities in tuple order, anchor first.
    pub order: Vec<usize>,
    pub step: usize,
}

impl TrainState {
    /// Fresh encoders for every modality in `config`, all of them trained.
    /// Encoders for every modality of `dataset`, initialized per `config`.
    pub fn new(config: &TrainConfig, dataset: &SyntheticDataset) -> Result<Self> {
        let encoders = warm_start_encoders(dataset, config.d, config.warm_start, config.seed)?;
        let all: Vec<usize> = (0..config.k).collect();
        Self::with_encoders(encoders, &all, config.anchor - 1)
    }

    /// Train only `active` (0-based modality ids), anchored on `anchor`.
    pub fn with_encoders(encoders: Vec<LinearEncoder>, active: &[usize], anchor: usize) -> Result<Self> {
        if active.len() < 2 {
            return Err(Error::invalid("need at least two trained modalities"));
        }
        if let Some(&m) = active.iter().find(|&&m| m >= encoders.len()) {
            return Err(Error::invalid(format!("modality {m} has no encoder")));
        }
        if !active.contains(&anchor) {
            return Err(Error::invalid(format!("anchor modality {anchor} is not trained")));
        }
        let mut order = vec![anchor];
        let mut rest: Vec<usize> = active.iter().copied().filter(|&m| m != anchor).collect();
        rest.sort_unstable();
        rest.dedup();
        order.extend(rest);
        Ok(Self {
            encoders,
            order,
            step: 0,
        })
    }

    pub fn embed(&self, dataset: &SyntheticDataset) -> Result<Vec<EmbeddingSet>> {
        embed(&self.encoders, &self.order, dataset)
    }
}

fn embed(encoders: &[LinearEncoder], order: &[usize], dataset: &SyntheticDataset) -> Result<Vec<EmbeddingSet>> {
    order
        .iter()
        .map(|&m| {
            let input = dataset
                .inputs
                .get(m)
                .ok_or_else(|| Error::invalid(format!("dataset has no modality {m}")))?;
            encode(&encoders[m], input)
        })
        .collect()
}

/// Everything that is held constant while differentiating one step.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBatch {
    pub order: Vec<usize>,
    pub plans: Vec<TransportPlan>,
    pub groups: Vec<MatchGroup>,
    pub contrastive: ContrastiveBatch,
}

/// Solve plans and draw groups and negatives on the current embeddings.
///
/// All randomness comes from the config seed, so two calls on the same
/// weights give the same batch.
pub fn prepare_batch(state: &TrainState, dataset: &SyntheticDataset, config: &TrainConfig) -> Result<FrozenBatch> {
    let embeddings = state.embed(dataset)?;
    let b = embeddings[0].len();
    let plans = match config.matching {
        Matching::Transport => anchored_plans(&embeddings, &config.sinkhorn())?,
        Matching::Identity => state.order[1..]
            .iter()
            .map(|&m| TransportPlan::identity(b, state.order[0], m))
            .collect(),
    };

    let mut rng = seeded_rng(config.seed, stream::TRAINING);
    let groups = match config.strategy {
        Strategy::Hard => hard_groups(&plans)?,
        Strategy::TopK => top_k_groups(&plans, config.kprime.min(b))?,
        Strategy::Soft => soft_sample_groups(&plans, config.samples, rng.next_u64())?,
    };
    let positives = hard_groups(&plans)?.into_iter().map(|g| g.indices).collect();
    let sizes: Vec<usize> = embeddings.iter().map(EmbeddingSet::len).collect();
    let contrastive = ContrastiveBatch::corrupt(
        positives,
        &sizes,
        config.negatives,
        config.tau,
        config.contrastive_form,
        &mut rng,
    )?;
    Ok(FrozenBatch {
        order: state.order.clone(),
        plans,
        groups,
        contrastive,
    })
}

/// Loss at `encoders` for a frozen batch, and its gradient with respect to
/// the weight of each modality in `frozen.order`.
pub fn evaluate_frozen(
    encoders: &[LinearEncoder],
    dataset: &SyntheticDataset,
    frozen: &FrozenBatch,
    config: &TrainConfig,
) -> Result<(LossBreakdown, Vec<Matrix>)> {
    let embeddings = embed(encoders, &frozen.order, dataset)?;
    let refs: Vec<&EmbeddingSet> = embeddings.iter().collect();
    let mover = mover_loss(&frozen.groups, &refs, config.measure)?;
    let contrastive = contrastive_loss(&frozen.contrastive, &refs, config.measure)?;

    let breakdown = LossBreakdown {
        mover_loss: mover.value,
        contrastive_loss: contrastive.loss.value,
        total: total_loss(mover.value, contrastive.loss.value, config.lambda),
        group_count: frozen.groups.len(),
        mean_pos_volume: contrastive.mean_pos,
        mean_neg_volume: contrastive.mean_neg,
    };

    let grads = frozen
        .order
        .iter()
        .enumerate()
        .map(|(pos, &m)| {
            let mut upstream = mover.grads[pos].clone();
            upstream.add_scaled(config.lambda, &contrastive.loss.grads[pos]);
            encode_backward(&encoders[m], &dataset.inputs[m], &upstream)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((breakdown, grads))
}

fn check_finite(step: usize, b: &LossBreakdown) -> Result<()> {
    for (component, v) in [
        ("mover_loss", b.mover_loss),
        ("contrastive_loss", b.contrastive_loss),
        ("total", b.total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { step, component });
        }
    }
    Ok(())
}

/// One SGD step. Returns the loss measured before the update.
pub fn train_step(state: &mut TrainState, dataset: &SyntheticDataset, config: &TrainConfig) -> Result<LossBreakdown> {
    let frozen = prepare_batch(state, dataset, config)?;
    let (breakdown, grads) = evaluate_frozen(&state.encoders, dataset, &frozen, config)?;
    check_finite(state.step, &breakdown)?;
    for (&m, g) in frozen.order.iter().zip(&grads) {
        if !g.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: state.step,
                component: "gradient",
            });
        }
        state.encoders[m].weight.add_scaled(-config.lr, g);
    }
    state.step += 1;
    Ok(breakdown)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub state: TrainState,
    pub history: Vec<LossBreakdown>,
}

/// `config.steps` steps from `state`.
pub fn train(mut state: TrainState, dataset: &SyntheticDataset, config: &TrainConfig) -> Result<TrainRun> {
    let mut history = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        history.push(train_step(&mut state, dataset, config)?);
    }
    Ok(TrainRun { state, history })
}
