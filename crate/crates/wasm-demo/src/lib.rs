//! Browser bindings for three interactive views: the volume of a group of
//! unit vectors in 3-D, a Sinkhorn plan between two synthetic modalities,
//! and the loss curve of a short training run.
//!
//! Every exported function has a plain-Rust twin returning `Result<_, String>`
//! so the logic is testable off the browser.

use wasm_bindgen::prelude::*;

use mover::config::{GroupMeasure, Matching, TrainConfig};
use mover::eval::{embed_all, evaluate_directions, mean_recall, GroundTruth};
use mover::geometry::{volume, VectorGroup};
use mover::model::{generate_synthetic, warm_start_encoders};
use mover::objective::{train, TrainState};
use mover::transport::{cost_matrix, sinkhorn};

/// Unit vector from azimuth and elevation, radians.
fn spherical(azimuth: f64, elevation: f64) -> Vec<f64> {
    vec![
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    ]
}

#[wasm_bindgen]
#[derive(Debug)]
pub struct VolumeView {
    volume: f64,
    degenerate: bool,
    vectors: Vec<f64>,
    gradient: Vec<f64>,
}

#[wasm_bindgen]
impl VolumeView {
    #[wasm_bindgen(getter)]
    pub fn volume(&self) -> f64 {
        self.volume
    }

    #[wasm_bindgen(getter)]
    pub fn degenerate(&self) -> bool {
        self.degenerate
    }

    /// Vectors as consecutive xyz triples.
    #[wasm_bindgen(getter)]
    pub fn vectors(&self) -> Vec<f64> {
        self.vectors.clone()
    }

    /// `∂Vol/∂v` per vector, consecutive xyz triples.
    #[wasm_bindgen(getter)]
    pub fn gradient(&self) -> Vec<f64> {
        self.gradient.clone()
    }
}

pub fn group_volume_impl(angles: &[f64]) -> Result<VolumeView, String> {
    if angles.len() < 4 || !angles.len().is_multiple_of(2) {
        return Err(format!(
            "expected (azimuth, elevation) pairs for k >= 2 vectors, got {} numbers",
            angles.len()
        ));
    }
    let columns: Vec<Vec<f64>> = angles.chunks(2).map(|p| spherical(p[0], p[1])).collect();
    let group = VectorGroup::unit(columns.clone()).map_err(|e| e.to_string())?;
    let v = volume(&group);
    let k = columns.len();
    let gradient = (0..k)
        .flat_map(|c| (0..3).map(move |r| (r, c)))
        .map(|(r, c)| v.gradient[(r, c)])
        .collect();
    Ok(VolumeView {
        volume: v.volume,
        degenerate: v.degenerate,
        vectors: columns.concat(),
        gradient,
    })
}

/// Volume spanned by unit vectors given as flat `(azimuth, elevation)` pairs.
#[wasm_bindgen]
pub fn group_volume(angles: &[f64]) -> Result<VolumeView, JsError> {
    group_volume_impl(angles).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[derive(Debug)]
pub struct PlanView {
    size: usize,
    entries: Vec<f64>,
    labels: Vec<u32>,
    iterations: usize,
    marginal_error: f64,
}

#[wasm_bindgen]
impl PlanView {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Row-major `size × size`, rows and columns sorted by class.
    #[wasm_bindgen(getter)]
    pub fn entries(&self) -> Vec<f64> {
        self.entries.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn labels(&self) -> Vec<u32> {
        self.labels.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    #[wasm_bindgen(getter)]
    pub fn marginal_error(&self) -> f64 {
        self.marginal_error
    }
}

pub fn transport_plan_impl(
    batch: usize,
    classes: usize,
    sigma: f64,
    epsilon: f64,
    seed: u64,
) -> Result<PlanView, String> {
    let config = TrainConfig {
        k: 2,
        batch,
        classes,
        sigma,
        epsilon,
        seed,
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| e.to_string())?;
    let run = || -> mover::Result<PlanView> {
        let dataset = generate_synthetic(config.synthetic())?;
        let encoders = warm_start_encoders(&dataset, config.d, config.warm_start, seed)?;
        let mut order: Vec<usize> = (0..batch).collect();
        order.sort_by_key(|&i| (dataset.labels[i], i));
        let emb = embed_all(&encoders, &dataset, &[0, 1])?;
        let plan = sinkhorn(&cost_matrix(&emb[0], &emb[1])?, &config.sinkhorn())?;
        let entries = order
            .iter()
            .flat_map(|&i| order.iter().map(move |&j| (i, j)))
            .map(|(i, j)| plan.entries[(i, j)])
            .collect();
        Ok(PlanView {
            size: batch,
            entries,
            labels: order.iter().map(|&i| dataset.labels[i] as u32).collect(),
            iterations: plan.iterations,
            marginal_error: plan.marginal_error,
        })
    };
    run().map_err(|e| e.to_string())
}

/// Sinkhorn plan between the first two modalities of a synthetic batch.
#[wasm_bindgen]
pub fn transport_plan(batch: usize, classes: usize, sigma: f64, epsilon: f64, seed: u64) -> Result<PlanView, JsError> {
    transport_plan_impl(batch, classes, sigma, epsilon, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[derive(Debug)]
pub struct TrainView {
    mover: Vec<f64>,
    contrastive: Vec<f64>,
    recall: f64,
}

#[wasm_bindgen]
impl TrainView {
    #[wasm_bindgen(getter)]
    pub fn mover(&self) -> Vec<f64> {
        self.mover.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn contrastive(&self) -> Vec<f64> {
        self.contrastive.clone()
    }

    /// Mean class-level Recall@1 over all directions after training.
    #[wasm_bindgen(getter)]
    pub fn recall(&self) -> f64 {
        self.recall
    }
}

pub fn train_curve_impl(
    steps: usize,
    sigma: f64,
    use_transport: bool,
    use_volume: bool,
    seed: u64,
) -> Result<TrainView, String> {
    let config = TrainConfig {
        batch: 32,
        d: 16,
        d_in: 8,
        sigma,
        steps,
        seed,
        matching: if use_transport {
            Matching::Transport
        } else {
            Matching::Identity
        },
        measure: if use_volume {
            GroupMeasure::Volume
        } else {
            GroupMeasure::PairwiseCosine
        },
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| e.to_string())?;
    let run = || -> mover::Result<TrainView> {
        let dataset = generate_synthetic(config.synthetic())?;
        let run = train(TrainState::new(&config, &dataset)?, &dataset, &config)?;
        let emb = embed_all(&run.state.encoders, &dataset, &[0, 1, 2])?;
        let results = evaluate_directions(&emb, &GroundTruth::for_dataset(config.retrieval, &dataset), &[1])?;
        Ok(TrainView {
            mover: run.history.iter().map(|b| b.mover_loss).collect(),
            contrastive: run.history.iter().map(|b| b.contrastive_loss).collect(),
            recall: mean_recall(&results, 1),
        })
    };
    run().map_err(|e| e.to_string())
}

/// Loss curves of a short run on a 32-sample, three-modality batch.
#[wasm_bindgen]
pub fn train_curve(
    steps: usize,
    sigma: f64,
    use_transport: bool,
    use_volume: bool,
    seed: u64,
) -> Result<TrainView, JsError> {
    train_curve_impl(steps, sigma, use_transport, use_volume, seed).map_err(|e| JsError::new(&e))
}
