//! Finite-difference checks of the analytic gradients, shared by the CLI and
//! the test suites.

use crate::config::TrainConfig;
use crate::error::Result;
use crate::geometry::{grad_volume, relative_error, volume_finite_diff, VectorGroup};
use crate::linalg::{norm, Matrix};
use crate::model::{generate_synthetic, seeded_rng};
use crate::objective::{evaluate_frozen, prepare_batch, TrainState};

pub const FD_STEP: f64 = 1e-5;

/// Largest relative error between the analytic volume gradient and central
/// differences over `per_shape` random unit groups for every
/// `k ∈ {2,3,4}`, `d ∈ {4,8,16}`.
pub fn geometry_max_error(seed: u64, per_shape: usize) -> Result<f64> {
    let mut rng = seeded_rng(seed, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..per_shape {
        for k in [2, 3, 4] {
            for d in [4, 8, 16] {
                let m = Matrix::gaussian(k, d, 1.0, &mut rng);
                let cols = (0..k)
                    .map(|i| {
                        let n = norm(m.row(i));
                        m.row(i).iter().map(|x| x / n).collect()
                    })
                    .collect();
                let group = VectorGroup::unit(cols)?;
                let fd = volume_finite_diff(&group, FD_STEP)?;
                worst = worst.max(relative_error(&grad_volume(&group), &fd));
            }
        }
    }
    Ok(worst)
}

/// Largest relative error between the total-loss weight gradient and central
/// differences, for a frozen batch drawn under `config`.
pub fn objective_max_error(config: &TrainConfig) -> Result<f64> {
    let dataset = generate_synthetic(config.synthetic())?;
    let state = TrainState::new(config, &dataset)?;
    let frozen = prepare_batch(&state, &dataset, config)?;
    let (_, grads) = evaluate_frozen(&state.encoders, &dataset, &frozen, config)?;
    let mut worst: f64 = 0.0;
    for (pos, &m) in frozen.order.iter().enumerate() {
        let w = &state.encoders[m].weight;
        let mut fd = Matrix::zeros(w.rows(), w.cols());
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                let mut enc = state.encoders.clone();
                enc[m].weight[(r, c)] += FD_STEP;
                let plus = evaluate_frozen(&enc, &dataset, &frozen, config)?.0.total;
                enc[m].weight[(r, c)] -= 2.0 * FD_STEP;
                let minus = evaluate_frozen(&enc, &dataset, &frozen, config)?.0.total;
                fd[(r, c)] = (plus - minus) / (2.0 * FD_STEP);
            }
        }
        worst = worst.max(relative_error(&grads[pos], &fd));
    }
    Ok(worst)
}

/// A small problem for [`objective_max_error`] derived from `base`.
pub fn small_problem(base: &TrainConfig) -> TrainConfig {
    TrainConfig {
        batch: 8.max(base.classes),
        d: 6,
        d_in: 5,
        negatives: 3,
        kprime: base.kprime.min(3),
        ..base.clone()
    }
}
