//! Soft matching between modalities with entropic optimal transport, and the
//! candidate groups built from the resulting plans.

mod groups;
mod sinkhorn;

pub use groups::{
    compose_group_weights, composed_weight, hard_groups, sample_tuples, soft_sample_groups, top_k_groups, GroupWeights,
    MatchGroup, DEFAULT_PRUNE,
};
pub use sinkhorn::{sinkhorn, SinkhornParams, TransportPlan};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::EmbeddingSet;

/// Squared Euclidean distances between two embedding sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub entries: Matrix,
    pub source_modality: usize,
    pub target_modality: usize,
}

impl CostMatrix {
    /// Wrap raw entries. Entries must be finite; used for tests and ad-hoc solves.
    pub fn from_matrix(entries: Matrix) -> Result<Self> {
        if entries.rows() == 0 || entries.cols() == 0 {
            return Err(Error::invalid("cost matrix is empty"));
        }
        if !entries.is_finite() {
            return Err(Error::invalid("cost matrix has non-finite entries"));
        }
        Ok(Self {
            entries,
            source_modality: 0,
            target_modality: 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.entries.rows()
    }

    pub fn cols(&self) -> usize {
        self.entries.cols()
    }
}

/// `C[i][j] = ‖s_i − t_j‖² = 2 − 2⟨s_i, t_j⟩` for unit rows, clamped to `[0, 4]`.
pub fn cost_matrix(source: &EmbeddingSet, target: &EmbeddingSet) -> Result<CostMatrix> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            context: "cost matrix embedding dimension",
            expected: source.dim(),
            found: target.dim(),
        });
    }
    let (s, t) = (source.vectors(), target.vectors());
    let entries = Matrix::from_fn(s.rows(), t.rows(), |i, j| {
        (2.0 - 2.0 * dot(s.row(i), t.row(j))).clamp(0.0, 4.0)
    });
    Ok(CostMatrix {
        entries,
        source_modality: source.modality(),
        target_modality: target.modality(),
    })
}

/// Plans from the anchor modality (index 0) to every other modality, solved in
/// modality order.
pub fn anchored_plans(embeddings: &[EmbeddingSet], params: &SinkhornParams) -> Result<Vec<TransportPlan>> {
    if embeddings.len() < 2 {
        return Err(Error::invalid("need at least two modalities to match"));
    }
    embeddings[1..]
        .iter()
        .map(|target| sinkhorn(&cost_matrix(&embeddings[0], target)?, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[Vec<f64>], modality: usize) -> EmbeddingSet {
        EmbeddingSet::new(Matrix::from_rows(rows), modality).unwrap()
    }

    #[test]
    fn cost_examples() {
        let s = 0.5f64.sqrt();
        let a = set(&[vec![1.0, 0.0], vec![s, s], vec![0.0, -1.0]], 0);
        let c = cost_matrix(&a, &a).unwrap();
        for i in 0..3 {
            assert_eq!(c.entries[(i, i)], 0.0);
        }
        // antipodal and orthogonal
        let b = set(&[vec![-1.0, 0.0], vec![0.0, 1.0]], 1);
        let c = cost_matrix(&a, &b).unwrap();
        assert!((c.entries[(0, 0)] - 4.0).abs() < 1e-15);
        assert!((c.entries[(0, 1)] - 2.0).abs() < 1e-15);
        assert!((c.entries[(2, 1)] - 4.0).abs() < 1e-15);
        assert_eq!((c.source_modality, c.target_modality), (0, 1));
        assert!(c.entries.as_slice().iter().all(|x| (0.0..=4.0).contains(x)));
    }

    #[test]
    fn cost_dimension_mismatch() {
        let a = set(&[vec![1.0, 0.0]], 0);
        let b = set(&[vec![1.0, 0.0, 0.0]], 1);
        assert!(matches!(cost_matrix(&a, &b), Err(Error::DimensionMismatch { .. })));
    }
}
