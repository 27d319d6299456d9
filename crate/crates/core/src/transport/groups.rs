//! k-tuple weights from anchored pairwise plans, and the three candidate-group
//! strategies (hard argmax, top-k′, soft sampling).
//!
//! Plans are always `π^(1,m)` for `m = 2..k`: modality 1 is the anchor. The
//! weight of a tuple `(i_1, …, i_k)` is `B^(k−2) · Π_m π^(1,m)[i_1, i_m]`,
//! i.e. the anchor marginal `1/B` times the product of the conditionals
//! `B·π^(1,m)[i_1, ·]`. With exact marginals the weights over all tuples sum to 1.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TransportPlan;
use crate::error::{Error, Result};

/// Composed weights at or below this are not materialized.
pub const DEFAULT_PRUNE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchGroup {
    /// One sample index per modality, anchor first.
    pub indices: Vec<usize>,
    pub weight: f64,
}

/// Sparse map from k-tuples to composed weights, ordered lexicographically.
pub type GroupWeights = BTreeMap<Vec<usize>, f64>;

fn check_plans(plans: &[TransportPlan]) -> Result<usize> {
    let first = plans
        .first()
        .ok_or_else(|| Error::invalid("no transport plans given"))?;
    let b = first.rows();
    for p in &plans[1..] {
        if p.rows() != b {
            return Err(Error::DimensionMismatch {
                context: "anchor batch size across plans",
                expected: b,
                found: p.rows(),
            });
        }
        if p.source_modality != first.source_modality {
            return Err(Error::invalid(format!(
                "plans anchored on different modalities ({} and {})",
                first.source_modality, p.source_modality
            )));
        }
    }
    Ok(b)
}

/// Weight of one tuple; `indices[0]` is the anchor index.
pub fn composed_weight(plans: &[TransportPlan], indices: &[usize]) -> f64 {
    debug_assert_eq!(indices.len(), plans.len() + 1);
    let b = plans[0].rows() as f64;
    let anchor = indices[0];
    plans
        .iter()
        .zip(&indices[1..])
        .fold(b.powi(plans.len() as i32 - 1), |w, (p, &j)| w * p.entries[(anchor, j)])
}

/// All tuples whose composed weight exceeds `prune`.
pub fn compose_group_weights(plans: &[TransportPlan], prune: f64) -> Result<GroupWeights> {
    let b = check_plans(plans)?;
    let scale = (b as f64).powi(plans.len() as i32 - 1);
    let mut out = GroupWeights::new();
    let mut tuple = vec![0; plans.len() + 1];
    for anchor in 0..b {
        tuple[0] = anchor;
        extend(plans, anchor, 0, scale, prune, &mut tuple, &mut out);
    }
    Ok(out)
}

fn extend(
    plans: &[TransportPlan],
    anchor: usize,
    depth: usize,
    partial: f64,
    prune: f64,
    tuple: &mut Vec<usize>,
    out: &mut GroupWeights,
) {
    if depth == plans.len() {
        if partial > prune {
            out.insert(tuple.clone(), partial);
        }
        return;
    }
    for (j, &p) in plans[depth].row(anchor).iter().enumerate() {
        // remaining factors are each at most 1
        let w = partial * p;
        if w <= prune {
            continue;
        }
        tuple[depth + 1] = j;
        extend(plans, anchor, depth + 1, w, prune, tuple, out);
    }
}

/// Indices of the `n` largest entries, largest first, ties to the lower index.
fn top_indices(row: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Per anchor, the tuple of row-wise argmax matches.
pub fn hard_groups(plans: &[TransportPlan]) -> Result<Vec<MatchGroup>> {
    top_k_groups(plans, 1)
}

/// Per anchor, the Cartesian product of each row's top-`kprime` matches,
/// enumerated lexicographically in rank order.
pub fn top_k_groups(plans: &[TransportPlan], kprime: usize) -> Result<Vec<MatchGroup>> {
    let b = check_plans(plans)?;
    if let Some(p) = plans.iter().find(|p| kprime == 0 || kprime > p.cols()) {
        return Err(Error::invalid(format!(
            "top-k' requires 1 <= k' <= {}, got {kprime}",
            p.cols()
        )));
    }
    let mut groups = Vec::new();
    for anchor in 0..b {
        let choices: Vec<Vec<usize>> = plans.iter().map(|p| top_indices(p.row(anchor), kprime)).collect();
        let mut counter = vec![0usize; plans.len()];
        'tuples: loop {
            let mut indices = Vec::with_capacity(plans.len() + 1);
            indices.push(anchor);
            indices.extend(counter.iter().zip(&choices).map(|(&c, ch)| ch[c]));
            let weight = composed_weight(plans, &indices);
            if weight > 0.0 {
                groups.push(MatchGroup { indices, weight });
            }
            // odometer, last modality fastest
            for pos in (0..counter.len()).rev() {
                counter[pos] += 1;
                if counter[pos] < kprime {
                    continue 'tuples;
                }
                counter[pos] = 0;
            }
            break;
        }
    }
    Ok(groups)
}

/// Raw draws for one anchor: each non-anchor index sampled independently from
/// its normalized plan row.
pub fn sample_tuples<R: Rng + ?Sized>(
    plans: &[TransportPlan],
    anchor: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let dists = plans
        .iter()
        .map(|p| {
            WeightedIndex::new(p.row(anchor)).map_err(|e| {
                Error::invalid(format!(
                    "plan row for anchor {anchor} (modality {}) cannot be sampled: {e}",
                    p.target_modality
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..n)
        .map(|_| {
            let mut t = Vec::with_capacity(plans.len() + 1);
            t.push(anchor);
            t.extend(dists.iter().map(|d| d.sample(rng)));
            t
        })
        .collect())
}

/// Per anchor, `samples_per_anchor` sampled tuples. Repeated tuples are kept
/// once, in first-draw order, with their composed weight (not a count).
pub fn soft_sample_groups(plans: &[TransportPlan], samples_per_anchor: usize, seed: u64) -> Result<Vec<MatchGroup>> {
    let b = check_plans(plans)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::new();
    for anchor in 0..b {
        let mut seen = BTreeSet::new();
        for indices in sample_tuples(plans, anchor, samples_per_anchor, &mut rng)? {
            if seen.insert(indices.clone()) {
                let weight = composed_weight(plans, &indices);
                if weight > 0.0 {
                    groups.push(MatchGroup { indices, weight });
                }
            }
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::transport::{sinkhorn, CostMatrix, SinkhornParams};

    fn plan(entries: Matrix, target: usize) -> TransportPlan {
        TransportPlan::from_entries(entries, 0, target)
    }

    fn random_plans(b: usize, k: usize, seed: u64) -> Vec<TransportPlan> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (1..k)
            .map(|m| {
                let cost = Matrix::from_fn(b, b, |_, _| rng.random_range(0.0..4.0));
                let mut p = sinkhorn(&CostMatrix::from_matrix(cost).unwrap(), &SinkhornParams::new(0.3)).unwrap();
                p.target_modality = m;
                p
            })
            .collect()
    }

    #[test]
    fn pairwise_composition_is_identity() {
        let plans = random_plans(5, 2, 1);
        let w = compose_group_weights(&plans, 0.0).unwrap();
        assert_eq!(w.len(), 25);
        for ((t, &v), i) in w.iter().zip(0..) {
            assert_eq!(t, &vec![i / 5, i % 5]);
            assert_eq!(v, plans[0].entries[(i / 5, i % 5)]);
        }
    }

    #[test]
    fn diagonal_plans_compose_to_diagonal() {
        let b = 4;
        let plans = vec![TransportPlan::identity(b, 0, 1), TransportPlan::identity(b, 0, 2)];
        let w = compose_group_weights(&plans, DEFAULT_PRUNE).unwrap();
        assert_eq!(w.len(), b);
        for i in 0..b {
            assert!((w[&vec![i, i, i]] - 0.25).abs() < 1e-15);
        }
        let total: f64 = w.values().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn composed_mass_at_most_one() {
        for (k, seed) in [(3, 2), (4, 3)] {
            let plans = random_plans(6, k, seed);
            let total: f64 = compose_group_weights(&plans, DEFAULT_PRUNE).unwrap().values().sum();
            assert!(total <= 1.0 + 1e-6, "{total}");
            assert!(total > 0.99);
        }
    }

    #[test]
    fn mismatched_anchor_sizes() {
        let plans = vec![TransportPlan::identity(4, 0, 1), TransportPlan::identity(3, 0, 2)];
        assert!(matches!(
            compose_group_weights(&plans, 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
        let plans = vec![TransportPlan::identity(4, 0, 1), TransportPlan::identity(4, 1, 2)];
        assert!(compose_group_weights(&plans, 0.0).is_err());
    }

    #[test]
    fn hard_groups_on_diagonal() {
        let plans = vec![TransportPlan::identity(5, 0, 1), TransportPlan::identity(5, 0, 2)];
        let g = hard_groups(&plans).unwrap();
        let idx: Vec<_> = g.iter().map(|g| g.indices.clone()).collect();
        assert_eq!(idx, (0..5).map(|i| vec![i, i, i]).collect::<Vec<_>>());
    }

    #[test]
    fn hard_ties_pick_lowest_index() {
        let mut e = Matrix::from_fn(6, 6, |_, _| 0.01);
        e[(0, 2)] = 0.3;
        e[(0, 5)] = 0.3;
        let g = hard_groups(&[plan(e, 1)]).unwrap();
        assert_eq!(g[0].indices, vec![0, 2]);
        assert_eq!(g[0].weight, 0.3);
    }

    #[test]
    fn hard_matches_brute_force_argmax() {
        let plans = random_plans(4, 3, 17);
        let groups = hard_groups(&plans).unwrap();
        for (anchor, g) in groups.iter().enumerate() {
            // exhaustive scan over all 16 tuples for this anchor
            let mut best = (f64::NEG_INFINITY, vec![]);
            for j in 0..4 {
                for l in 0..4 {
                    let w = plans[0].entries[(anchor, j)] * plans[1].entries[(anchor, l)];
                    if w > best.0 {
                        best = (w, vec![anchor, j, l]);
                    }
                }
            }
            assert_eq!(g.indices, best.1);
            assert!((g.weight - 4.0 * best.0).abs() < 1e-15);
        }
    }

    #[test]
    fn top_k_counts_and_nesting() {
        let plans = random_plans(4, 3, 21);
        assert_eq!(top_k_groups(&plans, 2).unwrap().len(), 16);
        assert_eq!(top_k_groups(&plans, 4).unwrap().len(), 4 * 16);
        assert_eq!(top_k_groups(&plans, 1).unwrap(), hard_groups(&plans).unwrap());
        assert!(top_k_groups(&plans, 5).is_err());
        assert!(top_k_groups(&plans, 0).is_err());

        let hard: BTreeSet<_> = hard_groups(&plans).unwrap().into_iter().map(|g| g.indices).collect();
        for kp in 1..=4 {
            let top: BTreeSet<_> = top_k_groups(&plans, kp)
                .unwrap()
                .into_iter()
                .map(|g| g.indices)
                .collect();
            assert!(hard.is_subset(&top));
        }
    }

    #[test]
    fn soft_sampling_point_mass_and_determinism() {
        let plans = vec![TransportPlan::identity(4, 0, 1), TransportPlan::identity(4, 0, 2)];
        let g = soft_sample_groups(&plans, 20, 3).unwrap();
        assert_eq!(g, hard_groups(&plans).unwrap());

        let plans = random_plans(6, 3, 4);
        assert_eq!(
            soft_sample_groups(&plans, 10, 99).unwrap(),
            soft_sample_groups(&plans, 10, 99).unwrap()
        );
    }

    #[test]
    fn soft_sampling_zero_row() {
        let mut e = Matrix::from_fn(3, 3, |_, _| 1.0 / 9.0);
        for j in 0..3 {
            e[(1, j)] = 0.0;
        }
        let err = soft_sample_groups(&[plan(e, 1)], 4, 0).unwrap_err();
        assert!(err.to_string().contains("anchor 1"), "{err}");
    }

    #[test]
    fn soft_sampling_frequencies_on_uniform_rows() {
        let b = 4;
        let uniform = Matrix::from_fn(b, b, |_, _| 1.0 / 16.0);
        let plans = vec![plan(uniform.clone(), 1), plan(uniform, 2)];
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws = sample_tuples(&plans, 0, n, &mut rng).unwrap();
        let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
        for m in 1..3 {
            for j in 0..b {
                let freq = draws.iter().filter(|t| t[m] == j).count() as f64 / n as f64;
                assert!((freq - 0.25).abs() < 3.0 * sigma, "m={m} j={j} freq={freq}");
            }
        }
    }
}
