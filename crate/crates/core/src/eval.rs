//! Cross-modal retrieval metrics and the two experiment harnesses built on
//! them: the component ablation and held-out-modality generalization.

use std::collections::BTreeMap;
use std::fmt;

use crate::config::{GroupMeasure, Matching, Retrieval, TrainConfig};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::{encode, generate_synthetic, warm_start_encoders, EmbeddingSet, LinearEncoder, SyntheticDataset};
use crate::objective::{train, TrainState};

/// Which gallery items count as a correct hit for each query.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    /// Query `q` matches exactly gallery item `map[q]`.
    Index(Vec<usize>),
    /// Query `q` matches every gallery item with the same label.
    Labels { query: Vec<usize>, gallery: Vec<usize> },
}

impl GroundTruth {
    /// Query `i` matches gallery `i`.
    pub fn identity(n: usize) -> Self {
        GroundTruth::Index((0..n).collect())
    }

    pub fn same_label(labels: &[usize]) -> Self {
        GroundTruth::Labels {
            query: labels.to_vec(),
            gallery: labels.to_vec(),
        }
    }

    /// Ground truth of `kind` for a dataset retrieved against itself across
    /// modalities.
    pub fn for_dataset(kind: Retrieval, dataset: &SyntheticDataset) -> Self {
        match kind {
            Retrieval::Instance => Self::identity(dataset.len()),
            Retrieval::Class => Self::same_label(&dataset.labels),
        }
    }

    /// Expected Recall@1 of a uniformly random ranking over `gallery` items.
    pub fn chance(&self, gallery: usize) -> f64 {
        let n = self.query_count();
        if n == 0 || gallery == 0 {
            return 0.0;
        }
        let hits: usize = (0..n)
            .map(|q| (0..gallery).filter(|&g| self.is_hit(q, g)).count())
            .sum();
        hits as f64 / (n * gallery) as f64
    }

    fn query_count(&self) -> usize {
        match self {
            GroundTruth::Index(m) => m.len(),
            GroundTruth::Labels { query, .. } => query.len(),
        }
    }

    fn is_hit(&self, q: usize, g: usize) -> bool {
        match self {
            GroundTruth::Index(m) => m[q] == g,
            GroundTruth::Labels { query, gallery } => query[q] == gallery[g],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_modality: usize,
    pub target_modality: usize,
    /// K → fraction of queries with a hit in the top K.
    pub recall_at: BTreeMap<usize, f64>,
    pub query_count: usize,
}

impl RetrievalResult {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }

    /// `"1->3"` style label, 1-based.
    pub fn direction(&self) -> String {
        format!("{}->{}", self.query_modality + 1, self.target_modality + 1)
    }
}

/// Recall@K by cosine similarity. Gallery ties rank the lower index first.
pub fn recall_at_k(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    truth: &GroundTruth,
    ks: &[usize],
) -> Result<RetrievalResult> {
    if truth.query_count() != queries.len() {
        return Err(Error::DimensionMismatch {
            context: "ground truth entries vs queries",
            expected: queries.len(),
            found: truth.query_count(),
        });
    }
    if let GroundTruth::Labels { gallery: gl, .. } = truth {
        if gl.len() != gallery.len() {
            return Err(Error::DimensionMismatch {
                context: "gallery labels vs gallery",
                expected: gallery.len(),
                found: gl.len(),
            });
        }
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > gallery.len()) {
        return Err(Error::invalid(format!("K = {k} outside [1, {}]", gallery.len())));
    }
    if queries.dim() != gallery.dim() {
        return Err(Error::DimensionMismatch {
            context: "query vs gallery dimension",
            expected: queries.dim(),
            found: gallery.dim(),
        });
    }

    // rank of the best-ranked hit per query
    let first_hit: Vec<usize> = (0..queries.len())
        .map(|q| {
            let sims: Vec<f64> = (0..gallery.len())
                .map(|g| dot(queries.row(q), gallery.row(g)))
                .collect();
            let mut order: Vec<usize> = (0..gallery.len()).collect();
            order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
            order.iter().position(|&g| truth.is_hit(q, g)).unwrap_or(usize::MAX)
        })
        .collect();

    let n = queries.len().max(1) as f64;
    let recall_at = ks
        .iter()
        .map(|&k| (k, first_hit.iter().filter(|&&r| r < k).count() as f64 / n))
        .collect();
    Ok(RetrievalResult {
        query_modality: queries.modality(),
        target_modality: gallery.modality(),
        recall_at,
        query_count: queries.len(),
    })
}

/// Embed every modality in `modalities` with its encoder.
pub fn embed_all(
    encoders: &[LinearEncoder],
    dataset: &SyntheticDataset,
    modalities: &[usize],
) -> Result<Vec<EmbeddingSet>> {
    modalities
        .iter()
        .map(|&m| encode(&encoders[m], &dataset.inputs[m]))
        .collect()
}

/// Retrieval in every ordered pair of distinct modalities, in `(query, target)`
/// lexicographic order.
pub fn evaluate_directions(
    embeddings: &[EmbeddingSet],
    truth: &GroundTruth,
    ks: &[usize],
) -> Result<Vec<RetrievalResult>> {
    let mut out = Vec::new();
    for q in embeddings {
        for g in embeddings {
            if q.modality() != g.modality() {
                out.push(recall_at_k(q, g, truth, ks)?);
            }
        }
    }
    Ok(out)
}

pub fn mean_recall(results: &[RetrievalResult], k: usize) -> f64 {
    results.iter().filter_map(|r| r.recall(k)).sum::<f64>() / results.len().max(1) as f64
}

/// The four training variants compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    /// Transport weights and volume measure.
    Full,
    /// Identity matching with uniform weights, volume measure.
    NoOt,
    /// Transport weights, pairwise cosine distance instead of volume.
    NoGave,
    Neither,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoOt, Variant::NoGave, Variant::Neither];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoOt => "no_ot",
            Variant::NoGave => "no_gave",
            Variant::Neither => "neither",
        }
    }

    pub fn configure(self, base: &TrainConfig) -> TrainConfig {
        let (matching, measure) = match self {
            Variant::Full => (Matching::Transport, GroupMeasure::Volume),
            Variant::NoOt => (Matching::Identity, GroupMeasure::Volume),
            Variant::NoGave => (Matching::Transport, GroupMeasure::PairwiseCosine),
            Variant::Neither => (Matching::Identity, GroupMeasure::PairwiseCosine),
        };
        TrainConfig {
            matching,
            measure,
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantRun {
    pub variant: Variant,
    pub seed: u64,
    pub results: Vec<RetrievalResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    /// Ordered by variant, then seed.
    pub runs: Vec<VariantRun>,
}

impl AblationReport {
    /// Recall@1 averaged over seeds and directions.
    pub fn mean_recall(&self, variant: Variant) -> f64 {
        let all: Vec<RetrievalResult> = self
            .runs
            .iter()
            .filter(|r| r.variant == variant)
            .flat_map(|r| r.results.iter().cloned())
            .collect();
        mean_recall(&all, 1)
    }

    pub fn means(&self) -> [f64; 4] {
        Variant::ALL.map(|v| self.mean_recall(v))
    }

    /// `full ≥ no_ot`, `full ≥ no_gave`, and both single removals `≥ neither`.
    pub fn ordering_satisfied(&self) -> bool {
        let [full, no_ot, no_gave, neither] = self.means();
        full >= no_ot && full >= no_gave && no_ot >= neither && no_gave >= neither
    }

    /// Full strictly best, neither strictly worst, and `full − neither ≥ margin`.
    pub fn endpoints_separated(&self, margin: f64) -> bool {
        let [full, no_ot, no_gave, neither] = self.means();
        full > no_ot && full > no_gave && neither < no_ot && neither < no_gave && full - neither >= margin
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("variant   mean R@1\n");
        for (v, m) in Variant::ALL.iter().zip(self.means()) {
            s.push_str(&format!("{:<9} {:.4}\n", v.name(), m));
        }
        s.push_str(&format!("ordering satisfied: {}\n", self.ordering_satisfied()));
        s
    }
}

/// Train every variant on every seed and score Recall@1 in all directions.
pub fn run_ablation(config: &TrainConfig, seeds: &[u64]) -> Result<AblationReport> {
    config.validate()?;
    let mut runs = Vec::new();
    for variant in Variant::ALL {
        for &seed in seeds {
            let cfg = TrainConfig {
                seed,
                ..variant.configure(config)
            };
            let dataset = generate_synthetic(cfg.synthetic())?;
            let run = train(TrainState::new(&cfg, &dataset)?, &dataset, &cfg)?;
            let modalities: Vec<usize> = (0..cfg.k).collect();
            let emb = embed_all(&run.state.encoders, &dataset, &modalities)?;
            let results = evaluate_directions(&emb, &GroundTruth::for_dataset(cfg.retrieval, &dataset), &[1])?;
            runs.push(VariantRun { variant, seed, results });
        }
    }
    Ok(AblationReport { runs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalRun {
    pub seed: u64,
    /// Trained on modalities 1 and 2 only; `[1→3, 3→1]`.
    pub restricted: [RetrievalResult; 2],
    /// Trained on every modality; `[1→3, 3→1]`.
    pub oracle: [RetrievalResult; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalReport {
    pub runs: Vec<CrossModalRun>,
    /// Recall@1 of a random ranking, averaged over seeds.
    pub chance: f64,
}

impl CrossModalReport {
    pub fn mean_restricted(&self) -> f64 {
        let all: Vec<_> = self.runs.iter().flat_map(|r| r.restricted.iter().cloned()).collect();
        mean_recall(&all, 1)
    }

    pub fn mean_oracle(&self) -> f64 {
        let all: Vec<_> = self.runs.iter().flat_map(|r| r.oracle.iter().cloned()).collect();
        mean_recall(&all, 1)
    }

    pub fn summary(&self) -> String {
        format!(
            "chance     {:.4}\nrestricted {:.4}\noracle     {:.4}\n",
            self.chance,
            self.mean_restricted(),
            self.mean_oracle()
        )
    }
}

fn first_third(
    encoders: &[LinearEncoder],
    dataset: &SyntheticDataset,
    truth: &GroundTruth,
) -> Result<[RetrievalResult; 2]> {
    let emb = embed_all(encoders, dataset, &[0, 2])?;
    Ok([
        recall_at_k(&emb[0], &emb[1], truth, &[1])?,
        recall_at_k(&emb[1], &emb[0], truth, &[1])?,
    ])
}

/// Train on modalities 1–2 only and score 1↔3 retrieval, against a run that
/// also trains modality 3.
pub fn cross_modal_generalization(config: &TrainConfig, seeds: &[u64]) -> Result<CrossModalReport> {
    config.validate()?;
    if config.k < 3 {
        return Err(Error::config(
            "k",
            format!("held-out modality harness needs k >= 3, got {}", config.k),
        ));
    }
    let mut runs = Vec::new();
    let mut chance = 0.0;
    for &seed in seeds {
        let cfg = TrainConfig {
            seed,
            anchor: 1,
            ..config.clone()
        };
        let dataset = generate_synthetic(cfg.synthetic())?;
        let init = warm_start_encoders(&dataset, cfg.d, cfg.warm_start, seed)?;

        let restricted = train(TrainState::with_encoders(init.clone(), &[0, 1], 0)?, &dataset, &cfg)?;
        let all: Vec<usize> = (0..cfg.k).collect();
        let oracle = train(TrainState::with_encoders(init, &all, 0)?, &dataset, &cfg)?;

        let truth = GroundTruth::for_dataset(cfg.retrieval, &dataset);
        chance += truth.chance(dataset.len()) / seeds.len() as f64;
        runs.push(CrossModalRun {
            seed,
            restricted: first_third(&restricted.state.encoders, &dataset, &truth)?,
            oracle: first_third(&oracle.state.encoders, &dataset, &truth)?,
        });
    }
    Ok(CrossModalReport { runs, chance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::seeded_rng;

    fn random_set(b: usize, d: usize, modality: usize, seed: u64) -> EmbeddingSet {
        let mut rng = seeded_rng(seed, 7);
        EmbeddingSet::normalized(Matrix::gaussian(b, d, 1.0, &mut rng), modality).unwrap()
    }

    #[test]
    fn self_retrieval_is_perfect() {
        let a = random_set(20, 8, 0, 1);
        let r = recall_at_k(&a, &a, &GroundTruth::identity(20), &[1, 5, 20]).unwrap();
        assert_eq!(r.recall(1), Some(1.0));
        assert_eq!(r.recall(20), Some(1.0));
        assert_eq!(r.query_count, 20);
    }

    #[test]
    fn recall_is_monotone_and_complete() {
        let a = random_set(30, 8, 0, 2);
        let b = random_set(30, 8, 1, 3);
        let ks: Vec<usize> = (1..=30).collect();
        let r = recall_at_k(&a, &b, &GroundTruth::identity(30), &ks).unwrap();
        let vals: Vec<f64> = ks.iter().map(|&k| r.recall(k).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(vals[29], 1.0);
        assert_eq!(r.direction(), "1->2");
    }

    #[test]
    fn k_out_of_range() {
        let a = random_set(5, 3, 0, 2);
        assert!(recall_at_k(&a, &a, &GroundTruth::identity(5), &[6]).is_err());
        assert!(recall_at_k(&a, &a, &GroundTruth::identity(5), &[0]).is_err());
        assert!(recall_at_k(&a, &a, &GroundTruth::identity(4), &[1]).is_err());
    }

    #[test]
    fn ties_rank_lower_index_first() {
        // all gallery items identical: the top-1 is always gallery 0
        let q = EmbeddingSet::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]), 0).unwrap();
        let g = EmbeddingSet::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]), 1).unwrap();
        let r = recall_at_k(&q, &g, &GroundTruth::identity(2), &[1]).unwrap();
        assert_eq!(r.recall(1), Some(0.5));
        let r = recall_at_k(&q, &g, &GroundTruth::Index(vec![1, 1]), &[1]).unwrap();
        assert_eq!(r.recall(1), Some(0.0));
    }

    #[test]
    fn label_truth_counts_any_same_class_item() {
        let q = EmbeddingSet::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]), 0).unwrap();
        let g = EmbeddingSet::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]), 1).unwrap();
        let truth = GroundTruth::Labels {
            query: vec![0, 1],
            gallery: vec![0, 0, 1],
        };
        let r = recall_at_k(&q, &g, &truth, &[1]).unwrap();
        assert_eq!(r.recall(1), Some(1.0));
    }

    #[test]
    fn random_gallery_is_at_chance() {
        let b = 100;
        let seeds = 20;
        let mean: f64 = (0..seeds)
            .map(|s| {
                let q = random_set(b, 16, 0, 100 + s);
                let g = random_set(b, 16, 1, 200 + s);
                recall_at_k(&q, &g, &GroundTruth::identity(b), &[1])
                    .unwrap()
                    .recall(1)
                    .unwrap()
            })
            .sum::<f64>()
            / seeds as f64;
        // mean of 2000 Bernoulli(1/B) hits
        let sigma = (0.01f64 * 0.99 / (b as f64 * seeds as f64)).sqrt();
        assert!((mean - 0.01).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn chance_matches_hit_density() {
        assert!((GroundTruth::identity(40).chance(40) - 1.0 / 40.0).abs() < 1e-15);
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        assert!((GroundTruth::same_label(&labels).chance(40) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn directions_cover_ordered_pairs() {
        let sets: Vec<_> = (0..3).map(|m| random_set(6, 4, m, m as u64)).collect();
        let r = evaluate_directions(&sets, &GroundTruth::identity(6), &[1]).unwrap();
        let dirs: Vec<String> = r.iter().map(|x| x.direction()).collect();
        assert_eq!(dirs, ["1->2", "1->3", "2->1", "2->3", "3->1", "3->2"]);
    }

    #[test]
    fn ordering_is_a_function_of_the_means() {
        let mk = |variant, r1: f64| VariantRun {
            variant,
            seed: 0,
            results: vec![RetrievalResult {
                query_modality: 0,
                target_modality: 1,
                recall_at: [(1, r1)].into_iter().collect(),
                query_count: 10,
            }],
        };
        let report = AblationReport {
            runs: vec![
                mk(Variant::Full, 0.6),
                mk(Variant::NoOt, 0.5),
                mk(Variant::NoGave, 0.55),
                mk(Variant::Neither, 0.4),
            ],
        };
        assert!(report.ordering_satisfied());
        assert!(report.endpoints_separated(0.02));
        assert!(!report.endpoints_separated(0.3));
        let report = AblationReport {
            runs: vec![
                mk(Variant::Full, 0.5),
                mk(Variant::NoOt, 0.6),
                mk(Variant::NoGave, 0.55),
                mk(Variant::Neither, 0.4),
            ],
        };
        assert!(!report.ordering_satisfied());
    }

    #[test]
    fn cross_modal_needs_three_modalities() {
        let config = TrainConfig {
            k: 2,
            ..TrainConfig::default()
        };
        assert!(cross_modal_generalization(&config, &[0]).is_err());
    }
}
