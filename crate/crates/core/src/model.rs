//! Toy modality encoders and the synthetic paired dataset they are trained on.
//!
//! Every modality sees the same latent sample through its own random orthogonal
//! mixing map, so a perfect cross-modal alignment always exists. Encoders are
//! single linear maps followed by L2 normalization.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, random_orthogonal, Matrix};

const UNIT_TOLERANCE: f64 = 1e-9;
/// Pre-normalization norm below which an encoder output is rejected.
pub const MIN_OUTPUT_NORM: f64 = 1e-12;

/// RNG stream ids; one seed drives several independent streams.
pub(crate) mod stream {
    pub const DATASET: u64 = 0;
    pub const ENCODERS: u64 = 1;
    pub const TRAINING: u64 = 2;
    pub const WARM_START: u64 = 3;
}

pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A batch of unit-norm embeddings for one modality, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: Matrix,
    modality: usize,
}

impl EmbeddingSet {
    pub fn new(vectors: Matrix, modality: usize) -> Result<Self> {
        for i in 0..vectors.rows() {
            let n = norm(vectors.row(i));
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::invalid(format!("embedding row {i} has norm {n}, expected 1")));
            }
        }
        Ok(Self { vectors, modality })
    }

    /// Normalize every row. Rows with norm below [`MIN_OUTPUT_NORM`] are rejected.
    pub fn normalized(mut vectors: Matrix, modality: usize) -> Result<Self> {
        for i in 0..vectors.rows() {
            let row = vectors.row_mut(i);
            let n = norm(row);
            if n < MIN_OUTPUT_NORM {
                return Err(Error::DegenerateEncoder {
                    modality,
                    row: i,
                    norm: n,
                });
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        Ok(Self { vectors, modality })
    }

    /// Skips the unit-norm check; for finite-difference probes off the sphere.
    #[cfg(test)]
    pub(crate) fn unchecked(vectors: Matrix, modality: usize) -> Self {
        Self { vectors, modality }
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn modality(&self) -> usize {
        self.modality
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }
}

/// `x ↦ normalize(W x)` with `W ∈ R^{d×d_in}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    pub weight: Matrix,
    pub modality: usize,
}

impl LinearEncoder {
    pub fn new(weight: Matrix, modality: usize) -> Result<Self> {
        if !weight.is_finite() {
            return Err(Error::invalid(format!("encoder {modality} has non-finite weights")));
        }
        Ok(Self { weight, modality })
    }

    /// Gaussian entries with standard deviation `1/√d_in`.
    pub fn random<R: Rng + ?Sized>(d: usize, d_in: usize, modality: usize, rng: &mut R) -> Self {
        Self {
            weight: Matrix::gaussian(d, d_in, 1.0 / (d_in as f64).sqrt(), rng),
            modality,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    fn project(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "encoder input dimension",
                expected: self.input_dim(),
                found: inputs.cols(),
            });
        }
        Ok(inputs.matmul(&self.weight.transpose()))
    }
}

/// One encoder per modality, all seeded from the same stream.
pub fn init_encoders(k: usize, d: usize, d_in: usize, seed: u64) -> Vec<LinearEncoder> {
    let mut rng = seeded_rng(seed, stream::ENCODERS);
    (0..k).map(|m| LinearEncoder::random(d, d_in, m, &mut rng)).collect()
}

/// Encoders that already share part of their structure across modalities,
/// as pretrained feature extractors would.
///
/// `W_m = α·P·R_mᵀ + √(1 − α²)·G_m` where `P` is one shared Gaussian map,
/// `R_m` the dataset's mixing map and `G_m` the plain Gaussian init from
/// [`init_encoders`]. `α = 0` reproduces [`init_encoders`] exactly; `α = 1`
/// gives perfectly aligned encoders.
pub fn warm_start_encoders(dataset: &SyntheticDataset, d: usize, alpha: f64, seed: u64) -> Result<Vec<LinearEncoder>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("warm_start", format!("must be in [0, 1], got {alpha}")));
    }
    let d_in = dataset.config.input_dim;
    let mut encoders = init_encoders(dataset.modalities(), d, d_in, seed);
    if alpha == 0.0 {
        return Ok(encoders);
    }
    let shared = Matrix::gaussian(
        d,
        d_in,
        1.0 / (d_in as f64).sqrt(),
        &mut seeded_rng(seed, stream::WARM_START),
    );
    let noise = (1.0 - alpha * alpha).sqrt();
    for (enc, mixing) in encoders.iter_mut().zip(&dataset.mixing) {
        let mut w = shared.matmul(&mixing.transpose());
        w.scale(alpha);
        w.add_scaled(noise, &enc.weight);
        enc.weight = w;
    }
    Ok(encoders)
}

pub fn encode(encoder: &LinearEncoder, inputs: &Matrix) -> Result<EmbeddingSet> {
    EmbeddingSet::normalized(encoder.project(inputs)?, encoder.modality)
}

/// Backward pass of `v = y/‖y‖`: `(I − v vᵀ) g / ‖y‖`.
pub fn normalize_backward(v: &[f64], pre_norm: f64, upstream: &[f64]) -> Vec<f64> {
    let radial = dot(v, upstream);
    v.iter()
        .zip(upstream)
        .map(|(vi, gi)| (gi - radial * vi) / pre_norm)
        .collect()
}

/// Gradient of a scalar loss with respect to the encoder weight, given the
/// loss gradient with respect to the normalized outputs (`B×d`).
pub fn encode_backward(encoder: &LinearEncoder, inputs: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    let y = encoder.project(inputs)?;
    if (upstream.rows(), upstream.cols()) != (y.rows(), y.cols()) {
        return Err(Error::DimensionMismatch {
            context: "upstream gradient rows",
            expected: y.rows(),
            found: upstream.rows(),
        });
    }
    let mut grad = Matrix::zeros(encoder.output_dim(), encoder.input_dim());
    for i in 0..y.rows() {
        let g = upstream.row(i);
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let n = norm(y.row(i));
        if n < MIN_OUTPUT_NORM {
            return Err(Error::DegenerateEncoder {
                modality: encoder.modality,
                row: i,
                norm: n,
            });
        }
        let v: Vec<f64> = y.row(i).iter().map(|x| x / n).collect();
        let gy = normalize_backward(&v, n, g);
        let x = inputs.row(i);
        for (r, gr) in gy.iter().enumerate() {
            if *gr == 0.0 {
                continue;
            }
            for (w, xc) in grad.row_mut(r).iter_mut().zip(x) {
                *w += gr * xc;
            }
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub modalities: usize,
    pub samples: usize,
    pub input_dim: usize,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    /// Unit class prototypes, `C×d_in`.
    pub prototypes: Matrix,
    pub labels: Vec<usize>,
    /// Shared latent per sample, `B×d_in`.
    pub latents: Matrix,
    /// Orthogonal `d_in×d_in` mixing map per modality.
    pub mixing: Vec<Matrix>,
    /// Raw per-modality inputs, `B×d_in` each; row `i` is `R_m · latent_i`.
    pub inputs: Vec<Matrix>,
}

impl SyntheticDataset {
    pub fn modalities(&self) -> usize {
        self.inputs.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn generate_synthetic(config: SyntheticConfig) -> Result<SyntheticDataset> {
    let SyntheticConfig {
        classes,
        modalities,
        samples,
        input_dim,
        sigma,
        seed,
    } = config;
    if classes < 2 {
        return Err(Error::config("classes", format!("must be >= 2, got {classes}")));
    }
    if samples < classes {
        return Err(Error::config(
            "batch",
            format!("batch size {samples} is smaller than the class count {classes}"),
        ));
    }
    if modalities < 1 || input_dim < 1 {
        return Err(Error::invalid("need at least one modality and one input dimension"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config("sigma", format!("must be >= 0, got {sigma}")));
    }

    let mut rng = seeded_rng(seed, stream::DATASET);

    let mut prototypes = Matrix::gaussian(classes, input_dim, 1.0, &mut rng);
    for c in 0..classes {
        let row = prototypes.row_mut(c);
        let n = norm(row);
        row.iter_mut().for_each(|x| *x /= n);
    }

    let mut labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);

    let latents = Matrix::from_fn(samples, input_dim, |i, j| {
        let noise: f64 = rng.sample(StandardNormal);
        prototypes[(labels[i], j)] + sigma * noise
    });

    let mixing: Vec<Matrix> = (0..modalities)
        .map(|_| random_orthogonal(input_dim, &mut rng))
        .collect();
    let inputs = mixing.iter().map(|r| latents.matmul(&r.transpose())).collect();

    Ok(SyntheticDataset {
        config,
        prototypes,
        labels,
        latents,
        mixing,
        inputs,
    })
}

/// Mean cosine similarity over within-class pairs and over between-class pairs
/// of the rows of `x`.
pub fn class_cosine_means(x: &Matrix, labels: &[usize]) -> (f64, f64) {
    let unit: Vec<Vec<f64>> = (0..x.rows())
        .map(|i| {
            let n = norm(x.row(i));
            x.row(i).iter().map(|v| v / n).collect()
        })
        .collect();
    let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            let c = dot(&unit[i], &unit[j]);
            if labels[i] == labels[j] {
                within += c;
                nw += 1;
            } else {
                between += c;
                nb += 1;
            }
        }
    }
    (within / nw.max(1) as f64, between / nb.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(sigma: f64, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            classes: 4,
            modalities: 2,
            samples: 64,
            input_dim: 12,
            sigma,
            seed,
        }
    }

    #[test]
    fn warm_start_interpolates_between_random_and_aligned() {
        let ds = generate_synthetic(SyntheticConfig {
            modalities: 3,
            ..config(0.2, 5)
        })
        .unwrap();
        assert_eq!(warm_start_encoders(&ds, 8, 0.0, 9).unwrap(), init_encoders(3, 8, 12, 9));

        let aligned = warm_start_encoders(&ds, 8, 1.0, 9).unwrap();
        let e: Vec<EmbeddingSet> = (0..3).map(|m| encode(&aligned[m], &ds.inputs[m]).unwrap()).collect();
        for m in 1..3 {
            let diff = e[0].vectors().as_slice().iter().zip(e[m].vectors().as_slice());
            assert!(diff.map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < 1e-12);
        }
        assert!(warm_start_encoders(&ds, 8, 1.2, 9).is_err());
    }

    #[test]
    fn zero_noise_views_are_rotated_prototypes() {
        let ds = generate_synthetic(config(0.0, 1)).unwrap();
        for m in 0..2 {
            let back = ds.inputs[m].matmul(&ds.mixing[m]);
            for i in 0..ds.len() {
                let proto = ds.prototypes.row(ds.labels[i]);
                let cos = dot(back.row(i), proto) / norm(back.row(i));
                assert!((cos - 1.0).abs() < 1e-12);
            }
        }
        let (within, _) = class_cosine_means(&ds.inputs[0], &ds.labels);
        assert!((within - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_synthetic(config(0.3, 9)).unwrap(),
            generate_synthetic(config(0.3, 9)).unwrap()
        );
        assert_ne!(
            generate_synthetic(config(0.3, 9)).unwrap().latents,
            generate_synthetic(config(0.3, 10)).unwrap().latents
        );
    }

    #[test]
    fn every_class_present() {
        let ds = generate_synthetic(SyntheticConfig {
            classes: 5,
            samples: 5,
            ..config(0.1, 3)
        })
        .unwrap();
        let mut l = ds.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate_synthetic(SyntheticConfig {
            samples: 3,
            ..config(0.1, 0)
        })
        .is_err());
        assert!(generate_synthetic(SyntheticConfig {
            classes: 1,
            ..config(0.1, 0)
        })
        .is_err());
        assert!(generate_synthetic(config(-0.1, 0)).is_err());
    }

    #[test]
    fn classes_are_separable_in_latent_space() {
        let ds = generate_synthetic(config(0.1, 4)).unwrap();
        let (within, between) = class_cosine_means(&ds.latents, &ds.labels);
        assert!(within > between, "{within} vs {between}");
    }

    #[test]
    fn separability_decreases_with_noise() {
        for seed in 0..3 {
            let ratios: Vec<f64> = [0.05, 0.2, 0.5]
                .iter()
                .map(|&s| {
                    let ds = generate_synthetic(config(s, seed)).unwrap();
                    let (w, b) = class_cosine_means(&ds.latents, &ds.labels);
                    // between-class cosine can be near zero or negative; compare gaps
                    w - b
                })
                .collect();
            assert!(ratios.windows(2).all(|w| w[0] > w[1]), "seed {seed}: {ratios:?}");
        }
    }

    #[test]
    fn encode_examples() {
        let mut rng = seeded_rng(5, 0);
        let x = Matrix::gaussian(6, 4, 1.0, &mut rng);
        let unit = EmbeddingSet::normalized(x, 0).unwrap().vectors().clone();

        let id = LinearEncoder::new(Matrix::identity(4), 0).unwrap();
        let out = encode(&id, &unit).unwrap();
        let mut diff = out.vectors().clone();
        diff.add_scaled(-1.0, &unit);
        assert!(diff.max_abs() < 1e-15);
        // idempotent
        assert_eq!(encode(&id, out.vectors()).unwrap().vectors(), out.vectors());

        let mut w5 = Matrix::identity(4);
        w5.scale(5.0);
        let out5 = encode(&LinearEncoder::new(w5, 0).unwrap(), &unit).unwrap();
        let mut diff = out5.vectors().clone();
        diff.add_scaled(-1.0, &unit);
        assert!(diff.max_abs() < 1e-15);

        let enc = LinearEncoder::random(7, 4, 2, &mut rng);
        let out = encode(&enc, &Matrix::gaussian(10, 4, 3.0, &mut rng)).unwrap();
        assert_eq!(out.modality(), 2);
        for i in 0..out.len() {
            assert!((norm(out.row(i)) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn encode_rejects_collapsed_rows() {
        let enc = LinearEncoder::new(Matrix::zeros(3, 2), 1).unwrap();
        let err = encode(&enc, &Matrix::from_rows(&[vec![1.0, 2.0]])).unwrap_err();
        assert!(matches!(
            err,
            Error::DegenerateEncoder {
                modality: 1,
                row: 0,
                ..
            }
        ));
        assert!(LinearEncoder::new(Matrix::from_rows(&[vec![f64::NAN]]), 0).is_err());
    }

    #[test]
    fn backward_kills_radial_component() {
        let mut rng = seeded_rng(6, 0);
        let enc = LinearEncoder::random(5, 3, 0, &mut rng);
        let x = Matrix::gaussian(4, 3, 1.0, &mut rng);
        let out = encode(&enc, &x).unwrap();
        // upstream parallel to the outputs
        let mut up = out.vectors().clone();
        up.scale(2.5);
        let g = encode_backward(&enc, &x, &up).unwrap();
        assert!(g.max_abs() < 1e-14);

        let g0 = encode_backward(&enc, &x, &Matrix::zeros(4, 5)).unwrap();
        assert_eq!(g0.max_abs(), 0.0);

        let up = Matrix::gaussian(4, 5, 1.0, &mut rng);
        let y = x.matmul(&enc.weight.transpose());
        for i in 0..4 {
            let gy = normalize_backward(out.row(i), norm(y.row(i)), up.row(i));
            assert!(dot(&gy, out.row(i)).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded_rng(7, 0);
        let enc = LinearEncoder::random(6, 4, 0, &mut rng);
        let x = Matrix::gaussian(5, 4, 1.0, &mut rng);
        let up = Matrix::gaussian(5, 6, 1.0, &mut rng);
        // scalar loss: Σ ⟨upstream_i, v_i⟩
        let loss = |w: &Matrix| -> f64 {
            let e = encode(&LinearEncoder::new(w.clone(), 0).unwrap(), &x).unwrap();
            (0..5).map(|i| dot(e.row(i), up.row(i))).sum()
        };
        let analytic = encode_backward(&enc, &x, &up).unwrap();
        let h = 1e-5;
        let mut fd = Matrix::zeros(6, 4);
        for r in 0..6 {
            for c in 0..4 {
                let mut w = enc.weight.clone();
                w[(r, c)] += h;
                let plus = loss(&w);
                w[(r, c)] -= 2.0 * h;
                fd[(r, c)] = (plus - loss(&w)) / (2.0 * h);
            }
        }
        assert!(crate::geometry::relative_error(&analytic, &fd) < 1e-5);
    }
}
