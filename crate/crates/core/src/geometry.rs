//! Parallelotope volume of a group of embeddings via the Gram determinant.
//!
//! For `k` vectors stacked as the columns of `V ∈ R^{d×k}`, the volume is
//! `sqrt(det(VᵀV))`. It is zero when the vectors are linearly dependent and one
//! when unit vectors are mutually orthogonal, so it serves as a dissimilarity
//! measure over the whole group rather than over a single pair.
//!
//! The gradient with respect to the raw entries of `V` is `Vol · V · G⁻¹`.
//! Near singular Gram matrices the inverse is replaced by `(G + δI)⁻¹`.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Cholesky, Matrix};

/// `det(G)` below this is reported as degenerate.
pub const SINGULARITY_FLOOR: f64 = 1e-12;
/// Diagonal jitter retried when the plain Cholesky factorization fails.
pub const FACTOR_JITTER: f64 = 1e-12;
/// Ridge added to `G` before inverting it for the gradient of a degenerate group.
pub const GRADIENT_RIDGE: f64 = 1e-8;

const UNIT_TOLERANCE: f64 = 1e-9;

/// `k` column vectors of common dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGroup {
    columns: Vec<Vec<f64>>,
}

impl VectorGroup {
    /// Structural checks only: at least two columns, all of the same length.
    pub fn new(columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() < 2 {
            return Err(Error::invalid(format!(
                "a vector group needs at least 2 columns, got {}",
                columns.len()
            )));
        }
        let d = columns[0].len();
        if d == 0 {
            return Err(Error::invalid("vector group columns are empty"));
        }
        for c in &columns[1..] {
            if c.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "vector group column",
                    expected: d,
                    found: c.len(),
                });
            }
        }
        Ok(Self { columns })
    }

    /// Like [`VectorGroup::new`] but also requires every column to have unit norm.
    pub fn unit(columns: Vec<Vec<f64>>) -> Result<Self> {
        let g = Self::new(columns)?;
        if let Some((i, n)) = g
            .columns
            .iter()
            .map(|c| norm(c))
            .enumerate()
            .find(|(_, n)| (n - 1.0).abs() > UNIT_TOLERANCE)
        {
            return Err(Error::invalid(format!("column {i} has norm {n}, expected 1")));
        }
        Ok(g)
    }

    /// Stack the columns of a `d×k` matrix.
    pub fn from_matrix(v: &Matrix) -> Result<Self> {
        Self::new((0..v.cols()).map(|j| v.column(j)).collect())
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn d(&self) -> usize {
        self.columns[0].len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// More vectors than dimensions: the volume is identically zero.
    pub fn is_overcomplete(&self) -> bool {
        self.k() > self.d()
    }

    /// The `d×k` matrix `V`.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.d(), self.k(), |r, c| self.columns[c][r])
    }

    fn column_refs(&self) -> Vec<&[f64]> {
        self.columns.iter().map(Vec::as_slice).collect()
    }
}

/// Symmetric `k×k` matrix of column inner products.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(Matrix);

impl GramMatrix {
    pub fn entries(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    /// Cholesky factor, retrying once with [`FACTOR_JITTER`] on the diagonal.
    fn factor(&self) -> Option<Cholesky> {
        Cholesky::new(&self.0).or_else(|| Cholesky::new(&ridge(&self.0, FACTOR_JITTER)))
    }

    /// `det(G)`, zero when the factorization reports a singular direction.
    pub fn determinant(&self) -> f64 {
        self.factor().map_or(0.0, |c| c.determinant().max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeResult {
    pub volume: f64,
    /// `∂Vol/∂V`, laid out `d×k` like `V`.
    pub gradient: Matrix,
    /// `det(G)` fell below [`SINGULARITY_FLOOR`].
    pub degenerate: bool,
}

pub fn gram(group: &VectorGroup) -> GramMatrix {
    gram_of(&group.column_refs())
}

pub fn volume(group: &VectorGroup) -> VolumeResult {
    volume_of(&group.column_refs())
}

pub fn grad_volume(group: &VectorGroup) -> Matrix {
    volume(group).gradient
}

/// Central differences of [`volume`] over every raw entry of `V`. Columns are
/// not re-normalized after perturbation.
pub fn volume_finite_diff(group: &VectorGroup, h: f64) -> Result<Matrix> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::invalid(format!(
            "finite-difference step {h} outside [1e-7, 1e-3]"
        )));
    }
    let (d, k) = (group.d(), group.k());
    let mut cols = group.columns.clone();
    let mut out = Matrix::zeros(d, k);
    for c in 0..k {
        for r in 0..d {
            let orig = cols[c][r];
            cols[c][r] = orig + h;
            let plus = volume_value(&refs(&cols));
            cols[c][r] = orig - h;
            let minus = volume_value(&refs(&cols));
            cols[c][r] = orig;
            out[(r, c)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}

fn refs(cols: &[Vec<f64>]) -> Vec<&[f64]> {
    cols.iter().map(Vec::as_slice).collect()
}

pub(crate) fn gram_of(columns: &[&[f64]]) -> GramMatrix {
    let k = columns.len();
    let mut g = Matrix::zeros(k, k);
    for p in 0..k {
        for q in p..k {
            let v = dot(columns[p], columns[q]);
            g[(p, q)] = v;
            g[(q, p)] = v;
        }
    }
    GramMatrix(g)
}

fn ridge(a: &Matrix, delta: f64) -> Matrix {
    let mut out = a.clone();
    for i in 0..out.rows() {
        out[(i, i)] += delta;
    }
    out
}

/// Volume only, skipping the gradient.
pub(crate) fn volume_value(columns: &[&[f64]]) -> f64 {
    if columns.len() > columns[0].len() {
        return 0.0;
    }
    gram_of(columns).determinant().sqrt()
}

pub(crate) fn volume_of(columns: &[&[f64]]) -> VolumeResult {
    let k = columns.len();
    let d = columns[0].len();
    if k > d {
        return VolumeResult {
            volume: 0.0,
            gradient: Matrix::zeros(d, k),
            degenerate: true,
        };
    }

    let g = gram_of(columns);
    let factor = g.factor();
    let det = factor.as_ref().map_or(0.0, |c| c.determinant().max(0.0));
    let volume = det.sqrt();
    let degenerate = det < SINGULARITY_FLOOR;

    let inverse = match factor {
        Some(c) if !degenerate && !c.is_singular() => c.inverse(),
        _ => Cholesky::new(&ridge(g.entries(), GRADIENT_RIDGE))
            .filter(|c| !c.is_singular())
            .map_or_else(|| Matrix::zeros(k, k), |c| c.inverse()),
    };

    // gradient[:, c] = volume * Σ_p V[:, p] * inverse[p, c]
    let mut gradient = Matrix::zeros(d, k);
    if volume > 0.0 {
        for c in 0..k {
            for (p, col) in columns.iter().enumerate() {
                let w = volume * inverse[(p, c)];
                for r in 0..d {
                    gradient[(r, c)] += w * col[r];
                }
            }
        }
    }

    VolumeResult {
        volume,
        gradient,
        degenerate,
    }
}

/// `max |a - b| / max(max|a|, max|b|)`, with a tiny floor on the denominator so
/// that two zero matrices compare equal.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let mut diff = a.clone();
    diff.add_scaled(-1.0, b);
    diff.max_abs() / a.max_abs().max(b.max_abs()).max(1e-300)
}
