//! Small dense matrices and the handful of routines the crate needs on them.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::StandardNormal;

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Entries drawn i.i.d. from N(0, scale²).
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(l);
                for (o, &b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec shape");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "axpy shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Pivot below which a Cholesky step is treated as a failure rather than rounding noise.
pub const PIVOT_FAILURE: f64 = -1e-10;

/// Lower-triangular Cholesky factor of a symmetric PSD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
    /// Squared diagonal of `lower`, i.e. the pivots. Pivots in `[PIVOT_FAILURE, 0]`
    /// are clamped to zero and the factor below them is left at zero.
    pivots: Vec<f64>,
}

impl Cholesky {
    /// Factor `a`. Returns `None` when a pivot drops below [`PIVOT_FAILURE`].
    pub fn new(a: &Matrix) -> Option<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "cholesky of non-square matrix");
        let mut lower = Matrix::zeros(n, n);
        let mut pivots = vec![0.0; n];
        for j in 0..n {
            let mut pivot = a[(j, j)];
            for l in 0..j {
                pivot -= lower[(j, l)] * lower[(j, l)];
            }
            if pivot < PIVOT_FAILURE {
                return None;
            }
            if pivot <= 0.0 {
                // Singular direction; remaining entries in this column stay zero.
                pivots[j] = 0.0;
                continue;
            }
            pivots[j] = pivot;
            let diag = pivot.sqrt();
            lower[(j, j)] = diag;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for l in 0..j {
                    s -= lower[(i, l)] * lower[(j, l)];
                }
                lower[(i, j)] = s / diag;
            }
        }
        Some(Self { lower, pivots })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn pivots(&self) -> &[f64] {
        &self.pivots
    }

    pub fn determinant(&self) -> f64 {
        self.pivots.iter().product()
    }

    pub fn is_singular(&self) -> bool {
        self.pivots.iter().any(|&p| p <= 0.0)
    }

    /// Inverse of the factored matrix. Only meaningful when not singular.
    pub fn inverse(&self) -> Matrix {
        let n = self.lower.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[c] = 1.0;
            let x = self.solve(&e);
            for r in 0..n {
                inv[(r, c)] = x[r];
            }
        }
        inv
    }

    /// Solve `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lower.rows();
        let l = &self.lower;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for j in 0..i {
                s -= l[(i, j)] * y[j];
            }
            y[i] = s / l[(i, i)];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= l[(j, i)] * x[j];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }
}

/// Orthogonal `n×n` matrix from the QR decomposition of a Gaussian matrix,
/// with the sign convention that makes the distribution Haar.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    let g = Matrix::gaussian(n, n, 1.0, rng);
    // Modified Gram-Schmidt over columns.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v = g.column(j);
        for u in &q {
            let p = dot(u, &v);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        // second pass: QᵀQ = I to ~1e-15
        for u in &q {
            let p = dot(u, &v);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let nv = norm(&v);
        v.iter_mut().for_each(|a| *a /= nv);
        q.push(v);
    }
    Matrix::from_fn(n, n, |i, j| q[j][i])
}

/// Determinant by cofactor expansion. Exponential cost; test oracles only.
pub fn determinant_cofactor(a: &Matrix) -> f64 {
    let n = a.rows();
    assert_eq!(n, a.cols());
    match n {
        0 => 1.0,
        1 => a[(0, 0)],
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        _ => (0..n)
            .map(|j| {
                let minor = Matrix::from_fn(n - 1, n - 1, |r, c| a[(r + 1, if c < j { c } else { c + 1 })]);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * a[(0, j)] * determinant_cofactor(&minor)
            })
            .sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cholesky_matches_cofactor_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=5 {
            let a = Matrix::gaussian(n + 2, n, 1.0, &mut rng);
            let g = a.transpose().matmul(&a);
            let chol = Cholesky::new(&g).unwrap();
            let det = determinant_cofactor(&g);
            assert!((chol.determinant() - det).abs() < 1e-10 * det.abs().max(1.0));
            let prod = g.matmul(&chol.inverse());
            let id = Matrix::identity(n);
            let mut diff = prod.clone();
            diff.add_scaled(-1.0, &id);
            assert!(diff.max_abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(Cholesky::new(&a).is_none());
    }

    #[test]
    fn cholesky_clamps_rank_deficient() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let c = Cholesky::new(&a).unwrap();
        assert!(c.is_singular());
        assert_eq!(c.determinant(), 0.0);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_orthogonal(7, &mut rng);
        let mut qtq = q.transpose().matmul(&q);
        qtq.add_scaled(-1.0, &Matrix::identity(7));
        assert!(qtq.max_abs() < 1e-13);
    }
}
