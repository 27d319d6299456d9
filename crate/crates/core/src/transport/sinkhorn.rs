use log::warn;

use super::CostMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once the largest marginal deviation drops below this.
    pub tol: f64,
}

impl SinkhornParams {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            max_iters: 2000,
            tol: 1e-9,
        }
    }
}

/// Entropic OT coupling between uniform marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub entries: Matrix,
    pub epsilon: f64,
    pub iterations: usize,
    /// Largest deviation of a row or column sum from its uniform target.
    pub marginal_error: f64,
    pub converged: bool,
    pub source_modality: usize,
    pub target_modality: usize,
}

impl TransportPlan {
    pub fn rows(&self) -> usize {
        self.entries.rows()
    }

    pub fn cols(&self) -> usize {
        self.entries.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.entries.row(i)
    }

    /// Build a plan directly from entries, e.g. a fixed identity matching.
    pub fn from_entries(entries: Matrix, source_modality: usize, target_modality: usize) -> Self {
        let marginal_error = marginal_error(&entries);
        Self {
            entries,
            epsilon: 0.0,
            iterations: 0,
            marginal_error,
            converged: true,
            source_modality,
            target_modality,
        }
    }

    /// The uniform diagonal coupling `I / n`.
    pub fn identity(n: usize, source_modality: usize, target_modality: usize) -> Self {
        let mut entries = Matrix::identity(n);
        entries.scale(1.0 / n as f64);
        Self::from_entries(entries, source_modality, target_modality)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.as_slice().iter().sum()
    }

    /// Shannon entropy `−Σ π log π`.
    pub fn entropy(&self) -> f64 {
        self.entries
            .as_slice()
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }
}

fn marginal_error(p: &Matrix) -> f64 {
    let (n, m) = (p.rows(), p.cols());
    let (a, b) = (1.0 / n as f64, 1.0 / m as f64);
    let mut col = vec![0.0; m];
    let mut err: f64 = 0.0;
    for i in 0..n {
        let row = p.row(i);
        err = err.max((row.iter().sum::<f64>() - a).abs());
        col.iter_mut().zip(row).for_each(|(c, x)| *c += x);
    }
    col.iter().fold(err, |e, c| e.max((c - b).abs()))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Plain iterations before Newton polishing is considered.
const NEWTON_AFTER: usize = 20;
/// Relative ridge on the Newton Schur complement.
const NEWTON_RIDGE: f64 = 1e-13;

struct Duals<'a> {
    cost: &'a Matrix,
    eps: f64,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl Duals<'_> {
    fn plan_entry(&self, f: &[f64], g: &[f64], i: usize, j: usize) -> f64 {
        ((f[i] + g[j] - self.cost[(i, j)]) / self.eps).exp()
    }

    fn plan(&self) -> Matrix {
        Matrix::from_fn(self.cost.rows(), self.cost.cols(), |i, j| {
            self.plan_entry(&self.f, &self.g, i, j)
        })
    }

    /// One Sinkhorn sweep; afterwards the column marginals are exact.
    fn sweep(&mut self) {
        let (n, m) = (self.cost.rows(), self.cost.cols());
        let eps = self.eps;
        let log_a = -(n as f64).ln();
        let log_b = -(m as f64).ln();
        for i in 0..n {
            let row = self.cost.row(i);
            self.f[i] = eps * log_a - eps * log_sum_exp(self.g.iter().zip(row).map(|(gj, cij)| (gj - cij) / eps));
        }
        for j in 0..m {
            let (f, c) = (&self.f, self.cost);
            self.g[j] = eps * log_b - eps * log_sum_exp((0..n).map(|i| (f[i] - c[(i, j)]) / eps));
        }
    }

    fn finite(&self) -> bool {
        self.f.iter().chain(&self.g).all(|x| x.is_finite())
    }

    /// One damped Newton step on the dual objective, accepted only if it
    /// lowers the marginal error. Returns whether a step was taken.
    ///
    /// With `P` the current plan, `r`, `c` its marginals, the Newton system is
    /// `[[diag r, P], [Pᵀ, diag c]] (Δf, Δg) = ε (a − r, b − c)`. It is solved
    /// through the Schur complement on `Δg` with the gauge `Δg_last = 0`.
    fn newton_step(&mut self, current_error: f64) -> bool {
        let (n, m) = (self.cost.rows(), self.cost.cols());
        let (a, b) = (1.0 / n as f64, 1.0 / m as f64);
        let p = self.plan();
        let r: Vec<f64> = (0..n).map(|i| p.row(i).iter().sum()).collect();
        let mut c = vec![0.0; m];
        for i in 0..n {
            c.iter_mut().zip(p.row(i)).for_each(|(cj, x)| *cj += x);
        }
        if r.iter().any(|&x| !(x > 0.0)) {
            return false;
        }
        let rf: Vec<f64> = r.iter().map(|ri| self.eps * (a - ri)).collect();
        let rg: Vec<f64> = c.iter().map(|cj| self.eps * (b - cj)).collect();

        // S = diag(c) − Pᵀ diag(1/r) P on the first m−1 columns, rhs = rg − Pᵀ (rf / r)
        let size = m - 1;
        if size == 0 {
            return false;
        }
        let mut schur = Matrix::zeros(size, size);
        let mut rhs = vec![0.0; size];
        for j in 0..size {
            schur[(j, j)] = c[j];
            rhs[j] = rg[j];
        }
        for i in 0..n {
            let row = p.row(i);
            let inv = 1.0 / r[i];
            for j in 0..size {
                let pij = row[j] * inv;
                if pij == 0.0 {
                    continue;
                }
                rhs[j] -= row[j] * rf[i] * inv;
                for l in j..size {
                    schur[(j, l)] -= pij * row[l];
                }
            }
        }
        let scale = (0..size).map(|j| schur[(j, j)]).fold(0.0, f64::max);
        for j in 0..size {
            schur[(j, j)] += NEWTON_RIDGE * scale;
            for l in 0..j {
                schur[(j, l)] = schur[(l, j)];
            }
        }
        let Some(chol) = crate::linalg::Cholesky::new(&schur).filter(|c| !c.is_singular()) else {
            return false;
        };
        let mut dg = chol.solve(&rhs);
        dg.push(0.0);
        let df: Vec<f64> = (0..n)
            .map(|i| (rf[i] - p.row(i).iter().zip(&dg).map(|(pij, d)| pij * d).sum::<f64>()) / r[i])
            .collect();

        let mut t = 1.0;
        for _ in 0..30 {
            let f: Vec<f64> = self.f.iter().zip(&df).map(|(x, d)| x + t * d).collect();
            let g: Vec<f64> = self.g.iter().zip(&dg).map(|(x, d)| x + t * d).collect();
            let trial = Matrix::from_fn(n, m, |i, j| self.plan_entry(&f, &g, i, j));
            let err = marginal_error(&trial);
            if err.is_finite() && err < current_error {
                self.f = f;
                self.g = g;
                return true;
            }
            t *= 0.5;
        }
        false
    }
}

/// Log-domain Sinkhorn with uniform marginals.
///
/// Alternates `f_i = ε log a − ε LSE_j((g_j − C_ij)/ε)` and
/// `g_j = ε log b − ε LSE_i((f_i − C_ij)/ε)`; the plan is
/// `exp((f_i + g_j − C_ij)/ε)`. When plain sweeps stall (small `ε`, nearly
/// sparse kernels) each further iteration also tries a damped Newton step on
/// the dual potentials, which converges to the same plan quadratically.
pub fn sinkhorn(cost: &CostMatrix, params: &SinkhornParams) -> Result<TransportPlan> {
    let eps = params.epsilon;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config("epsilon", format!("must be > 0, got {eps}")));
    }
    let (n, m) = (cost.rows(), cost.cols());
    let mut duals = Duals {
        cost: &cost.entries,
        eps,
        f: vec![0.0; n],
        g: vec![0.0; m],
    };
    let mut iterations = 0;
    let mut error = f64::INFINITY;

    while iterations < params.max_iters {
        iterations += 1;
        duals.sweep();
        if !duals.finite() {
            return Err(Error::SinkhornNan { epsilon: eps });
        }
        error = marginal_error(&duals.plan());
        if error < params.tol {
            break;
        }
        if iterations >= NEWTON_AFTER && duals.newton_step(error) {
            error = marginal_error(&duals.plan());
            if error < params.tol {
                break;
            }
        }
    }

    let entries = duals.plan();
    let marginal_error = marginal_error(&entries);
    let converged = error < params.tol;
    if !converged {
        warn!("sinkhorn did not converge: epsilon={eps}, {iterations} iterations, marginal error {marginal_error:e}");
    }
    Ok(TransportPlan {
        entries,
        epsilon: eps,
        iterations,
        marginal_error,
        converged,
        source_modality: cost.source_modality,
        target_modality: cost.target_modality,
    })
}
