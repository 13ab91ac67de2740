//! Generalized Lagrangian multiplier iteration for `min ‖x‖₁ s.t. Dx = y`.
//!
//! The iteration is run in coefficient space. With `G = DᴴD`, `b = Dᴴy` and the
//! back-projected multiplier `u = Dᴴz` the update
//!
//! ```text
//! x ← T_{βτ}(x + β(u + b - Gx))
//! u ← u + β(b - Gx)
//! ```
//!
//! is exactly the data-space scheme multiplied through by `Dᴴ`, and
//! `‖Dx - y‖² = ‖y‖² - Re⟨x, b⟩ - Re⟨x, b - Gx⟩` needs no data-space product.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dictionary;
use crate::linalg::{adjoint_dot, all_finite, gram, max_eigenvalue, solve_hpd};
use crate::{Error, Result, C64, CMat, CVec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GelmaParams {
    /// `β = step_scale / ‖D‖²`; must lie in (0, 2). Capped below the
    /// stability limit of the multiplier iteration, which binds on
    /// well-conditioned dictionaries with small `‖D‖²`.
    pub step_scale: f64,
    /// `τ_reg = reg_scale · max|Dᴴy|`.
    pub reg_scale: f64,
    pub max_iters: usize,
    pub residual_tol: f64,
    /// Iterations between convergence checks.
    pub check_every: usize,
    /// With a sparsity target, stop once the top-s support has been unchanged
    /// for this many consecutive checks. Zero disables.
    pub support_patience: usize,
    /// Largest support handed to the least-squares polish.
    pub polish_max: usize,
    /// Fraction of failed columns tolerated by [`sparse_code_all`].
    pub max_failure_fraction: f64,
}

impl Default for GelmaParams {
    fn default() -> Self {
        GelmaParams {
            step_scale: 1.9,
            reg_scale: 0.1,
            max_iters: 5000,
            residual_tol: 1e-6,
            check_every: 25,
            support_patience: 4,
            polish_max: 32,
            max_failure_fraction: 0.1,
        }
    }
}

impl GelmaParams {
    fn validate(&self) -> Result<()> {
        if !(self.step_scale > 0.0 && self.step_scale < 2.0) {
            return Err(Error::InvalidArgument(format!("step_scale {} outside (0, 2)", self.step_scale)));
        }
        if !(self.reg_scale > 0.0) || self.check_every == 0 {
            return Err(Error::InvalidArgument("reg_scale and check_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    SupportStable,
    MaxIters,
    ZeroData,
    Failed,
}

#[derive(Clone, Debug)]
pub struct GelmaOutcome {
    pub x: CVec,
    pub iterations: usize,
    pub relative_residual: f64,
    pub status: Status,
}

/// Precomputed coefficient-space quantities shared by every right-hand side.
pub(crate) struct Problem {
    gram: CMat,
    beta: f64,
    rows: usize,
}

impl Problem {
    pub(crate) fn new(dict: &Dictionary, params: &GelmaParams) -> Result<Self> {
        params.validate()?;
        if !dict.normalized {
            return Err(Error::InvalidArgument("dictionary must be normalized".into()));
        }
        if !all_finite(&dict.columns) {
            return Err(Error::NonFinite("dictionary".into()));
        }
        let gram = gram(&dict.columns.view());
        let l = max_eigenvalue(&gram)?;
        let beta = if l > 0.0 { (params.step_scale / l).min(0.95 * stable_step(l)) } else { 0.0 };
        Ok(Problem { gram, beta, rows: dict.rows() })
    }

    fn solve(&self, b: ArrayView1<C64>, ynorm2: f64, params: &GelmaParams, sparsity: Option<usize>) -> GelmaOutcome {
        self.solve_traced(b, ynorm2, params, sparsity, None)
    }

    fn solve_traced(
        &self,
        b: ArrayView1<C64>,
        ynorm2: f64,
        params: &GelmaParams,
        sparsity: Option<usize>,
        mut trace: Option<&mut Vec<f64>>,
    ) -> GelmaOutcome {
        let k = b.len();
        if ynorm2 == 0.0 {
            return GelmaOutcome { x: Array1::zeros(k), iterations: 0, relative_residual: 0.0, status: Status::ZeroData };
        }
        let ynorm = ynorm2.sqrt();
        let bmax = b.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let thr = self.beta * params.reg_scale * bmax;
        let beta = self.beta;
        let mut x = vec![C64::new(0.0, 0.0); k];
        let mut u = vec![C64::new(0.0, 0.0); k];
        let bv: Vec<C64> = b.to_vec();
        let mut r = bv.clone();
        let mut nz: Vec<usize> = Vec::with_capacity(k);
        let mut last_support: Vec<usize> = Vec::new();
        let mut stable = 0usize;
        let mut it = 0usize;
        while it < params.max_iters {
            it += 1;
            nz.clear();
            for j in 0..k {
                let v = x[j] + (u[j] + r[j]) * beta;
                let m = v.norm();
                x[j] = if m > thr {
                    nz.push(j);
                    v * (1.0 - thr / m)
                } else {
                    C64::new(0.0, 0.0)
                };
            }
            r.copy_from_slice(&bv);
            for &j in &nz {
                // column j of the Hermitian Gram matrix is the conjugate of row j
                let row = self.gram.row(j);
                let xj = x[j];
                for (ri, g) in r.iter_mut().zip(row.iter()) {
                    *ri -= g.conj() * xj;
                }
            }
            for j in 0..k {
                u[j] += r[j] * beta;
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.relative_residual(&x, &b, &r, ynorm2) / ynorm);
            }
            if !it.is_multiple_of(params.check_every) && it != params.max_iters {
                continue;
            }
            let xv = Array1::from(x.clone());
            if !xv.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return GelmaOutcome { x: xv, iterations: it, relative_residual: f64::NAN, status: Status::Failed };
            }
            let rel = self.relative_residual(&x, &b, &r, ynorm2) / ynorm;
            if rel <= params.residual_tol {
                return GelmaOutcome { x: xv, iterations: it, relative_residual: rel, status: Status::Converged };
            }
            if !nz.is_empty() && nz.len() <= params.polish_max && 2 * nz.len() <= self.rows {
                if let Some((xp, rel)) = self.polish(&nz, &b, ynorm2) {
                    if rel <= params.residual_tol {
                        return GelmaOutcome { x: xp, iterations: it, relative_residual: rel, status: Status::Converged };
                    }
                }
            }
            if let (Some(s), true) = (sparsity, params.support_patience > 0) {
                let support = top_support(&xv.view(), s);
                if support == last_support {
                    stable += 1;
                    if stable >= params.support_patience {
                        return GelmaOutcome { x: xv, iterations: it, relative_residual: rel, status: Status::SupportStable };
                    }
                } else {
                    stable = 0;
                    last_support = support;
                }
            }
        }
        let rel = self.relative_residual(&x, &b, &r, ynorm2) / ynorm;
        GelmaOutcome { x: Array1::from(x), iterations: it, relative_residual: rel, status: Status::MaxIters }
    }

    fn relative_residual(&self, x: &[C64], b: &ArrayView1<C64>, r: &[C64], ynorm2: f64) -> f64 {
        let mut xb = 0.0;
        let mut xr = 0.0;
        for j in 0..x.len() {
            xb += (x[j].conj() * b[j]).re;
            xr += (x[j].conj() * r[j]).re;
        }
        (ynorm2 - xb - xr).max(0.0).sqrt()
    }

    /// Least-squares fit on `support`, returning the full-length solution and
    /// its relative residual.
    pub(crate) fn polish(&self, support: &[usize], b: &ArrayView1<C64>, ynorm2: f64) -> Option<(CVec, f64)> {
        let g = self.gram.select(Axis(0), support).select(Axis(1), support);
        let bs: CVec = support.iter().map(|&j| b[j]).collect();
        let xs = solve_hpd(&g, &bs)?;
        let fit: f64 = bs.iter().zip(xs.iter()).map(|(p, q)| (p.conj() * q).re).sum();
        let rel = (ynorm2 - fit).max(0.0).sqrt() / ynorm2.sqrt();
        let mut x = Array1::zeros(b.len());
        for (&j, v) in support.iter().zip(xs.iter()) {
            x[j] = *v;
        }
        Some((x, rel))
    }
}

/// Supremum of stable steps. On a Gram eigenvalue `λ` the linearized update
/// has determinant `1 - βλ` and trace `2 - βλ - β²λ`, which stays inside the
/// unit circle iff `βλ(2 + β) < 4`.
fn stable_step(l: f64) -> f64 {
    (1.0 + 4.0 / l).sqrt() - 1.0
}

/// Indices of the `s` largest moduli, ascending.
pub(crate) fn top_support(x: &ArrayView1<C64>, s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).filter(|&j| x[j].norm() > 0.0).collect();
    idx.sort_by(|&a, &b| x[b].norm().total_cmp(&x[a].norm()).then(a.cmp(&b)));
    idx.truncate(s);
    idx.sort_unstable();
    idx
}

fn check_y(y: &ArrayView1<C64>, rows: usize) -> Result<f64> {
    if y.len() != rows {
        return Err(Error::DimensionMismatch(format!("measurement length {} vs {rows} rows", y.len())));
    }
    if !y.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::NonFinite("measurement".into()));
    }
    Ok(y.iter().map(|z| z.norm_sqr()).sum())
}

/// Approximate basis-pursuit solution of `Dx = y`.
pub fn gelma_solve(dict: &Dictionary, y: &CVec, params: &GelmaParams) -> Result<GelmaOutcome> {
    let p = Problem::new(dict, params)?;
    let ynorm2 = check_y(&y.view(), dict.rows())?;
    let b = adjoint_dot(&dict.columns.view(), &y.view().insert_axis(Axis(1)));
    Ok(p.solve(b.column(0), ynorm2, params, None))
}

/// Relative residual `‖Dx - y‖ / ‖y‖` after every iteration, with early
/// stopping disabled.
pub fn gelma_residual_trace(dict: &Dictionary, y: &CVec, params: &GelmaParams, iters: usize) -> Result<Vec<f64>> {
    let p = Problem::new(dict, params)?;
    let ynorm2 = check_y(&y.view(), dict.rows())?;
    let b = adjoint_dot(&dict.columns.view(), &y.view().insert_axis(Axis(1)));
    let mut trace = Vec::with_capacity(iters);
    let free = GelmaParams { max_iters: iters, residual_tol: -1.0, polish_max: 0, support_patience: 0, ..*params };
    p.solve_traced(b.column(0), ynorm2, &free, None, Some(&mut trace));
    Ok(trace)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CodingReport {
    pub converged: usize,
    pub support_stable: usize,
    pub max_iters: usize,
    pub zero: usize,
    pub failed: Vec<usize>,
    pub mean_iterations: f64,
}

#[derive(Clone, Debug)]
pub struct SparseCodes {
    /// K̂ × M.
    pub codes: CMat,
    pub sparsity_target: usize,
    pub report: CodingReport,
}

impl SparseCodes {
    /// Number of measurements using each atom.
    pub fn usage(&self) -> Vec<usize> {
        self.codes.axis_iter(Axis(0)).map(|r| r.iter().filter(|z| z.norm() > 0.0).count()).collect()
    }
}

/// Codes every measurement, then keeps the `sparsity` largest entries of each
/// code and refits them by least squares.
pub fn sparse_code_all(dict: &Dictionary, data: &CMat, params: &GelmaParams, sparsity: usize) -> Result<SparseCodes> {
    let p = Problem::new(dict, params)?;
    let m = data.ncols();
    let mut ynorm2 = Vec::with_capacity(m);
    for y in data.axis_iter(Axis(1)) {
        ynorm2.push(check_y(&y, dict.rows())?);
    }
    let b = adjoint_dot(&dict.columns.view(), &data.view());
    let outcomes: Vec<(CVec, Status, usize)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let o = p.solve(b.column(i), ynorm2[i], params, Some(sparsity));
            if o.status == Status::Failed || o.status == Status::ZeroData {
                return (o.x, o.status, o.iterations);
            }
            let support = top_support(&o.x.view(), sparsity);
            let x = match p.polish(&support, &b.column(i), ynorm2[i]) {
                Some((x, _)) => x,
                None => {
                    let mut x = Array1::zeros(o.x.len());
                    for &j in &support {
                        x[j] = o.x[j];
                    }
                    x
                }
            };
            (x, o.status, o.iterations)
        })
        .collect();
    let mut codes = Array2::zeros((dict.len(), m));
    let mut report = CodingReport::default();
    let mut iters = 0usize;
    for (i, (x, status, n)) in outcomes.into_iter().enumerate() {
        iters += n;
        match status {
            Status::Converged => report.converged += 1,
            Status::SupportStable => report.support_stable += 1,
            Status::MaxIters => report.max_iters += 1,
            Status::ZeroData => report.zero += 1,
            Status::Failed => {
                report.failed.push(i);
                continue;
            }
        }
        codes.column_mut(i).assign(&x);
    }
    report.mean_iterations = iters as f64 / m.max(1) as f64;
    if report.failed.len() as f64 > params.max_failure_fraction * m as f64 {
        return Err(Error::CodingFailed { failed: report.failed.len(), total: m });
    }
    Ok(SparseCodes { codes, sparsity_target: sparsity, report })
}
