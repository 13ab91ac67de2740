//! Small complex linear-algebra helpers shared by the estimation modules.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, ShapeBuilder};
use ndarray_linalg::{EigValsh, Eigh, UPLO};

use crate::{Error, Result, C64, CMat, CVec};

/// Conjugate transpose.
pub fn adjoint(a: &ArrayView2<C64>) -> CMat {
    a.t().mapv(|z| z.conj())
}

/// `aᴴ b`.
pub fn adjoint_dot(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> CMat {
    adjoint(a).dot(b)
}

/// `aᴴ a`, exactly Hermitian.
pub fn gram(a: &ArrayView2<C64>) -> CMat {
    let mut g = adjoint_dot(a, a);
    hermitize(&mut g);
    g
}

pub fn hermitize(g: &mut CMat) {
    let n = g.nrows();
    for i in 0..n {
        g[[i, i]] = C64::new(g[[i, i]].re, 0.0);
        for j in (i + 1)..n {
            let v = (g[[i, j]] + g[[j, i]].conj()) * 0.5;
            g[[i, j]] = v;
            g[[j, i]] = v.conj();
        }
    }
}

pub fn inner(a: &ArrayView1<C64>, b: &ArrayView1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(v: &ArrayView1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn column_norms(a: &CMat) -> Vec<f64> {
    a.axis_iter(Axis(1)).map(|c| norm(&c)).collect()
}

/// Scales each column to unit norm. Columns already within 1e-14 of unit norm
/// are left untouched, so a second pass is a bitwise no-op. Zero columns are
/// left as they are.
pub fn normalize_columns(a: &mut CMat) {
    for mut col in a.axis_iter_mut(Axis(1)) {
        let n = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 0.0 && (n - 1.0).abs() > 1e-14 {
            col.mapv_inplace(|z| z / n);
        }
    }
}

pub fn normalized(v: &CVec) -> CVec {
    let n = norm(&v.view());
    v.mapv(|z| z / n)
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
///
/// The matrix is copied to column-major order first: for row-major complex
/// input the LAPACK wrapper returns the eigenvectors of the conjugate matrix.
pub fn eigh(g: &CMat) -> Result<(Array1<f64>, CMat)> {
    let mut f = Array2::zeros(g.raw_dim().f());
    f.assign(g);
    Ok(f.eigh(UPLO::Lower)?)
}

/// Largest eigenvalue of a Hermitian positive semidefinite matrix, i.e. the
/// squared spectral norm of `D` when given `DᴴD`.
pub fn max_eigenvalue(g: &CMat) -> Result<f64> {
    if g.is_empty() {
        return Ok(0.0);
    }
    let w = g.eigvalsh(UPLO::Lower)?;
    Ok(w.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

pub fn all_finite(a: &CMat) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves the small Hermitian positive definite system `g x = b` by Cholesky,
/// returning `None` if the factorization breaks down.
pub fn solve_hpd(g: &CMat, b: &CVec) -> Option<CVec> {
    let n = g.nrows();
    let mut l = Array2::<C64>::zeros((n, n));
    for j in 0..n {
        let mut d = g[[j, j]].re;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = C64::new(d, 0.0);
        for i in (j + 1)..n {
            let mut s = g[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / d;
        }
    }
    let mut y = Array1::<C64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<C64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]].conj() * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Some(x)
}

pub fn check_same_rows(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{what}: {a} rows vs {b}")));
    }
    Ok(())
}
