#![allow(dead_code)]

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scatter_superres::linalg::{inner, norm, normalize_columns};
use scatter_superres::{CMat, CVec, C64};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    Array2::from_shape_simple_fn((rows, cols), || C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

pub fn unit_gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let mut m = gaussian(rng, rows, cols);
    normalize_columns(&mut m);
    m
}

pub fn fro(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Codes with `s` distinct random rows per column and moduli in [0.5, 1.5].
pub fn sparse_codes<R: Rng>(rng: &mut R, k: usize, m: usize, s: usize) -> CMat {
    let mut x = Array2::zeros((k, m));
    for i in 0..m {
        for j in rand::seq::index::sample(rng, k, s) {
            x[[j, i]] = C64::from_polar(rng.gen_range(0.5..1.5), rng.gen_range(0.0..std::f64::consts::TAU));
        }
    }
    x
}

/// Copy of `g` with complex Gaussian noise of relative size `sigma` per column,
/// renormalized, each column multiplied by a random unit phase.
pub fn noisy_copy<R: Rng>(rng: &mut R, g: &CMat, sigma: f64) -> CMat {
    let mut out = g.clone();
    for mut col in out.axis_iter_mut(ndarray::Axis(1)) {
        let noise = gaussian(rng, col.len(), 1);
        let nn = noise.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let cn = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        col.scaled_add(C64::new(sigma * cn / nn, 0.0), &noise.column(0));
        let n = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let phase = C64::from_polar(1.0 / n, rng.gen_range(0.0..std::f64::consts::TAU));
        col.mapv_inplace(|z| z * phase);
    }
    out
}

/// Least squares by modified Gram-Schmidt QR, independent of the normal equations.
pub fn qr_least_squares(a: &CMat, b: &CVec) -> CVec {
    let n = a.ncols();
    let mut q = a.clone();
    let mut r = Array2::<C64>::zeros((n, n));
    for j in 0..n {
        for i in 0..j {
            let rij = inner(&q.column(i), &q.column(j));
            r[[i, j]] = rij;
            let qi = q.column(i).to_owned();
            q.column_mut(j).scaled_add(-rij, &qi);
        }
        let nj = norm(&q.column(j));
        r[[j, j]] = C64::new(nj, 0.0);
        q.column_mut(j).mapv_inplace(|z| z / nj);
    }
    let qb: Vec<C64> = (0..n).map(|i| inner(&q.column(i), &b.view())).collect();
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut s = qb[i];
        for j in i + 1..n {
            s -= r[[i, j]] * x[j];
        }
        x[i] = s / r[[i, i]];
    }
    x
}

/// Sparsest-then-smallest-ℓ1 exact representation over all supports of size ≤ 2.
pub fn brute_force(d: &CMat, y: &CVec) -> CVec {
    let k = d.ncols();
    let singles: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
    let pairs: Vec<Vec<usize>> = (0..k).flat_map(|i| (i + 1..k).map(move |j| vec![i, j])).collect();
    for tier in [singles, pairs] {
        let mut best: Option<(f64, CVec)> = None;
        for support in tier {
            let a = d.select(Axis(1), &support);
            let c = qr_least_squares(&a, y);
            let r = y - &a.dot(&c);
            if norm(&r.view()) > 1e-10 * norm(&y.view()) {
                continue;
            }
            let l1: f64 = c.iter().map(|z| z.norm()).sum();
            if best.as_ref().is_none_or(|b| l1 < b.0) {
                let mut x = Array1::zeros(k);
                for (&j, &v) in support.iter().zip(c.iter()) {
                    x[j] = v;
                }
                best = Some((l1, x));
            }
        }
        if let Some((_, x)) = best {
            return x;
        }
    }
    panic!("no exact representation with at most two atoms");
}
