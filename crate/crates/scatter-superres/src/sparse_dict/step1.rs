//! Correlation-based initializer.
//!
//! Each measurement spans an s-dimensional subspace of dictionary columns.
//! Measurements that correlate strongly with it tend to share columns, so the
//! dominant s-dimensional subspace of a measurement and its nearest neighbors
//! approximates the span of its support. Two such subspaces that share exactly
//! one column meet in a line: one principal cosine near 1, the next clearly
//! below. The principal vector along that line is a column estimate. Estimates
//! are merged by collinearity and the most supported clusters are kept.

use ndarray::{s, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dictionary;
use crate::linalg::{adjoint_dot, eigh, normalize_columns};
use crate::{Error, Result, C64, CMat, CVec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Step1Params {
    /// Number of most-correlated measurements grouped with each measurement.
    pub group_size: usize,
    /// Weight of the measurement itself within its group.
    pub self_weight: f64,
    /// A subspace pair is accepted when its first principal cosine exceeds this…
    pub major_cosine: f64,
    /// …and its second stays below this.
    pub minor_cosine: f64,
    /// Collinearity needed to merge a harvested vector into a cluster.
    pub merge_threshold: f64,
}

impl Default for Step1Params {
    fn default() -> Self {
        Step1Params { group_size: 40, self_weight: 2.0, major_cosine: 0.98, minor_cosine: 0.9, merge_threshold: 0.95 }
    }
}

/// Indices of the `t` largest entries of `|Ynᴴ Yn|` in every row, diagonal excluded.
fn nearest_measurements(yn: &CMat, t: usize) -> Vec<Vec<usize>> {
    let m = yn.ncols();
    let block = 256;
    let mut out = Vec::with_capacity(m);
    for start in (0..m).step_by(block) {
        let end = (start + block).min(m);
        let c = adjoint_dot(&yn.slice(s![.., start..end]), &yn.view()).mapv(|z| z.norm());
        for (r, row) in c.axis_iter(Axis(0)).enumerate() {
            let i = start + r;
            let mut idx: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            let t = t.min(idx.len());
            if t == 0 {
                out.push(vec![]);
                continue;
            }
            idx.select_nth_unstable_by(t - 1, |&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            idx.truncate(t);
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            out.push(idx);
        }
    }
    out
}

/// Dominant `dim`-dimensional left singular subspace of the weighted group,
/// through the eigendecomposition of its small Gram matrix.
fn group_subspace(yn: &CMat, i: usize, nb: &[usize], dim: usize, self_weight: f64) -> Result<CMat> {
    let mut cols = Vec::with_capacity(nb.len() + 1);
    cols.push(i);
    cols.extend_from_slice(nb);
    let mut sub = yn.select(Axis(1), &cols);
    sub.column_mut(0).mapv_inplace(|z| z * self_weight);
    let g = adjoint_dot(&sub.view(), &sub.view());
    let (w, v) = eigh(&g)?;
    let n = w.len();
    let dim = dim.min(n);
    let mut q = Array2::zeros((yn.nrows(), dim));
    for d in 0..dim {
        let e = n - 1 - d;
        let sigma = w[e].max(0.0).sqrt();
        if sigma <= 1e-12 {
            break;
        }
        let u = sub.dot(&v.column(e)).mapv(|z| z / sigma);
        q.column_mut(d).assign(&u);
    }
    Ok(q)
}

/// Principal vector shared by two subspaces, if they meet in a single line.
fn shared_direction(qi: &CMat, qj: &CMat, major: f64, minor: f64) -> Result<Option<CVec>> {
    let m = adjoint_dot(&qi.view(), &qj.view());
    let mm = m.dot(&crate::linalg::adjoint(&m.view()));
    let (w, v) = eigh(&mm)?;
    let n = w.len();
    let s0 = w[n - 1].max(0.0).sqrt();
    let s1 = if n > 1 { w[n - 2].max(0.0).sqrt() } else { 0.0 };
    if s0 > major && s1 < minor {
        let d = qi.dot(&v.column(n - 1));
        let nd = crate::linalg::norm(&d.view());
        return Ok(Some(d.mapv(|z| z / nd)));
    }
    Ok(None)
}

/// Greedy streaming merge; returns centroids and cluster sizes.
fn merge(harvest: &[CVec], rows: usize, threshold: f64) -> (Vec<CVec>, Vec<usize>) {
    let mut conj_cents = Array2::<C64>::zeros((0, rows));
    let mut acc: Vec<CVec> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for h in harvest {
        if !acc.is_empty() {
            let c = conj_cents.dot(h);
            let (a, ca) = c.iter().enumerate().fold((0, C64::new(0.0, 0.0)), |best, (j, z)| {
                if z.norm() > best.1.norm() {
                    (j, *z)
                } else {
                    best
                }
            });
            if ca.norm() > threshold {
                let phase = ca.conj() / ca.norm();
                acc[a].scaled_add(phase, h);
                sizes[a] += 1;
                let n = crate::linalg::norm(&acc[a].view());
                let row = acc[a].mapv(|z| z.conj() / n);
                conj_cents.row_mut(a).assign(&row);
                continue;
            }
        }
        acc.push(h.clone());
        sizes.push(1);
        conj_cents.push_row(h.mapv(|z| z.conj()).view()).expect("row length matches");
    }
    let cents = acc.iter().map(crate::linalg::normalized).collect();
    (cents, sizes)
}

/// Unordered normalized dictionary of `k_target` column estimates.
pub fn step1_initialize(data: &CMat, k_target: usize, sparsity: usize, params: &Step1Params) -> Result<Dictionary> {
    if sparsity == 0 || k_target == 0 {
        return Err(Error::InvalidArgument("sparsity and k_target must be positive".into()));
    }
    let keep: Vec<usize> =
        (0..data.ncols()).filter(|&i| data.column(i).iter().any(|z| z.norm() > 0.0)).collect();
    let mut yn = data.select(Axis(1), &keep);
    normalize_columns(&mut yn);
    let m = yn.ncols();
    let nbrs = nearest_measurements(&yn, params.group_size);
    let subspaces = (0..m)
        .into_par_iter()
        .map(|i| group_subspace(&yn, i, &nbrs[i], sparsity, params.self_weight))
        .collect::<Result<Vec<_>>>()?;
    let member: Vec<std::collections::HashSet<usize>> =
        nbrs.iter().map(|n| n.iter().cloned().collect()).collect();
    let harvest: Vec<CVec> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut found = Vec::new();
            for &j in &nbrs[i] {
                if j < i && member[j].contains(&i) {
                    continue;
                }
                if let Some(v) = shared_direction(&subspaces[i], &subspaces[j], params.major_cosine, params.minor_cosine)? {
                    found.push(v);
                }
            }
            Ok(found)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    log::info!("step 1: {} principal vectors harvested", harvest.len());
    let (cents, sizes) = merge(&harvest, yn.nrows(), params.merge_threshold);
    if cents.len() < k_target {
        return Err(Error::UnderRecovery { found: cents.len(), target: k_target });
    }
    let mut order: Vec<usize> = (0..cents.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    log::info!(
        "step 1: {} clusters, kept sizes {}..{}",
        cents.len(),
        sizes[order[0]],
        sizes[order[k_target - 1]]
    );
    let mut cols = Array2::zeros((yn.nrows(), k_target));
    for (c, &o) in order.iter().take(k_target).enumerate() {
        cols.column_mut(c).assign(&cents[o]);
    }
    Ok(Dictionary::normalized(cols))
}
