//! Density-based clustering of column estimates under the collinearity metric
//! `1 - |⟨z, w⟩|`, and consensus columns from phase-aligned cluster means.

use std::collections::VecDeque;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmx::PoolManifest;
use crate::linalg::{adjoint_dot, inner, norm};
use crate::sparse_dict::Dictionary;
use crate::{Error, Result, C64, CMat, CVec};

const UNIT_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct ColumnPool {
    pub vectors: CMat,
    /// Realization each column came from.
    pub source_tag: Vec<usize>,
}

impl ColumnPool {
    pub fn new(vectors: CMat, source_tag: Vec<usize>) -> Result<Self> {
        if source_tag.len() != vectors.ncols() {
            return Err(Error::DimensionMismatch(format!("{} tags for {} columns", source_tag.len(), vectors.ncols())));
        }
        for c in vectors.axis_iter(Axis(1)) {
            let n = norm(&c);
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::NotUnit(n));
            }
        }
        Ok(ColumnPool { vectors, source_tag })
    }

    pub fn from_realizations(parts: &[CMat]) -> Result<Self> {
        let rows = parts.first().map(|p| p.nrows()).unwrap_or(0);
        if parts.iter().any(|p| p.nrows() != rows) {
            return Err(Error::DimensionMismatch("realizations differ in row count".into()));
        }
        let total = parts.iter().map(|p| p.ncols()).sum();
        let mut v = Array2::zeros((rows, total));
        let mut tags = Vec::with_capacity(total);
        let mut at = 0;
        for (r, p) in parts.iter().enumerate() {
            v.slice_mut(s![.., at..at + p.ncols()]).assign(p);
            tags.extend(std::iter::repeat_n(r, p.ncols()));
            at += p.ncols();
        }
        Self::new(v, tags)
    }

    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest = PoolManifest::load(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_realizations(&manifest.read_all(base)?)
    }

    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }
}

pub fn collinearity_distance(z: &CVec, w: &CVec) -> Result<f64> {
    for v in [z, w] {
        let n = norm(&v.view());
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnit(n));
        }
    }
    if z.len() != w.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", z.len(), w.len())));
    }
    Ok((1.0 - inner(&z.view(), &w.view()).norm()).clamp(0.0, 1.0))
}

/// Every pair within `radius`, self included, as sorted `(index, distance)` lists.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    pub radius: f64,
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

impl NeighborTable {
    pub fn build(pool: &ColumnPool, radius: f64) -> Self {
        let p = pool.len();
        let block = 256;
        let starts: Vec<usize> = (0..p).step_by(block).collect();
        let neighbors = starts
            .par_iter()
            .flat_map_iter(|&start| {
                let end = (start + block).min(p);
                let c = adjoint_dot(&pool.vectors.slice(s![.., start..end]), &pool.vectors.view());
                (0..end - start)
                    .map(|r| {
                        let i = start + r;
                        let mut out: Vec<(usize, f64)> = c
                            .row(r)
                            .iter()
                            .enumerate()
                            .filter_map(|(j, z)| {
                                let d = if j == i { 0.0 } else { (1.0 - z.norm()).max(0.0) };
                                (d <= radius).then_some((j, d))
                            })
                            .collect();
                        out.sort_by_key(|a| a.0);
                        out
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        NeighborTable { radius, neighbors }
    }

    fn within(&self, i: usize, eps: f64) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[i].iter().filter(move |a| a.1 <= eps).map(|a| a.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Cluster label per column, -1 for noise.
    pub labels: Vec<i64>,
    pub cluster_count: usize,
    pub core_flags: Vec<bool>,
}

impl ClusterResult {
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![vec![]; self.cluster_count];
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= 0 {
                m[l as usize].push(i);
            }
        }
        m
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l < 0).count()
    }
}

/// DBSCAN with neighborhoods from a precomputed table. A point is a core point
/// when at least `c_min` points (itself included) lie within `eps`. Clusters
/// are grown from cores in ascending index order, so a border point reachable
/// from several clusters joins the lowest label.
pub fn dbscan_table(table: &NeighborTable, eps: f64, c_min: usize) -> Result<ClusterResult> {
    if !(eps > 0.0) || c_min == 0 {
        return Err(Error::InvalidArgument(format!("eps {eps}, c_min {c_min}")));
    }
    if eps > table.radius {
        return Err(Error::InvalidArgument(format!("eps {eps} beyond table radius {}", table.radius)));
    }
    let p = table.neighbors.len();
    let core: Vec<bool> = (0..p).map(|i| table.within(i, eps).count() >= c_min).collect();
    let mut labels = vec![-1i64; p];
    let mut count = 0usize;
    for start in 0..p {
        if labels[start] >= 0 || !core[start] {
            continue;
        }
        let label = count as i64;
        count += 1;
        labels[start] = label;
        let mut queue = VecDeque::from([start]);
        while let Some(q) = queue.pop_front() {
            for n in table.within(q, eps) {
                if labels[n] < 0 {
                    labels[n] = label;
                    if core[n] {
                        queue.push_back(n);
                    }
                }
            }
        }
    }
    Ok(ClusterResult { labels, cluster_count: count, core_flags: core })
}

pub fn dbscan(pool: &ColumnPool, eps: f64, c_min: usize) -> Result<ClusterResult> {
    dbscan_table(&NeighborTable::build(pool, eps), eps, c_min)
}

#[derive(Clone, Debug)]
pub struct OrientedAverage {
    pub vector: CVec,
    /// Members left out because they were orthogonal to the reference.
    pub excluded: Vec<usize>,
}

/// Mean of the members after rotating each onto the phase of the first one.
pub fn oriented_average(pool: &ColumnPool, members: &[usize]) -> Result<OrientedAverage> {
    let &first = members.first().ok_or_else(|| Error::InvalidArgument("empty cluster".into()))?;
    let reference = pool.vectors.column(first);
    let mut acc = Array1::<C64>::zeros(pool.vectors.nrows());
    let mut excluded = vec![];
    for &m in members {
        let z = pool.vectors.column(m);
        let c = inner(&z, &reference);
        if c.norm() < 1e-9 {
            log::warn!("member {m} is orthogonal to its cluster reference; excluded");
            excluded.push(m);
            continue;
        }
        acc.scaled_add(c / c.norm(), &z);
    }
    let n = norm(&acc.view());
    Ok(OrientedAverage { vector: acc.mapv(|z| z / n), excluded })
}

#[derive(Clone, Debug)]
pub struct Consensus {
    pub dictionary: Dictionary,
    /// Size of each kept cluster, in dictionary column order.
    pub sizes: Vec<usize>,
    pub clusters: ClusterResult,
}

/// Oriented averages of the `k_target` largest clusters.
pub fn consensus_dictionary(pool: &ColumnPool, eps: f64, c_min: usize, k_target: usize) -> Result<Consensus> {
    consensus_from_table(pool, &NeighborTable::build(pool, eps), eps, c_min, k_target)
}

pub fn consensus_from_table(
    pool: &ColumnPool,
    table: &NeighborTable,
    eps: f64,
    c_min: usize,
    k_target: usize,
) -> Result<Consensus> {
    let clusters = dbscan_table(table, eps, c_min)?;
    if clusters.cluster_count < k_target {
        return Err(Error::UnderRecovery { found: clusters.cluster_count, target: k_target });
    }
    let members = clusters.members();
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by(|&a, &b| members[b].len().cmp(&members[a].len()).then(a.cmp(&b)));
    let mut cols = Array2::zeros((pool.vectors.nrows(), k_target));
    let mut sizes = vec![];
    for (c, &l) in order.iter().take(k_target).enumerate() {
        cols.column_mut(c).assign(&oriented_average(pool, &members[l])?.vector);
        sizes.push(members[l].len());
    }
    Ok(Consensus { dictionary: Dictionary::normalized(cols), sizes, clusters })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub cluster_count: usize,
    pub noise: usize,
}

/// Cluster count as a function of `eps`, sharing one neighbor table.
pub fn eps_sweep(pool: &ColumnPool, eps_values: &[f64], c_min: usize) -> Result<Vec<SweepPoint>> {
    let radius = eps_values.iter().cloned().fold(0.0, f64::max);
    let table = NeighborTable::build(pool, radius);
    eps_values
        .iter()
        .map(|&eps| {
            let r = dbscan_table(&table, eps, c_min)?;
            Ok(SweepPoint { eps, cluster_count: r.cluster_count, noise: r.noise_count() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: Vec<C64>) -> CVec {
        crate::linalg::normalized(&Array1::from(v))
    }

    #[test]
    fn distance_special_cases() {
        let z = unit(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.3), C64::new(0.0, 1.0)]);
        assert!(collinearity_distance(&z, &z).unwrap().abs() < 1e-15);
        assert!(collinearity_distance(&z, &z.mapv(|a| -a)).unwrap().abs() < 1e-15);
        let rot = z.mapv(|a| a * C64::from_polar(1.0, 0.7));
        assert!(collinearity_distance(&z, &rot).unwrap().abs() < 1e-15);
        let e0 = unit(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let e1 = unit(vec![C64::new(0.0, 0.0), C64::new(0.0, 1.0)]);
        assert_eq!(collinearity_distance(&e0, &e1).unwrap(), 1.0);
        assert!(matches!(collinearity_distance(&e0, &e1.mapv(|a| a * 2.0)), Err(Error::NotUnit(_))));
    }

    #[test]
    fn identical_vectors_form_one_cluster() {
        let z = unit(vec![C64::new(1.0, 2.0), C64::new(3.0, -1.0)]);
        let v = Array2::from_shape_fn((2, 6), |(i, _)| z[i]);
        let pool = ColumnPool::new(v, vec![0; 6]).unwrap();
        let r = dbscan(&pool, 0.01, 6).unwrap();
        assert_eq!(r.cluster_count, 1);
        assert_eq!(r.noise_count(), 0);
    }

    #[test]
    fn opposite_members_average_to_the_member() {
        let z = unit(vec![C64::new(0.3, -1.0), C64::new(2.0, 0.5), C64::new(-0.2, 0.0)]);
        let v = Array2::from_shape_fn((3, 2), |(i, j)| if j == 0 { z[i] } else { -z[i] });
        let pool = ColumnPool::new(v, vec![0, 1]).unwrap();
        let avg = oriented_average(&pool, &[0, 1]).unwrap().vector;
        assert!((avg - &z).iter().all(|a| a.norm() < 1e-15));
        let single = oriented_average(&pool, &[1]).unwrap().vector;
        assert!((single + &z).iter().all(|a| a.norm() < 1e-15));
    }
}
