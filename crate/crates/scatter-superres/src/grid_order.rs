//! Recovering the focal-point geometry of unordered dictionary columns.
//!
//! Columns focusing at neighboring pixels are the most correlated ones, so a
//! k-nearest-neighbor graph on `|⟨d_i, d_j⟩|` approximates the pixel lattice.
//! Hop counts in that graph are embedded in the plane by MDS, the embedding is
//! fixed by a few anchor pixels, and columns are finally snapped to pixels.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{Eigh, Inverse, UPLO};
use pathfinding::prelude::{kuhn_munkres_min, Matrix};
use serde::{Deserialize, Serialize};

use crate::linalg::gram;
use crate::sparse_dict::Dictionary;
use crate::wavefield::ImageGrid;
use crate::{Error, Result, CMat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetrization {
    /// Edge if either endpoint selects the other.
    Union,
    /// Edge only if both endpoints select each other.
    Mutual,
    /// Mutual, falling back to union when the mutual graph is disconnected.
    MutualThenUnion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    /// Sorted neighbor lists.
    pub adjacency: Vec<Vec<usize>>,
    pub neighbor_count: usize,
    pub symmetrization: Symmetrization,
}

impl NeighborGraph {
    pub fn from_edges(k: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = vec![vec![]; k];
        for &(a, b) in edges {
            if a != b {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for a in adjacency.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        NeighborGraph { adjacency, neighbor_count: 0, symmetrization: Symmetrization::Union }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency.iter().enumerate().all(|(a, nb)| nb.iter().all(|&b| self.adjacency[b].binary_search(&a).is_ok()))
    }

    pub fn components(&self) -> Vec<Vec<usize>> {
        let k = self.len();
        let mut seen = vec![false; k];
        let mut out = vec![];
        for s in 0..k {
            if seen[s] {
                continue;
            }
            let mut comp = vec![s];
            seen[s] = true;
            let mut q = VecDeque::from([s]);
            while let Some(v) = q.pop_front() {
                for &w in &self.adjacency[v] {
                    if !seen[w] {
                        seen[w] = true;
                        comp.push(w);
                        q.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// The `count` most correlated partners of every column, best first.
pub fn top_neighbors(columns: &CMat, count: usize) -> Vec<Vec<usize>> {
    let c = gram(&columns.view()).mapv(|z| z.norm());
    let k = c.nrows();
    (0..k)
        .map(|i| {
            let mut idx: Vec<usize> = (0..k).filter(|&j| j != i).collect();
            idx.sort_by(|&a, &b| c[[i, b]].total_cmp(&c[[i, a]]).then(a.cmp(&b)));
            idx.truncate(count);
            idx
        })
        .collect()
}

pub fn correlation_graph(dict: &Dictionary, neighbor_count: usize, symmetrization: Symmetrization) -> Result<NeighborGraph> {
    if !dict.normalized {
        return Err(Error::InvalidArgument("dictionary must be normalized".into()));
    }
    let k = dict.len();
    let top = top_neighbors(&dict.columns, neighbor_count);
    let build = |mutual: bool| {
        let mut adjacency = vec![vec![]; k];
        for (i, nb) in top.iter().enumerate() {
            for &j in nb {
                if !mutual || top[j].contains(&i) {
                    adjacency[i].push(j);
                    adjacency[j].push(i);
                }
            }
        }
        for a in adjacency.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        adjacency
    };
    let graph = |adjacency, symmetrization| NeighborGraph { adjacency, neighbor_count, symmetrization };
    let g = match symmetrization {
        Symmetrization::Union => graph(build(false), Symmetrization::Union),
        Symmetrization::Mutual => graph(build(true), Symmetrization::Mutual),
        Symmetrization::MutualThenUnion => {
            let g = graph(build(true), Symmetrization::Mutual);
            if g.components().len() == 1 {
                g
            } else {
                log::warn!("mutual neighbor graph disconnected; using union");
                graph(build(false), Symmetrization::Union)
            }
        }
    };
    let comps = g.components();
    if comps.len() > 1 {
        return Err(Error::Disconnected { components: comps });
    }
    Ok(g)
}

/// All-pairs hop counts.
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicMatrix {
    pub distances: Array2<u32>,
}

impl GeodesicMatrix {
    pub fn to_f64(&self) -> Array2<f64> {
        self.distances.mapv(|d| d as f64)
    }
}

pub fn geodesic_distances(graph: &NeighborGraph) -> Result<GeodesicMatrix> {
    let k = graph.len();
    let mut d = Array2::from_elem((k, k), u32::MAX);
    for s in 0..k {
        d[[s, s]] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            let dv = d[[s, v]];
            for &w in &graph.adjacency[v] {
                if d[[s, w]] == u32::MAX {
                    d[[s, w]] = dv + 1;
                    q.push_back(w);
                }
            }
        }
        if d.row(s).iter().any(|&x| x == u32::MAX) {
            return Err(Error::Disconnected { components: graph.components() });
        }
    }
    Ok(GeodesicMatrix { distances: d })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridEmbedding {
    /// K × 2.
    pub coordinates: Array2<f64>,
    pub aligned: bool,
    /// Leading eigenvalues of the double-centered matrix (classical MDS only).
    pub eigenvalues: Vec<f64>,
}

/// Torgerson MDS of a symmetric distance matrix.
pub fn classical_mds(dist: &Array2<f64>, dims: usize) -> Result<GridEmbedding> {
    let k = dist.nrows();
    if dist.ncols() != k {
        return Err(Error::DimensionMismatch("distance matrix must be square".into()));
    }
    let d2 = dist.mapv(|d| d * d);
    let row_mean = d2.mean_axis(Axis(1)).unwrap_or_else(|| Array1::zeros(k));
    let total = row_mean.mean().unwrap_or(0.0);
    let mut b = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            b[[i, j]] = -0.5 * (d2[[i, j]] - row_mean[i] - row_mean[j] + total);
        }
    }
    let (w, v) = b.eigh(UPLO::Lower)?;
    let scale = w.iter().cloned().fold(0.0, |a: f64, x| a.max(x.abs())).max(1e-300);
    let mut coords = Array2::zeros((k, dims));
    let mut eig = vec![];
    for d in 0..dims {
        if d >= k || w[k - 1 - d] < -1e-9 * scale {
            return Err(Error::MdsDegenerate { dims, found: d });
        }
        let e = k - 1 - d;
        let lam = w[e].max(0.0);
        let mut col = v.column(e).to_owned();
        let pivot = col.iter().cloned().fold(0.0, |a: f64, x| if x.abs() > a.abs() { x } else { a });
        if pivot < 0.0 {
            col.mapv_inplace(|x| -x);
        }
        coords.column_mut(d).assign(&col.mapv(|x| x * lam.sqrt()));
        eig.push(lam);
    }
    Ok(GridEmbedding { coordinates: coords, aligned: false, eigenvalues: eig })
}

fn pairwise(x: &Array2<f64>) -> Array2<f64> {
    let k = x.nrows();
    Array2::from_shape_fn((k, k), |(i, j)| {
        x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    })
}

/// Weighted stress `Σ w_ij (|x_i - x_j| - d_ij)²` with `w_ij = d_ij^-2`.
pub fn weighted_stress(dist: &Array2<f64>, x: &Array2<f64>) -> f64 {
    let e = pairwise(x);
    let k = dist.nrows();
    let mut s = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            if dist[[i, j]] > 0.0 {
                s += (e[[i, j]] - dist[[i, j]]).powi(2) / dist[[i, j]].powi(2);
            }
        }
    }
    s
}

/// Stress majorization (Guttman transform) with weights `d_ij^-2`, started
/// from `init`.
pub fn smacof(dist: &Array2<f64>, init: &Array2<f64>, max_iters: usize, tol: f64) -> Result<Array2<f64>> {
    let k = dist.nrows();
    if k < 2 {
        return Ok(init.clone());
    }
    let w = Array2::from_shape_fn((k, k), |(i, j)| if i != j && dist[[i, j]] > 0.0 { dist[[i, j]].powi(-2) } else { 0.0 });
    let mut v = -w.clone();
    for i in 0..k {
        v[[i, i]] = w.row(i).sum();
    }
    let n2 = (k * k) as f64;
    let vp = (v + 1.0).inv()? - 1.0 / n2;
    let mut x = init.clone();
    let mut stress = weighted_stress(dist, &x);
    for _ in 0..max_iters {
        let e = pairwise(&x);
        let mut b = Array2::zeros((k, k));
        for i in 0..k {
            for j in 0..k {
                if i != j && e[[i, j]] > 1e-9 {
                    b[[i, j]] = -w[[i, j]] * dist[[i, j]] / e[[i, j]];
                }
            }
            b[[i, i]] = -b.row(i).sum();
        }
        x = vp.dot(&b.dot(&x));
        let next = weighted_stress(dist, &x);
        let done = (stress - next).abs() <= tol * stress.max(1e-300);
        stress = next;
        if done {
            break;
        }
    }
    Ok(x)
}

/// Similarity transform `p ↦ s·R·p + t` (optionally preceded by a reflection
/// of the second coordinate).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: [[f64; 2]; 2],
    pub translation: [f64; 2],
    pub reflected: bool,
}

impl Similarity {
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let q = if self.reflected { [p[0], -p[1]] } else { p };
        let r = &self.rotation;
        [
            self.scale * (r[0][0] * q[0] + r[0][1] * q[1]) + self.translation[0],
            self.scale * (r[1][0] * q[0] + r[1][1] * q[1]) + self.translation[1],
        ]
    }
}

#[derive(Clone, Debug)]
pub struct Alignment {
    pub embedding: GridEmbedding,
    pub transform: Similarity,
    /// Distance between each mapped anchor and its target.
    pub residuals: Vec<f64>,
}

/// Best proper similarity mapping `p` onto `q` (2-D Umeyama).
fn umeyama(p: &[[f64; 2]], q: &[[f64; 2]], reflected: bool) -> Similarity {
    let n = p.len() as f64;
    let p: Vec<[f64; 2]> = p.iter().map(|a| if reflected { [a[0], -a[1]] } else { *a }).collect();
    let mean = |v: &[[f64; 2]]| [v.iter().map(|a| a[0]).sum::<f64>() / n, v.iter().map(|a| a[1]).sum::<f64>() / n];
    let (pm, qm) = (mean(&p), mean(q));
    // In 2-D the optimal rotation angle and scale have a closed form through
    // the cross-covariance entries.
    let (mut a, mut b, mut var) = (0.0, 0.0, 0.0);
    for (x, y) in p.iter().zip(q) {
        let (px, py) = (x[0] - pm[0], x[1] - pm[1]);
        let (qx, qy) = (y[0] - qm[0], y[1] - qm[1]);
        a += px * qx + py * qy;
        b += px * qy - py * qx;
        var += px * px + py * py;
    }
    let h = (a * a + b * b).sqrt();
    let (c, s) = if h > 0.0 { (a / h, b / h) } else { (1.0, 0.0) };
    let scale = if var > 0.0 { h / var } else { 0.0 };
    let rotation = [[c, -s], [s, c]];
    let translation = [
        qm[0] - scale * (c * pm[0] - s * pm[1]),
        qm[1] - scale * (s * pm[0] + c * pm[1]),
    ];
    Similarity { scale, rotation, translation, reflected }
}

pub fn align_with_anchors(embedding: &GridEmbedding, anchors: &[(usize, [f64; 2])], allow_reflection: bool) -> Result<Alignment> {
    if anchors.len() < 3 {
        return Err(Error::InvalidArgument("at least 3 anchors are required".into()));
    }
    let q: Vec<[f64; 2]> = anchors.iter().map(|a| a.1).collect();
    let n = q.len() as f64;
    let qm = [q.iter().map(|a| a[0]).sum::<f64>() / n, q.iter().map(|a| a[1]).sum::<f64>() / n];
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for a in &q {
        let (x, y) = (a[0] - qm[0], a[1] - qm[1]);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let det = sxx * syy - sxy * sxy;
    if !(det > 1e-12 * (sxx + syy).powi(2)) {
        return Err(Error::CollinearAnchors);
    }
    let coords = &embedding.coordinates;
    if coords.ncols() != 2 {
        return Err(Error::DimensionMismatch("alignment needs a 2-D embedding".into()));
    }
    let p: Vec<[f64; 2]> = anchors
        .iter()
        .map(|a| {
            if a.0 >= coords.nrows() {
                Err(Error::InvalidArgument(format!("anchor index {} out of range", a.0)))
            } else {
                Ok([coords[[a.0, 0]], coords[[a.0, 1]]])
            }
        })
        .collect::<Result<_>>()?;
    let residuals_of = |t: &Similarity| -> Vec<f64> {
        p.iter()
            .zip(&q)
            .map(|(a, b)| {
                let m = t.apply(*a);
                ((m[0] - b[0]).powi(2) + (m[1] - b[1]).powi(2)).sqrt()
            })
            .collect()
    };
    let mut best = umeyama(&p, &q, false);
    let mut best_res = residuals_of(&best);
    if allow_reflection {
        let t = umeyama(&p, &q, true);
        let r = residuals_of(&t);
        if r.iter().map(|x| x * x).sum::<f64>() < best_res.iter().map(|x| x * x).sum::<f64>() {
            best = t;
            best_res = r;
        }
    }
    let mut out = Array2::zeros(coords.raw_dim());
    for i in 0..coords.nrows() {
        let m = best.apply([coords[[i, 0]], coords[[i, 1]]]);
        out[[i, 0]] = m[0];
        out[[i, 1]] = m[1];
    }
    Ok(Alignment {
        embedding: GridEmbedding { coordinates: out, aligned: true, eigenvalues: embedding.eigenvalues.clone() },
        transform: best,
        residuals: best_res,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAssignment {
    /// Estimated column placed at each grid point.
    pub column_for_grid: Vec<usize>,
    /// Grid point assigned to each estimated column.
    pub grid_for_column: Vec<usize>,
    /// Mean displacement in grid cells.
    pub mean_displacement: f64,
    pub low_confidence: bool,
}

/// Minimum total squared displacement assignment of embedded points (meters)
/// to grid points, with displacements measured in grid cells.
pub fn assign_to_grid(aligned: &GridEmbedding, grid: &ImageGrid) -> Result<GridAssignment> {
    let k = grid.len();
    if aligned.coordinates.nrows() != k {
        return Err(Error::DimensionMismatch(format!("{} points for {k} pixels", aligned.coordinates.nrows())));
    }
    let cell = |i: usize, g: usize| {
        let p = &grid.points[g];
        let dx = (aligned.coordinates[[i, 0]] - p[0]) / grid.spacing_cross;
        let dz = (aligned.coordinates[[i, 1]] - p[1]) / grid.spacing_range;
        dx * dx + dz * dz
    };
    let mut weights = Matrix::new(k, k, 0i64);
    for i in 0..k {
        for g in 0..k {
            weights[(i, g)] = (cell(i, g) * 1e6).round().min(1e15) as i64;
        }
    }
    let grid_for_column = if k == 0 { vec![] } else { kuhn_munkres_min(&weights).1 };
    let mut column_for_grid = vec![0; k];
    for (i, &g) in grid_for_column.iter().enumerate() {
        column_for_grid[g] = i;
    }
    let mean_displacement = (0..k).map(|i| cell(i, grid_for_column[i]).sqrt()).sum::<f64>() / k.max(1) as f64;
    let low_confidence = mean_displacement > 1.0;
    if low_confidence {
        log::warn!("grid assignment mean displacement {mean_displacement:.2} cells");
    }
    Ok(GridAssignment { column_for_grid, grid_for_column, mean_displacement, low_confidence })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrderParams {
    pub neighbor_count: usize,
    pub symmetrization: Symmetrization,
    pub stress_refinement: bool,
    pub stress_iters: usize,
    pub allow_reflection: bool,
}

impl Default for OrderParams {
    fn default() -> Self {
        OrderParams {
            neighbor_count: 4,
            symmetrization: Symmetrization::MutualThenUnion,
            stress_refinement: true,
            stress_iters: 300,
            allow_reflection: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ordering {
    pub assignment: GridAssignment,
    /// Aligned embedding in meters.
    pub embedding: GridEmbedding,
    pub anchor_residuals: Vec<f64>,
    pub graph: NeighborGraph,
}

/// Embedding in lattice-index units (cross, range) of the anchors, then
/// mapped to meters. Hop counts are isotropic in index units even when the
/// pixel spacing is not.
pub fn order_dictionary(dict: &Dictionary, grid: &ImageGrid, anchors: &[(usize, usize)], params: &OrderParams) -> Result<Ordering> {
    let graph = correlation_graph(dict, params.neighbor_count, params.symmetrization)?;
    let hops = geodesic_distances(&graph)?.to_f64();
    let mut emb = classical_mds(&hops, 2)?;
    if params.stress_refinement {
        emb.coordinates = smacof(&hops, &emb.coordinates, params.stress_iters, 1e-10)?;
    }
    let targets: Vec<(usize, [f64; 2])> = anchors
        .iter()
        .map(|&(col, pix)| {
            let (c, r) = grid.lattice(pix);
            (col, [c as f64, r as f64])
        })
        .collect();
    let al = align_with_anchors(&emb, &targets, params.allow_reflection)?;
    let origin = grid.points[0];
    let meters = Array2::from_shape_fn(al.embedding.coordinates.raw_dim(), |(i, a)| {
        let v = al.embedding.coordinates[[i, a]];
        if a == 0 {
            origin[0] + v * grid.spacing_cross
        } else {
            origin[1] + v * grid.spacing_range
        }
    });
    let embedding = GridEmbedding { coordinates: meters, aligned: true, eigenvalues: emb.eigenvalues };
    let assignment = assign_to_grid(&embedding, grid)?;
    Ok(Ordering { assignment, embedding, anchor_residuals: al.residuals, graph })
}

/// For each anchor Green's vector, the dictionary column most correlated with it.
pub fn identify_anchors(dict: &Dictionary, anchor_vectors: &CMat) -> Vec<usize> {
    let c = crate::linalg::adjoint_dot(&anchor_vectors.view(), &dict.columns.view()).mapv(|z| z.norm());
    c.axis_iter(Axis(0))
        .map(|row| row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (j, &v)| if v > b.1 { (j, v) } else { b }).0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> NeighborGraph {
        let e: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        NeighborGraph::from_edges(n, &e)
    }

    #[test]
    fn path_and_complete_graph_hops() {
        let d = geodesic_distances(&path(3)).unwrap();
        assert_eq!(d.distances[[0, 2]], 2);
        let e: Vec<(usize, usize)> = (0..5).flat_map(|a| (0..5).map(move |b| (a, b))).collect();
        let d = geodesic_distances(&NeighborGraph::from_edges(5, &e)).unwrap();
        assert!(d.distances.indexed_iter().all(|((i, j), &v)| v == if i == j { 0 } else { 1 }));
    }

    #[test]
    fn disconnected_graph_is_an_error() {
        let g = NeighborGraph::from_edges(4, &[(0, 1), (2, 3)]);
        match geodesic_distances(&g) {
            Err(Error::Disconnected { components }) => assert_eq!(components, vec![vec![0, 1], vec![2, 3]]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equilateral_triangle() {
        let d = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let e = classical_mds(&d, 2).unwrap();
        let p = pairwise(&e.coordinates);
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[[i, j]] - d[[i, j]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn collinear_points_embed_on_a_line() {
        let d = Array2::from_shape_fn((4, 4), |(i, j)| (i as f64 - j as f64).abs());
        let e = classical_mds(&d, 2).unwrap();
        let first = e.coordinates.column(0);
        let spread = first.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - first.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((spread - 3.0).abs() < 1e-10);
        assert!(e.coordinates.column(1).iter().all(|y| y.abs() <= 1e-8 * spread));
        assert!(matches!(classical_mds(&d, 5), Err(Error::MdsDegenerate { .. })));
    }

    #[test]
    fn anchors_must_not_be_collinear() {
        let emb = GridEmbedding { coordinates: Array2::zeros((3, 2)), aligned: false, eigenvalues: vec![] };
        let a = [(0, [0.0, 0.0]), (1, [1.0, 1.0]), (2, [2.0, 2.0])];
        assert!(matches!(align_with_anchors(&emb, &a, true), Err(Error::CollinearAnchors)));
    }

    #[test]
    fn rotated_scaled_embedding_is_undone() {
        let truth = [[0.0, 0.0], [3.0, 0.0], [0.0, 2.0], [1.5, 1.0]];
        let emb = Array2::from_shape_fn((4, 2), |(i, a)| {
            let p = truth[i];
            if a == 0 {
                -2.0 * p[1] + 5.0
            } else {
                2.0 * p[0] - 1.0
            }
        });
        let emb = GridEmbedding { coordinates: emb, aligned: false, eigenvalues: vec![] };
        let anchors: Vec<(usize, [f64; 2])> = (0..3).map(|i| (i, truth[i])).collect();
        let al = align_with_anchors(&emb, &anchors, false).unwrap();
        assert!(al.residuals.iter().all(|r| *r <= 1e-10));
        assert!((al.embedding.coordinates[[3, 0]] - 1.5).abs() < 1e-10);
        assert!((al.embedding.coordinates[[3, 1]] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn swapped_points_give_a_transposition() {
        let grid = ImageGrid::centered((0.0, 0.0), 3, 3, 1.0, 2.0);
        let mut c = Array2::from_shape_fn((9, 2), |(i, a)| grid.points[i][a]);
        for a in 0..2 {
            c.swap([2, a], [6, a]);
        }
        let emb = GridEmbedding { coordinates: c, aligned: true, eigenvalues: vec![] };
        let asg = assign_to_grid(&emb, &grid).unwrap();
        assert_eq!(asg.column_for_grid, vec![0, 1, 6, 3, 4, 5, 2, 7, 8]);
        assert!(asg.mean_displacement < 1e-12);
    }
}
