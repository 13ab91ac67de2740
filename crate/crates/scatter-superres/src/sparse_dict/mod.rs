//! Blind estimation of the unordered sensing matrix from unlabeled sparse data.

mod gelma;
mod refine;
mod step1;

pub use gelma::{gelma_residual_trace, gelma_solve, sparse_code_all, CodingReport, GelmaOutcome, GelmaParams, SparseCodes, Status};
pub use refine::{
    least_squares_dictionary, mod_update, mod_update_retaining, refine_dictionary, RefineOptions, Refinement,
    TraceRow,
};
pub use step1::{step1_initialize, Step1Params};

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{adjoint_dot, norm, normalize_columns};
use crate::{Error, Result, C64, CMat, CVec};

#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    pub columns: CMat,
    pub normalized: bool,
}

impl Dictionary {
    pub fn new(columns: CMat) -> Self {
        Dictionary { columns, normalized: false }
    }

    pub fn normalized(mut columns: CMat) -> Self {
        normalize_columns(&mut columns);
        Dictionary { columns, normalized: true }
    }

    pub fn normalize(&mut self) {
        normalize_columns(&mut self.columns);
        self.normalized = true;
    }

    pub fn rows(&self) -> usize {
        self.columns.nrows()
    }

    pub fn len(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.ncols() == 0
    }

    /// Column `i` of the result is column `order[i]` of `self`.
    pub fn select(&self, order: &[usize]) -> Dictionary {
        Dictionary { columns: self.columns.select(Axis(1), order), normalized: self.normalized }
    }
}

/// Greedy one-to-one matching of estimated columns to true columns by
/// decreasing `|⟨d̂, g⟩|`. Evaluation only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMatch {
    /// For each true column, the index of its matched estimate.
    pub estimate_for_truth: Vec<usize>,
    /// `|⟨d̂, g⟩|` for each true column and its match.
    pub correlations: Vec<f64>,
}

impl ColumnMatch {
    pub fn min_correlation(&self) -> f64 {
        self.correlations.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn mean_correlation(&self) -> f64 {
        self.correlations.iter().sum::<f64>() / self.correlations.len().max(1) as f64
    }
}

pub fn match_columns(estimate: &CMat, truth: &CMat) -> Result<ColumnMatch> {
    if estimate.nrows() != truth.nrows() || estimate.ncols() < truth.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "estimate {:?} vs truth {:?}",
            estimate.dim(),
            truth.dim()
        )));
    }
    let mut e = estimate.clone();
    let mut t = truth.clone();
    normalize_columns(&mut e);
    normalize_columns(&mut t);
    let c = adjoint_dot(&t.view(), &e.view()).mapv(|z| z.norm());
    let (kt, ke) = c.dim();
    let mut pairs: Vec<(usize, usize)> = (0..kt).flat_map(|i| (0..ke).map(move |j| (i, j))).collect();
    pairs.sort_by(|a, b| c[[b.0, b.1]].total_cmp(&c[[a.0, a.1]]).then(a.cmp(b)));
    let mut estimate_for_truth = vec![usize::MAX; kt];
    let mut used = vec![false; ke];
    let mut left = kt;
    for (i, j) in pairs {
        if left == 0 {
            break;
        }
        if estimate_for_truth[i] == usize::MAX && !used[j] {
            estimate_for_truth[i] = j;
            used[j] = true;
            left -= 1;
        }
    }
    let correlations = (0..kt).map(|i| c[[i, estimate_for_truth[i]]]).collect();
    Ok(ColumnMatch { estimate_for_truth, correlations })
}

/// Normalized columns of `truth` after adding circular complex Gaussian noise
/// scaled to `relative · ‖column‖` in every column.
pub fn perturb_columns(truth: &CMat, relative: f64, seed: u64) -> Dictionary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = truth.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let noise: CVec = (0..col.len())
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let scale = relative * norm(&col.view()) / norm(&noise.view());
        col.scaled_add(C64::new(scale, 0.0), &noise);
    }
    Dictionary::normalized(out)
}
