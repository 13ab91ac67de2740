use ndarray::{Array2, Axis};
use ndarray_linalg::{FactorizeInto, InverseInto, ReciprocalConditionNum};
use serde::{Deserialize, Serialize};

use super::gelma::{sparse_code_all, GelmaParams, SparseCodes};
use super::{match_columns, Dictionary};
use crate::linalg::{frobenius, gram, hermitize, normalize_columns};
use crate::{Error, Result, C64, CMat};

const MAX_RCOND_INV: f64 = 1e12;

/// Nonzero pattern of each code column.
fn code_supports(x: &CMat) -> Vec<Vec<(usize, C64)>> {
    x.axis_iter(Axis(1))
        .map(|c| c.iter().enumerate().filter(|(_, z)| z.norm() > 0.0).map(|(j, z)| (j, *z)).collect())
        .collect()
}

/// `X Xᴴ` and `Y Xᴴ` restricted to the rows in `rows`, accumulated over the
/// sparse code columns.
fn normal_equations(x: &CMat, y: &CMat, rows: &[usize]) -> (CMat, CMat) {
    let mut slot = vec![usize::MAX; x.nrows()];
    for (p, &r) in rows.iter().enumerate() {
        slot[r] = p;
    }
    let n = rows.len();
    let mut a = Array2::<C64>::zeros((n, n));
    let mut c = Array2::<C64>::zeros((y.nrows(), n));
    for (i, sup) in code_supports(x).iter().enumerate() {
        let yi = y.column(i);
        for &(j, xj) in sup {
            let pj = slot[j];
            if pj == usize::MAX {
                continue;
            }
            for &(l, xl) in sup {
                let pl = slot[l];
                if pl != usize::MAX {
                    a[[pj, pl]] += xj * xl.conj();
                }
            }
            c.column_mut(pj).scaled_add(xj.conj(), &yi);
        }
    }
    hermitize(&mut a);
    (a, c)
}

fn used_rows(x: &CMat) -> (Vec<usize>, Vec<usize>) {
    let mut used = vec![];
    let mut dead = vec![];
    for (j, row) in x.axis_iter(Axis(0)).enumerate() {
        if row.iter().any(|z| z.norm() > 0.0) {
            used.push(j);
        } else {
            dead.push(j);
        }
    }
    (used, dead)
}

fn solve_rows(x: &CMat, y: &CMat, rows: &[usize], dead: &[usize]) -> Result<CMat> {
    let (a, c) = normal_equations(x, y, rows);
    let lu = a.factorize_into()?;
    let rc = lu.rcond()?;
    if !(rc * MAX_RCOND_INV >= 1.0) {
        return Err(Error::RankDeficient { dead: dead.to_vec() });
    }
    let mut inv = lu.inv_into()?;
    hermitize(&mut inv);
    Ok(c.dot(&inv))
}

/// Unnormalized minimizer `Y Xᴴ (X Xᴴ)⁻¹` of `‖DX - Y‖_F`.
pub fn least_squares_dictionary(codes: &CMat, data: &CMat) -> Result<CMat> {
    if codes.ncols() != data.ncols() {
        return Err(Error::DimensionMismatch(format!("{} codes vs {} measurements", codes.ncols(), data.ncols())));
    }
    let (used, dead) = used_rows(codes);
    if !dead.is_empty() {
        return Err(Error::RankDeficient { dead });
    }
    solve_rows(codes, data, &used, &dead)
}

/// Least-squares dictionary update followed by column normalization.
pub fn mod_update(codes: &SparseCodes, data: &CMat) -> Result<Dictionary> {
    Ok(Dictionary::normalized(least_squares_dictionary(&codes.codes, data)?))
}

/// As [`mod_update`], but atoms no code selects keep their previous value.
/// Also returns the unnormalized least-squares columns.
pub fn mod_update_retaining(codes: &CMat, data: &CMat, previous: &Dictionary) -> Result<(Dictionary, CMat)> {
    let (used, dead) = used_rows(codes);
    let mut raw = previous.columns.clone();
    if !used.is_empty() {
        let d = solve_rows(codes, data, &used, &dead)?;
        for (p, &j) in used.iter().enumerate() {
            raw.column_mut(j).assign(&d.column(p));
        }
    }
    let mut cols = raw.clone();
    normalize_columns(&mut cols);
    Ok((Dictionary { columns: cols, normalized: true }, raw))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineOptions {
    pub outer_iters: usize,
    pub sparsity: usize,
    /// Replace unused atoms and near-duplicate atoms after each update.
    pub replace_degenerate: bool,
    pub duplicate_threshold: f64,
    /// Stop once the relative Frobenius residual falls below this.
    pub stop_residual: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            outer_iters: 20,
            sparsity: 3,
            replace_degenerate: true,
            duplicate_threshold: 0.97,
            stop_residual: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub frobenius_residual: f64,
    pub mean_column_correlation: Option<f64>,
    pub replaced: usize,
}

#[derive(Clone, Debug)]
pub struct Refinement {
    pub dictionary: Dictionary,
    pub codes: SparseCodes,
    pub trace: Vec<TraceRow>,
}

impl Refinement {
    pub fn residuals(&self) -> Vec<f64> {
        self.trace.iter().map(|t| t.frobenius_residual).collect()
    }
}

fn sparse_product(d: &CMat, x: &CMat) -> CMat {
    let mut out = Array2::zeros((d.nrows(), x.ncols()));
    for (i, sup) in code_supports(x).iter().enumerate() {
        let mut col = out.column_mut(i);
        for &(j, xj) in sup {
            col.scaled_add(xj, &d.column(j));
        }
    }
    out
}

/// Atoms to re-seed: unused ones, and the less used member of every pair whose
/// correlation exceeds `threshold`.
fn degenerate_atoms(dict: &Dictionary, usage: &[usize], threshold: f64) -> Vec<usize> {
    let k = dict.len();
    let c = gram(&dict.columns.view()).mapv(|z| z.norm());
    let mut bad = vec![false; k];
    for a in 0..k {
        if usage[a] == 0 {
            bad[a] = true;
        }
    }
    for a in 0..k {
        for b in (a + 1)..k {
            if c[[a, b]] > threshold && !bad[a] && !bad[b] {
                let loser = if usage[b] < usage[a] || (usage[b] == usage[a] && b > a) { b } else { a };
                bad[loser] = true;
            }
        }
    }
    (0..k).filter(|&a| bad[a]).collect()
}

/// Alternates sparse coding and least-squares dictionary updates from `init`.
pub fn refine_dictionary(
    init: &Dictionary,
    data: &CMat,
    params: &GelmaParams,
    opts: &RefineOptions,
    truth: Option<&CMat>,
) -> Result<Refinement> {
    if !init.normalized {
        return Err(Error::InvalidArgument("initial dictionary must be normalized".into()));
    }
    if opts.outer_iters == 0 {
        return Err(Error::InvalidArgument("outer_iters must be at least 1".into()));
    }
    let ynorm = frobenius(data);
    let mut dict = init.clone();
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut last_codes = None;
    for it in 0..opts.outer_iters {
        let codes = sparse_code_all(&dict, data, params, opts.sparsity)?;
        let (next, raw) = mod_update_retaining(&codes.codes, data, &dict)?;
        let fit = sparse_product(&raw, &codes.codes);
        let resid = data - &fit;
        let rel = if ynorm > 0.0 { frobenius(&resid) / ynorm } else { 0.0 };
        dict = next;
        let mut replaced = 0;
        if opts.replace_degenerate && rel > opts.stop_residual {
            let bad = degenerate_atoms(&dict, &codes.usage(), opts.duplicate_threshold);
            if !bad.is_empty() {
                let norms: Vec<f64> = resid.axis_iter(Axis(1)).map(|c| c.iter().map(|z| z.norm_sqr()).sum()).collect();
                let mut worst: Vec<usize> = (0..norms.len()).filter(|&i| norms[i] > 0.0).collect();
                worst.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
                for (&atom, &i) in bad.iter().zip(worst.iter()) {
                    let r = resid.column(i);
                    let n = norms[i].sqrt();
                    dict.columns.column_mut(atom).assign(&r.mapv(|z| z / n));
                    replaced += 1;
                }
            }
        }
        let mean = match truth {
            Some(t) => Some(match_columns(&dict.columns, t)?.mean_correlation()),
            None => None,
        };
        log::info!("refine {it}: residual {rel:.3e}, replaced {replaced}");
        trace.push(TraceRow { iteration: it, frobenius_residual: rel, mean_column_correlation: mean, replaced });
        last_codes = Some(codes);
        if diverging(&trace) {
            return Err(Error::Diverged { iteration: it, trace: trace.iter().map(|t| t.frobenius_residual).collect() });
        }
        if rel <= opts.stop_residual {
            break;
        }
    }
    Ok(Refinement { dictionary: dict, codes: last_codes.expect("at least one iteration"), trace })
}

/// Residual grew at each of the last three iterations and doubled overall.
fn diverging(trace: &[TraceRow]) -> bool {
    let n = trace.len();
    if n < 4 {
        return false;
    }
    let r: Vec<f64> = trace[n - 4..].iter().map(|t| t.frobenius_residual).collect();
    r[1] > r[0] && r[2] > r[1] && r[3] > r[2] && r[3] > 2.0 * r[0]
}
