//! Best subset selection by exhaustive enumeration, the relaxed lasso, and
//! their search degrees of freedom.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use super::lasso::{fit_lasso_mm, LassoOptions};
use crate::data::{DataSet, DfEstimate, FitOutput};
use crate::empirical::{run_experiment, DfExperiment, Procedure};
use crate::error::{DfError, Result};

/// Largest p enumerated without an explicit override.
pub const SUBSET_GUARD: usize = 20;

#[derive(Debug, Clone)]
pub struct SubsetFit {
    pub active: Vec<usize>,
    /// Zero off the active set.
    pub beta: DVector<f64>,
    pub fitted: DVector<f64>,
    pub rss: f64,
}

/// Least squares on the columns in `active`; coefficients off the set are
/// exactly zero. Rank-deficient subsets use the minimum-norm solution.
pub fn least_squares_on(data: &DataSet, active: &[usize]) -> Result<SubsetFit> {
    let p = data.p();
    if active.iter().any(|&j| j >= p) {
        return Err(DfError::invalid("active index out of range"));
    }
    let mut beta = DVector::zeros(p);
    if !active.is_empty() {
        let xa = data.x().select_columns(active.iter());
        let coef = xa
            .svd(true, true)
            .solve(data.y(), 1e-12)
            .map_err(|e| DfError::invalid(format!("least squares failed: {e}")))?;
        for (k, &j) in active.iter().enumerate() {
            beta[j] = coef[k];
        }
    }
    let fitted = data.x() * &beta;
    let rss = (data.y() - &fitted).norm_squared();
    Ok(SubsetFit {
        active: active.to_vec(),
        beta,
        fitted,
        rss,
    })
}

/// Subsets of {0..p} ordered by size, then lexicographically.
fn subsets_by_size(p: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..=p).flat_map(move |k| Combinations::new(p, k))
}

struct Combinations {
    p: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(p: usize, k: usize) -> Self {
        Combinations {
            p,
            idx: (0..k).collect(),
            done: k > p,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;
    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        // advance to the next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.p - k + i {
                self.idx[i] += 1;
                for t in i + 1..k {
                    self.idx[t] = self.idx[t - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// RSS of the least-squares fit on `cols` from the Gram matrix, via
/// Cholesky; falls back to an SVD solve for rank-deficient subsets.
fn subset_rss(gram: &DMatrix<f64>, xty: &DVector<f64>, yty: f64, cols: &[usize]) -> f64 {
    if cols.is_empty() {
        return yty;
    }
    let k = cols.len();
    let g = DMatrix::from_fn(k, k, |r, c| gram[(cols[r], cols[c])]);
    let b = DVector::from_fn(k, |r, _| xty[cols[r]]);
    let coef = match g.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => g.svd(true, true).solve(&b, 1e-12).unwrap_or_else(|_| DVector::zeros(k)),
    };
    (yty - coef.dot(&b)).max(0.0)
}

/// argmin over subsets A of RSS(A) + lambda0 |A|; ties go to the smaller
/// subset, then to the lexicographically first.
pub fn fit_best_subset(data: &DataSet, lambda0: f64, override_guard: bool) -> Result<SubsetFit> {
    if !(lambda0 >= 0.0) || !lambda0.is_finite() {
        return Err(DfError::invalid(format!(
            "l0 penalty must be finite and >= 0, got {lambda0}"
        )));
    }
    let p = data.p();
    if p > SUBSET_GUARD && !override_guard {
        return Err(DfError::SizeGuard { p, limit: SUBSET_GUARD });
    }
    let gram = data.x().transpose() * data.x();
    let xty = data.x().transpose() * data.y();
    let yty = data.y().norm_squared();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for cols in subsets_by_size(p) {
        let obj = subset_rss(&gram, &xty, yty, &cols) + lambda0 * cols.len() as f64;
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, cols));
        }
    }
    let (_, active) = best.expect("the empty subset is always enumerated");
    least_squares_on(data, &active)
}

/// Least squares on the variables the lasso selects at `lambda`.
pub fn fit_relaxed_lasso(data: &DataSet, lambda: f64) -> Result<SubsetFit> {
    let fit = fit_lasso_mm(data, lambda, &LassoOptions::default())?;
    least_squares_on(data, &fit.active())
}

fn rank(x: &DMatrix<f64>, cols: &[usize]) -> usize {
    if cols.is_empty() {
        return 0;
    }
    let sv = x.select_columns(cols.iter()).singular_values();
    let top = sv.max();
    sv.iter().filter(|&&s| s > 1e-10 * top).count()
}

fn subset_output(data: &DataSet, fit: SubsetFit) -> FitOutput {
    let r = rank(data.x(), &fit.active);
    // the refit is the projection onto span(X_A), whose trace is its rank
    FitOutput::new(fit.fitted)
        .with_meta("trace", r as f64)
        .with_meta("active", fit.active.len() as f64)
}

pub struct BestSubset {
    pub lambda0: f64,
    pub override_guard: bool,
}

impl Procedure for BestSubset {
    fn name(&self) -> String {
        "best_subset".into()
    }
    fn params(&self) -> serde_json::Value {
        json!({ "lambda0": self.lambda0 })
    }
    fn fit(&self, data: &DataSet) -> Result<FitOutput> {
        Ok(subset_output(
            data,
            fit_best_subset(data, self.lambda0, self.override_guard)?,
        ))
    }
}

pub struct RelaxedLasso {
    pub lambda: f64,
}

impl Procedure for RelaxedLasso {
    fn name(&self) -> String {
        "relaxed_lasso".into()
    }
    fn params(&self) -> serde_json::Value {
        json!({ "lambda": self.lambda })
    }
    fn fit(&self, data: &DataSet) -> Result<FitOutput> {
        Ok(subset_output(data, fit_relaxed_lasso(data, self.lambda)?))
    }
}

/// df, sdf = df - E rank(X_A), and msdf = df - E trace S(y) on shared draws.
#[derive(Debug, Clone, Serialize)]
pub struct SearchDf {
    pub df: DfEstimate,
    pub sdf: DfEstimate,
    pub msdf: DfEstimate,
}

/// Search degrees of freedom of best subset selection on the experiment's
/// design; its procedure field is replaced by best subset at `lambda0`.
pub fn sdf_best_subset(exp: &DfExperiment<'_>, lambda0: f64) -> Result<SearchDf> {
    let proc = BestSubset {
        lambda0,
        override_guard: false,
    };
    let exp = DfExperiment {
        procedure: &proc,
        ..exp.clone()
    };
    let size = |f: &FitOutput| f.meta_value("active").unwrap_or(f64::NAN);
    let trace = |f: &FitOutput| f.meta_value("trace").unwrap_or(f64::NAN);
    let mut run = run_experiment(&exp, &[&size, &trace])?;
    let msdf = run.gaps.remove(1);
    let sdf = run.gaps.remove(0);
    Ok(SearchDf { df: run.df, sdf, msdf })
}
