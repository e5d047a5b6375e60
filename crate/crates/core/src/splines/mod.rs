//! Cubic regression splines, smoothing splines and monotone splines.
//!
//! An unconstrained fit minimizes `||y - B g||^2 + lambda g' Omega g` and is
//! the linear smoother `B (B'B + lambda Omega)^{-1} B'`. The monotone fit adds
//! `g_1 <= ... <= g_J`; with `lambda = 0` it is again a projection, onto the
//! span of the basis columns merged over each run of tied coefficients, so
//! its df is the expected number of distinct coefficients.

mod basis;
mod nnls;

use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

pub use basis::{build_basis, build_penalty, BSplineBasis, BasisMatrices, Knots, CUBIC_ORDER};
pub use nnls::{nnls, nnls_gram, NnlsSolution};

use crate::data::{child_seed, uniform_design, DataSet, DfEstimate, FitOutput, SmootherMatrix};
use crate::empirical::{run_experiment, DfExperiment, Procedure};
use crate::error::{DfError, Result};
use crate::linear::RANK_TOL;

/// Relative tolerance used to decide that neighbouring coefficients are tied.
pub const UNIQUE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineSpec {
    pub knots: Knots,
    pub lambda: f64,
}

impl SplineSpec {
    pub fn new(knots: Knots, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(DfError::invalid(format!(
                "spline penalty must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(SplineSpec { knots, lambda })
    }

    /// Regression spline with `j` basis functions and no penalty.
    pub fn regression(j: usize) -> Self {
        SplineSpec {
            knots: Knots::Count(j),
            lambda: 0.0,
        }
    }

    /// Smoothing spline: knots at every distinct x.
    pub fn smoothing(lambda: f64) -> Result<Self> {
        Self::new(Knots::AllUnique, lambda)
    }

    fn params(&self) -> serde_json::Value {
        match self.knots {
            Knots::Count(j) => json!({ "J": j, "lambda": self.lambda }),
            Knots::AllUnique => json!({ "knots": "all", "lambda": self.lambda }),
        }
    }
}

fn abscissae(data: &DataSet) -> Result<Vec<f64>> {
    if data.p() != 1 {
        return Err(DfError::invalid(format!(
            "splines need a single predictor, got {}",
            data.p()
        )));
    }
    Ok(data.x().column(0).iter().copied().collect())
}

/// Basis, evaluation matrix and penalty for one abscissa vector.
#[derive(Debug, Clone)]
pub struct SplineDesign {
    x: Vec<f64>,
    pub basis: BSplineBasis,
    pub b: DMatrix<f64>,
    pub omega: DMatrix<f64>,
}

impl SplineDesign {
    pub fn new(x: &[f64], knots: Knots) -> Result<Self> {
        let basis = BSplineBasis::build(x, knots)?;
        let BasisMatrices { b, omega } = BasisMatrices::new(&basis, x);
        Ok(SplineDesign {
            x: x.to_vec(),
            basis,
            b,
            omega,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.ncols()
    }

    /// The J x n map from responses to coefficients.
    pub fn coefficient_map(&self, lambda: f64) -> Result<DMatrix<f64>> {
        if lambda == 0.0 {
            // pseudo-inverse through the SVD, refusing rank deficiency
            let svd = self.b.clone().svd(true, true);
            let d = &svd.singular_values;
            let (largest, smallest) = (d.max(), d.min());
            if self.b.nrows() < self.b.ncols() || !(smallest > RANK_TOL * largest) {
                return Err(DfError::SingularDesign {
                    smallest,
                    tol: RANK_TOL,
                });
            }
            let u = svd.u.expect("requested U");
            let vt = svd.v_t.expect("requested V");
            let mut ut = u.transpose();
            for (mut row, &dj) in ut.row_iter_mut().zip(d.iter()) {
                row /= dj;
            }
            return Ok(vt.transpose() * ut);
        }
        let btb = self.b.transpose() * &self.b;
        let a = &btb + &self.omega * lambda;
        let chol = a.cholesky().ok_or(DfError::SingularDesign {
            smallest: 0.0,
            tol: RANK_TOL,
        })?;
        Ok(chol.solve(&self.b.transpose()))
    }

    pub fn smoother(&self, lambda: f64) -> Result<SmootherMatrix> {
        SmootherMatrix::new(&self.b * self.coefficient_map(lambda)?)
    }
}

/// Unconstrained penalized spline fit with its smoother matrix.
pub fn fit_spline(data: &DataSet, spec: SplineSpec) -> Result<FitOutput> {
    let x = abscissae(data)?;
    let design = SplineDesign::new(&x, spec.knots)?;
    let s = design.smoother(spec.lambda)?;
    let fitted = s.apply(data.y());
    Ok(FitOutput::new(fitted)
        .with_smoother(s)
        .with_meta("J", design.dim() as f64))
}

/// Block structure of tied monotone coefficients: row `r` of G has ones on
/// the coefficient indices of the r-th run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupMatrix {
    /// First coefficient index of each run, starting with 0.
    pub starts: Vec<usize>,
    /// Total number of coefficients J.
    pub dim: usize,
}

impl GroupMatrix {
    pub fn new(starts: Vec<usize>, dim: usize) -> Result<Self> {
        if starts.first() != Some(&0) || starts.windows(2).any(|w| w[0] >= w[1]) || starts.last() >= Some(&dim) {
            return Err(DfError::invalid(
                "group starts must be strictly increasing from 0 and below J",
            ));
        }
        Ok(GroupMatrix { starts, dim })
    }

    /// Number of groups g.
    pub fn groups(&self) -> usize {
        self.starts.len()
    }

    /// Half-open coefficient ranges of the runs.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.starts
            .iter()
            .enumerate()
            .map(move |(r, &s)| (s, self.starts.get(r + 1).copied().unwrap_or(self.dim)))
    }

    /// The g x J 0/1 matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.groups(), self.dim);
        for (r, (a, b)) in self.blocks().enumerate() {
            for c in a..b {
                g[(r, c)] = 1.0;
            }
        }
        g
    }

    /// B G', the basis columns summed within each run.
    pub fn merge_columns(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), self.groups());
        for (r, (lo, hi)) in self.blocks().enumerate() {
            for c in lo..hi {
                out.column_mut(r).axpy(1.0, &b.column(c), 1.0);
            }
        }
        out
    }
}

/// Number of maximal runs of neighbouring entries equal within
/// `tol * (1 + max|gamma|)`.
pub fn count_unique_coefficients(gamma: &[f64], tol: f64) -> usize {
    if gamma.is_empty() {
        return 0;
    }
    let scale = tol * (1.0 + gamma.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    1 + gamma.windows(2).filter(|w| (w[1] - w[0]).abs() > scale).count()
}

/// Monotone least-squares problem for a fixed design and penalty, reduced to
/// nonnegative least squares in the increments of the coefficients.
#[derive(Debug, Clone)]
pub struct MonotoneProblem {
    design: SplineDesign,
    lambda: f64,
    /// Data rows of the first stacked column, which carries the free intercept.
    a1_top: DVector<f64>,
    a1_norm2: f64,
    /// a1' times the remaining stacked columns.
    a1_rest: DVector<f64>,
    /// Remaining columns with a1 projected out: their Gram matrix and the
    /// transpose of their data rows.
    gram: DMatrix<f64>,
    proj_top_t: DMatrix<f64>,
    /// Size scale of the reduced design, for the solver tolerance.
    scale: f64,
}

/// Symmetric square root factor R with R'R = m for a PSD matrix m.
fn psd_root(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let mut r = eig.eigenvectors.transpose();
    for (mut row, &e) in r.row_iter_mut().zip(eig.eigenvalues.iter()) {
        row *= e.max(0.0).sqrt();
    }
    r
}

impl MonotoneProblem {
    pub fn new(design: SplineDesign, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(DfError::invalid(format!(
                "spline penalty must be finite and >= 0, got {lambda}"
            )));
        }
        let (n, j) = design.b.shape();
        let rows = if lambda > 0.0 { n + j } else { n };
        let mut stacked = DMatrix::zeros(rows, j);
        stacked.rows_mut(0, n).copy_from(&design.b);
        if lambda > 0.0 {
            stacked.rows_mut(n, j).copy_from(&psd_root(&(&design.omega * lambda)));
        }
        // gamma = L theta with L lower-triangular ones: column k of the
        // reparameterized design is the sum of stacked columns k..J
        for c in (0..j - 1).rev() {
            let next = stacked.column(c + 1).clone_owned();
            stacked.column_mut(c).axpy(1.0, &next, 1.0);
        }
        let a1 = stacked.column(0).clone_owned();
        let a1_norm2 = a1.norm_squared();
        if !(a1_norm2 > 0.0) {
            return Err(DfError::SingularDesign {
                smallest: 0.0,
                tol: RANK_TOL,
            });
        }
        let rest = stacked.columns(1, j - 1).clone_owned();
        let a1_rest = rest.transpose() * &a1;
        let rest_proj = &rest - &a1 * (a1_rest.transpose() / a1_norm2);
        Ok(MonotoneProblem {
            a1_top: a1.rows(0, n).clone_owned(),
            a1_norm2,
            a1_rest,
            gram: rest_proj.transpose() * &rest_proj,
            proj_top_t: rest_proj.rows(0, n).transpose(),
            scale: rest_proj.amax().max(1.0) * rows as f64,
            design,
            lambda,
        })
    }

    pub fn design(&self) -> &SplineDesign {
        &self.design
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Solves for nondecreasing coefficients.
    pub fn solve(&self, y: &DVector<f64>) -> Result<MonotoneFit> {
        let (n, j) = self.design.b.shape();
        if y.len() != n {
            return Err(DfError::invalid(format!(
                "response length {} does not match {n} rows",
                y.len()
            )));
        }
        // the projected columns are orthogonal to a1, so projecting the
        // response as well leaves A'b unchanged
        let atb = &self.proj_top_t * y;
        let sol = nnls_gram(&self.gram, &atb, self.scale * y.amax().max(1.0))?;
        let incr = sol.x;
        let intercept = (self.a1_top.dot(y) - self.a1_rest.dot(&incr)) / self.a1_norm2;

        let mut gamma = DVector::zeros(j);
        gamma[0] = intercept;
        for k in 1..j {
            gamma[k] = gamma[k - 1] + incr[k - 1];
        }
        let fitted = &self.design.b * &gamma;
        let starts = std::iter::once(0).chain(sol.passive.iter().map(|&k| k + 1)).collect();
        let groups = GroupMatrix::new(starts, j)?;
        Ok(MonotoneFit {
            gamma,
            fitted,
            groups,
            lambda: self.lambda,
            nnls_iterations: sol.iterations,
        })
    }

    /// The projection `B G' (G B'B G')^{-1} G B'` for a given run structure.
    pub fn group_smoother(&self, groups: &GroupMatrix) -> Result<SmootherMatrix> {
        let bg = groups.merge_columns(&self.design.b);
        let svd = bg.svd(true, false);
        let d = &svd.singular_values;
        if !(d.min() > RANK_TOL * d.max()) {
            return Err(DfError::SingularDesign {
                smallest: d.min(),
                tol: RANK_TOL,
            });
        }
        let u = svd.u.expect("requested U");
        SmootherMatrix::new(&u * u.transpose())
    }
}

/// A monotone spline fit.
#[derive(Debug, Clone)]
pub struct MonotoneFit {
    pub gamma: DVector<f64>,
    pub fitted: DVector<f64>,
    /// Runs of tied coefficients, read off the solver's active set.
    pub groups: GroupMatrix,
    pub lambda: f64,
    pub nnls_iterations: usize,
}

impl MonotoneFit {
    /// Number of distinct coefficients, counted from the coefficient values.
    pub fn unique_coefficients(&self) -> usize {
        count_unique_coefficients(self.gamma.as_slice(), UNIQUE_TOL)
    }
}

/// Monotone fit together with its FitOutput; when `lambda = 0` the output
/// carries the group smoother, whose trace is the group count.
pub fn fit_monotone_spline(data: &DataSet, spec: SplineSpec) -> Result<(FitOutput, MonotoneFit)> {
    let x = abscissae(data)?;
    let problem = MonotoneProblem::new(SplineDesign::new(&x, spec.knots)?, spec.lambda)?;
    let fit = problem.solve(data.y())?;
    let mut out = FitOutput::new(fit.fitted.clone())
        .with_meta("groups", fit.groups.groups() as f64)
        .with_meta("unique", fit.unique_coefficients() as f64);
    if spec.lambda == 0.0 {
        out = out.with_smoother(problem.group_smoother(&fit.groups)?);
    }
    Ok((out, fit))
}

/// Caches the per-design preprocessing so that repeated fits on the same
/// abscissae (as in a Monte Carlo experiment) only pay for the solve.
struct DesignCache<T> {
    slot: RwLock<Option<Arc<T>>>,
}

impl<T> Default for DesignCache<T> {
    fn default() -> Self {
        DesignCache {
            slot: RwLock::new(None),
        }
    }
}

impl<T> DesignCache<T> {
    fn get_or_build(&self, x: &[f64], key: impl Fn(&T) -> &[f64], build: impl FnOnce() -> Result<T>) -> Result<Arc<T>> {
        if let Some(hit) = self.slot.read().expect("cache lock").as_ref() {
            if key(hit) == x {
                return Ok(hit.clone());
            }
        }
        let fresh = Arc::new(build()?);
        *self.slot.write().expect("cache lock") = Some(fresh.clone());
        Ok(fresh)
    }
}

struct LinearSpline {
    design: SplineDesign,
    coef_map: DMatrix<f64>,
    trace: f64,
}

/// Unconstrained spline as a [`Procedure`]. Fits report the smoother trace
/// but do not materialize the n x n smoother.
pub struct Spline {
    spec: SplineSpec,
    cache: DesignCache<LinearSpline>,
}

impl Spline {
    pub fn new(spec: SplineSpec) -> Self {
        Spline {
            spec,
            cache: DesignCache::default(),
        }
    }
}

impl Procedure for Spline {
    fn name(&self) -> String {
        "spline".into()
    }
    fn params(&self) -> serde_json::Value {
        self.spec.params()
    }
    fn fit(&self, data: &DataSet) -> Result<FitOutput> {
        let x = abscissae(data)?;
        let prep = self.cache.get_or_build(
            &x,
            |p| &p.design.x,
            || {
                let design = SplineDesign::new(&x, self.spec.knots)?;
                let coef_map = design.coefficient_map(self.spec.lambda)?;
                let trace = (&design.b * &coef_map).trace();
                Ok(LinearSpline {
                    design,
                    coef_map,
                    trace,
                })
            },
        )?;
        let fitted = &prep.design.b * (&prep.coef_map * data.y());
        Ok(FitOutput::new(fitted)
            .with_meta("trace", prep.trace)
            .with_meta("J", prep.design.dim() as f64))
    }
}

/// Monotone spline as a [`Procedure`]; fits record the group count (and,
/// at `lambda = 0`, the group-smoother trace, which equals it).
pub struct MonotoneSpline {
    spec: SplineSpec,
    cache: DesignCache<MonotoneProblem>,
}

impl MonotoneSpline {
    pub fn new(spec: SplineSpec) -> Self {
        MonotoneSpline {
            spec,
            cache: DesignCache::default(),
        }
    }
}

impl Procedure for MonotoneSpline {
    fn name(&self) -> String {
        "monotone_spline".into()
    }
    fn params(&self) -> serde_json::Value {
        self.spec.params()
    }
    fn fit(&self, data: &DataSet) -> Result<FitOutput> {
        let x = abscissae(data)?;
        let problem = self.cache.get_or_build(
            &x,
            |p| &p.design.x,
            || MonotoneProblem::new(SplineDesign::new(&x, self.spec.knots)?, self.spec.lambda),
        )?;
        let fit = problem.solve(data.y())?;
        let g = fit.groups.groups() as f64;
        let mut out = FitOutput::new(fit.fitted.clone())
            .with_meta("groups", g)
            .with_meta("unique", fit.unique_coefficients() as f64);
        if self.spec.lambda == 0.0 {
            // trace of a rank-g projection
            out = out.with_meta("trace", g);
        }
        Ok(out)
    }
}

/// Monte Carlo mean of the number of distinct monotone coefficients at
/// `lambda = 0`, on the design, mean and seeds of `design`. Its procedure
/// field is not used.
pub fn monotone_df_theoretical(j: usize, design: &DfExperiment<'_>) -> Result<DfEstimate> {
    let proc = MonotoneSpline::new(SplineSpec::regression(j));
    let exp = DfExperiment {
        procedure: &proc,
        ..design.clone()
    };
    let unique = |f: &FitOutput| f.meta_value("unique").unwrap_or(f64::NAN);
    let mut run = run_experiment(&exp, &[&unique])?;
    Ok(run.extracted.remove(0))
}

/// Settings for the spline df table.
#[derive(Debug, Clone, Serialize)]
pub struct SplineTableConfig {
    pub n: usize,
    pub m: usize,
    pub reps: usize,
    pub seed: u64,
    pub j_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
}

impl Default for SplineTableConfig {
    fn default() -> Self {
        SplineTableConfig {
            n: 100,
            m: 100,
            reps: 100,
            seed: 1,
            j_grid: vec![5, 10, 15],
            lambda_grid: vec![0.001, 0.01, 0.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplineMethod {
    Cubic,
    Smoothing,
    MonotoneCubic,
    MonotoneSmoothing,
}

impl SplineMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplineMethod::Cubic => "cubic",
            SplineMethod::Smoothing => "smoothing",
            SplineMethod::MonotoneCubic => "monotone_cubic",
            SplineMethod::MonotoneSmoothing => "monotone_smoothing",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SplineTableRow {
    pub method: SplineMethod,
    /// J for regression splines, lambda for smoothing splines.
    pub parameter: f64,
    /// trace(S) for linear fits, Monte Carlo E[U_y] for monotone
    /// regression splines, absent for monotone smoothing splines.
    pub theoretical: Option<f64>,
    pub theoretical_se: Option<f64>,
    pub empirical: f64,
    pub se: f64,
}

/// Theoretical and empirical df of the spline fits on a uniform design
/// drawn once on [0, 1], with zero mean and unit noise.
pub fn spline_df_table(cfg: &SplineTableConfig) -> Result<Vec<SplineTableRow>> {
    let x = uniform_design(cfg.n, 1, child_seed(cfg.seed, u64::MAX));
    let xs: Vec<f64> = x.column(0).iter().copied().collect();
    let mut rows = Vec::new();

    let run = |proc: &dyn Procedure, extract: Option<&str>| -> Result<(DfEstimate, Option<DfEstimate>)> {
        let exp = DfExperiment::new(proc, x.clone())
            .with_m(cfg.m)
            .with_reps(cfg.reps)
            .with_seed(cfg.seed);
        match extract {
            None => Ok((run_experiment(&exp, &[])?.df, None)),
            Some(key) => {
                let f = |fit: &FitOutput| fit.meta_value(key).unwrap_or(f64::NAN);
                let mut r = run_experiment(&exp, &[&f])?;
                Ok((r.df, Some(r.extracted.remove(0))))
            }
        }
    };

    for &j in &cfg.j_grid {
        let spec = SplineSpec::regression(j);
        let trace = SplineDesign::new(&xs, spec.knots)?.smoother(0.0)?.trace();
        let (df, _) = run(&Spline::new(spec), None)?;
        rows.push(SplineTableRow {
            method: SplineMethod::Cubic,
            parameter: j as f64,
            theoretical: Some(trace),
            theoretical_se: None,
            empirical: df.value,
            se: df.std_error,
        });
    }
    for &lambda in &cfg.lambda_grid {
        let spec = SplineSpec::smoothing(lambda)?;
        let trace = SplineDesign::new(&xs, spec.knots)?.smoother(lambda)?.trace();
        let (df, _) = run(&Spline::new(spec), None)?;
        rows.push(SplineTableRow {
            method: SplineMethod::Smoothing,
            parameter: lambda,
            theoretical: Some(trace),
            theoretical_se: None,
            empirical: df.value,
            se: df.std_error,
        });
    }
    for &j in &cfg.j_grid {
        let (df, unique) = run(&MonotoneSpline::new(SplineSpec::regression(j)), Some("unique"))?;
        let unique = unique.expect("extractor requested");
        rows.push(SplineTableRow {
            method: SplineMethod::MonotoneCubic,
            parameter: j as f64,
            theoretical: Some(unique.value),
            theoretical_se: Some(unique.std_error),
            empirical: df.value,
            se: df.std_error,
        });
    }
    for &lambda in &cfg.lambda_grid {
        let (df, _) = run(&MonotoneSpline::new(SplineSpec::smoothing(lambda)?), None)?;
        rows.push(SplineTableRow {
            method: SplineMethod::MonotoneSmoothing,
            parameter: lambda,
            theoretical: None,
            theoretical_se: None,
            empirical: df.value,
            se: df.std_error,
        });
    }
    Ok(rows)
}
