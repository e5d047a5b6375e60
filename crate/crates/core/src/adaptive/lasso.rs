//! Lasso by iterative ridge (majorize-minimize), its smoother S(y), and the
//! derivative correction that turns trace S(y) into the lasso's df.
//!
//! The update is `beta <- (X'X + lambda Psi)^{-1} X'y` with
//! `Psi = diag(1 / (2 |beta_j|))`. It is solved in the scaled variables
//! `u = D^{-1} beta`, `D = diag(sqrt(2 |beta_j|))`, where the system
//! `(D X'X D + lambda I) u = D X'y` stays well conditioned as coefficients
//! shrink towards the floor.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::criteria::gcv_from_rss;
use crate::data::{child_seed, gaussian_design, simulate_gaussian_response, DataSet, FitOutput, SmootherMatrix};
use crate::empirical::Procedure;
use crate::error::{DfError, Result};

/// Magnitude at which shrinking coefficients are held.
pub const DEFAULT_FLOOR: f64 = 1e-7;

/// Largest relative change |beta_j^(k+1) - beta_j^(k)| / |beta_j^(k+1)|
/// allowed at convergence for coefficients above the floor. Coefficients
/// heading to zero shrink by a nearly constant factor per step, so an
/// absolute test alone stops them at about tol / (1 - factor).
pub const RELATIVE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LassoOptions {
    /// Stop when max |beta^(k+1) - beta^(k)| falls below this (and
    /// coefficients above the floor also meet [`RELATIVE_TOL`]).
    pub tol: f64,
    pub max_iter: usize,
    pub floor: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: 1e-8,
            max_iter: 10_000,
            floor: DEFAULT_FLOOR,
        }
    }
}

impl LassoOptions {
    /// Coefficients at or below this magnitude count as zero.
    pub fn zero_threshold(&self) -> f64 {
        10.0 * self.floor
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub beta: DVector<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Penalized objective after the ridge start and after every update.
    pub objective: Vec<f64>,
    pub smoother: SmootherMatrix,
    pub options: LassoOptions,
}

impl LassoFit {
    /// Indices of coefficients above the zero threshold.
    pub fn active(&self) -> Vec<usize> {
        active_set(&self.beta, &self.options)
    }

    pub fn n_active(&self) -> usize {
        self.active().len()
    }
}

fn active_set(beta: &DVector<f64>, opts: &LassoOptions) -> Vec<usize> {
    let thr = opts.zero_threshold();
    (0..beta.len()).filter(|&j| beta[j].abs() > thr).collect()
}

/// ||y - X beta||^2 + lambda ||beta||_1
pub fn lasso_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    (y - x * beta).norm_squared() + lambda * beta.lp_norm(1)
}

/// Cached X'X and X'y for repeated solves on one design.
pub(crate) struct LassoProblem<'a> {
    x: &'a DMatrix<f64>,
    xtx: DMatrix<f64>,
}

pub(crate) struct MmState {
    pub beta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: Vec<f64>,
}

impl<'a> LassoProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>) -> Self {
        LassoProblem {
            x,
            xtx: x.transpose() * x,
        }
    }

    fn apply_floor(beta: &mut DVector<f64>, floor: f64) {
        for b in beta.iter_mut() {
            if b.abs() < floor {
                *b = if *b < 0.0 { -floor } else { floor };
            }
        }
    }

    /// Ridge start (X'X + lambda I)^{-1} X'y.
    pub fn ridge_start(&self, xty: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
        let p = self.xtx.nrows();
        let a = &self.xtx + DMatrix::identity(p, p) * lambda;
        let chol = a.cholesky().ok_or(DfError::SingularDesign {
            smallest: 0.0,
            tol: 0.0,
        })?;
        Ok(chol.solve(xty))
    }

    /// (D X'X D + lambda I) with D = diag(d).
    fn scaled_system(&self, d: &DVector<f64>, lambda: f64) -> DMatrix<f64> {
        let p = d.len();
        let mut m = DMatrix::from_fn(p, p, |r, c| d[r] * self.xtx[(r, c)] * d[c]);
        for j in 0..p {
            m[(j, j)] += lambda;
        }
        m
    }

    fn scales(beta: &DVector<f64>) -> DVector<f64> {
        beta.map(|b| (2.0 * b.abs()).sqrt())
    }

    /// MM iterations from `start`, recording the objective when `track` is set.
    pub fn run(
        &self,
        y: &DVector<f64>,
        xty: &DVector<f64>,
        lambda: f64,
        start: DVector<f64>,
        opts: &LassoOptions,
        track: bool,
    ) -> Result<MmState> {
        let mut beta = start;
        Self::apply_floor(&mut beta, opts.floor);
        let mut objective = Vec::new();
        if track {
            objective.push(lasso_objective(self.x, y, &beta, lambda));
        }
        let mut iterations = 0;
        let mut converged = false;
        while iterations < opts.max_iter {
            let d = Self::scales(&beta);
            let m = self.scaled_system(&d, lambda);
            let chol = m.cholesky().ok_or(DfError::SingularDesign {
                smallest: 0.0,
                tol: 0.0,
            })?;
            let u = chol.solve(&d.component_mul(xty));
            let mut next = d.component_mul(&u);
            Self::apply_floor(&mut next, opts.floor);
            iterations += 1;
            let settled = next.iter().zip(beta.iter()).all(|(&b1, &b0)| {
                let change = (b1 - b0).abs();
                change < opts.tol && (b1.abs() <= opts.floor || change <= RELATIVE_TOL * b1.abs())
            });
            beta = next;
            if track {
                objective.push(lasso_objective(self.x, y, &beta, lambda));
            }
            if settled {
                converged = true;
                break;
            }
        }
        Ok(MmState {
            beta,
            iterations,
            converged,
            objective,
        })
    }

    /// S(y) = X D (D X'X D + lambda I)^{-1} D X'.
    pub fn smoother(&self, beta: &DVector<f64>, lambda: f64) -> Result<SmootherMatrix> {
        let d = Self::scales(beta);
        let chol = self
            .scaled_system(&d, lambda)
            .cholesky()
            .ok_or(DfError::SingularDesign {
                smallest: 0.0,
                tol: 0.0,
            })?;
        let xd = scale_columns(self.x, &d);
        let w = chol.solve(&xd.transpose());
        SmootherMatrix::new(&xd * w)
    }

    /// trace S(y) without forming S.
    pub fn smoother_trace(&self, beta: &DVector<f64>, lambda: f64) -> Result<f64> {
        let d = Self::scales(beta);
        let m = self.scaled_system(&d, lambda);
        let chol = m.clone().cholesky().ok_or(DfError::SingularDesign {
            smallest: 0.0,
            tol: 0.0,
        })?;
        // trace(M^{-1} D X'X D) = p - lambda trace(M^{-1})
        let p = d.len();
        let inv = chol.inverse();
        Ok(p as f64 - lambda * inv.trace())
    }
}

fn scale_columns(x: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut xd = x.clone();
    for (mut col, &dj) in xd.column_iter_mut().zip(d.iter()) {
        col *= dj;
    }
    xd
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(DfError::invalid(format!(
            "lasso penalty must be positive and finite, got {lambda}"
        )));
    }
    Ok(())
}

/// Lasso fit by iterative ridge from the ridge start.
pub fn fit_lasso_mm(data: &DataSet, lambda: f64, opts: &LassoOptions) -> Result<LassoFit> {
    check_lambda(lambda)?;
    let problem = LassoProblem::new(data.x());
    let xty = data.x().transpose() * data.y();
    let start = problem.ridge_start(&xty, lambda)?;
    let state = problem.run(data.y(), &xty, lambda, start, opts, true)?;
    let smoother = problem.smoother(&state.beta, lambda)?;
    Ok(LassoFit {
        beta: state.beta,
        lambda,
        iterations: state.iterations,
        converged: state.converged,
        objective: state.objective,
        smoother,
        options: *opts,
    })
}

/// trace S(y), the derivative correction delta, and their sum.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LassoDfBreakdown {
    pub trace_s: f64,
    pub delta: f64,
    pub df: f64,
    pub n_active: usize,
}

/// Derivatives d beta / d y_i by central differences with step
/// `fd_step * (1 + |y_i|)`, warm-started at `beta`. Row i of the result
/// holds d beta / d y_i.
pub(crate) fn coefficient_jacobian(
    problem: &LassoProblem<'_>,
    y: &DVector<f64>,
    lambda: f64,
    beta: &DVector<f64>,
    fd_step: f64,
    opts: &LassoOptions,
) -> Result<DMatrix<f64>> {
    let n = y.len();
    let p = beta.len();
    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let h = fd_step * (1.0 + y[i].abs());
            let solve = |sign: f64| -> Result<DVector<f64>> {
                let mut yp = y.clone();
                yp[i] += sign * h;
                let xty = problem.x.transpose() * &yp;
                let st = problem.run(&yp, &xty, lambda, beta.clone(), opts, false)?;
                if !st.converged {
                    return Err(DfError::Convergence {
                        iterations: st.iterations,
                        residual: f64::NAN,
                    });
                }
                Ok(st.beta)
            };
            let up = solve(1.0)?;
            let down = solve(-1.0)?;
            Ok(((up - down) / (2.0 * h)).iter().copied().collect())
        })
        .collect();
    let mut jac = DMatrix::zeros(n, p);
    for (i, r) in rows.into_iter().enumerate() {
        for (j, v) in r?.into_iter().enumerate() {
            jac[(i, j)] = v;
        }
    }
    Ok(jac)
}

/// Options for the derivative correction: the finite-difference step and
/// the tighter convergence used for the base and perturbed fits.
#[derive(Debug, Clone, Copy)]
pub struct TheoremOptions {
    pub fd_step: f64,
    pub solver: LassoOptions,
}

impl Default for TheoremOptions {
    fn default() -> Self {
        TheoremOptions {
            fd_step: 1e-4,
            solver: LassoOptions {
                tol: 1e-12,
                max_iter: 100_000,
                floor: DEFAULT_FLOOR,
            },
        }
    }
}

/// Full breakdown for one response, also returning the refined coefficients
/// and the coefficient Jacobian.
pub(crate) fn theorem_parts(
    data: &DataSet,
    lambda: f64,
    topts: &TheoremOptions,
) -> Result<(LassoDfBreakdown, DVector<f64>, DMatrix<f64>)> {
    check_lambda(lambda)?;
    let opts = &topts.solver;
    let x = data.x();
    let y = data.y();
    let problem = LassoProblem::new(x);
    let xty = x.transpose() * y;
    let start = problem.ridge_start(&xty, lambda)?;
    let base = problem.run(y, &xty, lambda, start, opts, false)?;
    if !base.converged {
        return Err(DfError::Convergence {
            iterations: base.iterations,
            residual: f64::NAN,
        });
    }
    let beta = base.beta;
    let jac = coefficient_jacobian(&problem, y, lambda, &beta, topts.fd_step, opts)?;

    let d = LassoProblem::scales(&beta);
    let m = problem.scaled_system(&d, lambda);
    let chol = m.cholesky().ok_or(DfError::SingularDesign {
        smallest: 0.0,
        tol: 0.0,
    })?;
    // W = X D M^{-1}; M is symmetric so W' = M^{-1} D X'
    let xd = scale_columns(x, &d);
    let w = chol.solve(&xd.transpose()).transpose();
    let trace_s = (0..x.nrows()).map(|i| w.row(i).dot(&xd.row(i))).sum::<f64>();

    // delta = -lambda sum_i sum_j (X A^{-1})_ij C_jj (d beta_j / d y_i) beta_j
    // with A^{-1} = D M^{-1} D and C_jj beta_j = -1 / d_j^2, zero when floored
    let active = active_set(&beta, opts);
    let mut delta = 0.0;
    for i in 0..x.nrows() {
        for &j in &active {
            delta += w[(i, j)] * jac[(i, j)] / d[j];
        }
    }
    delta *= lambda;
    let br = LassoDfBreakdown {
        trace_s,
        delta,
        df: trace_s + delta,
        n_active: active.len(),
    };
    Ok((br, beta, jac))
}

/// Degrees-of-freedom breakdown for the lasso at one response:
/// `df = trace S(y) + delta`.
pub fn lasso_df_theorem(data: &DataSet, lambda: f64, fd_step: f64) -> Result<LassoDfBreakdown> {
    let topts = TheoremOptions {
        fd_step,
        ..TheoremOptions::default()
    };
    Ok(theorem_parts(data, lambda, &topts)?.0)
}

/// Same as [`lasso_df_theorem`] with explicit solver options.
pub fn lasso_df_theorem_with(data: &DataSet, lambda: f64, topts: &TheoremOptions) -> Result<LassoDfBreakdown> {
    Ok(theorem_parts(data, lambda, topts)?.0)
}

/// One row of a lasso path table.
#[derive(Debug, Clone, Serialize)]
pub struct LassoPathRow {
    pub lambda: f64,
    pub n_active: usize,
    pub trace_s: f64,
    pub delta: Option<f64>,
    pub df_theorem: Option<f64>,
    /// GCV with df = number of nonzero coefficients; absent when df >= n.
    pub gcv_count: Option<f64>,
    /// GCV with df = trace S(y).
    pub gcv_trace: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn path_row(
    data: &DataSet,
    lambda: f64,
    opts: &LassoOptions,
    theorem: Option<&TheoremOptions>,
) -> Result<LassoPathRow> {
    let (beta, iterations, converged, delta) = match theorem {
        Some(t) => {
            let (br, beta, _) = theorem_parts(data, lambda, t)?;
            (beta, 0, true, Some(br.delta))
        }
        None => {
            check_lambda(lambda)?;
            let problem = LassoProblem::new(data.x());
            let xty = data.x().transpose() * data.y();
            let start = problem.ridge_start(&xty, lambda)?;
            let st = problem.run(data.y(), &xty, lambda, start, opts, false)?;
            (st.beta, st.iterations, st.converged, None)
        }
    };
    let problem = LassoProblem::new(data.x());
    let trace_s = problem.smoother_trace(&beta, lambda)?;
    let n_active = active_set(&beta, opts).len();
    let rss = (data.y() - data.x() * &beta).norm_squared();
    let n = data.n();
    Ok(LassoPathRow {
        lambda,
        n_active,
        trace_s,
        delta,
        df_theorem: delta.map(|d| trace_s + d),
        gcv_count: gcv_from_rss(rss, n, n_active as f64).ok(),
        gcv_trace: gcv_from_rss(rss, n, trace_s).ok(),
        iterations,
        converged,
    })
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(DfError::invalid("lambda grid must be non-empty and positive"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(DfError::invalid("lambda grid must be strictly increasing"));
    }
    Ok(())
}

/// Per lambda: nonzero count, trace S(y), and GCV under both df choices.
pub fn gcv_path_lasso(data: &DataSet, lambda_grid: &[f64]) -> Result<Vec<LassoPathRow>> {
    check_grid(lambda_grid)?;
    let opts = LassoOptions::default();
    lambda_grid
        .par_iter()
        .map(|&l| path_row(data, l, &opts, None))
        .collect()
}

/// As [`gcv_path_lasso`], adding the derivative correction at every lambda.
pub fn lasso_path_with_theorem(
    data: &DataSet,
    lambda_grid: &[f64],
    topts: &TheoremOptions,
) -> Result<Vec<LassoPathRow>> {
    check_grid(lambda_grid)?;
    let opts = topts.solver;
    lambda_grid
        .iter()
        .map(|&l| path_row(data, l, &opts, Some(topts)))
        .collect()
}

/// `n_grid` values log-spaced from just above the null threshold
/// `2 max|X'y|` down by a factor `ratio`, returned in increasing order.
/// At the threshold itself the iterative ridge approaches zero only
/// sublinearly, hence the 1% margin.
pub fn default_lambda_grid(data: &DataSet, n_grid: usize, ratio: f64) -> Result<Vec<f64>> {
    if n_grid < 2 || !(ratio > 0.0 && ratio < 1.0) {
        return Err(DfError::invalid(
            "lambda grid needs at least two points and a ratio in (0, 1)",
        ));
    }
    let top = 2.02 * (data.x().transpose() * data.y()).amax();
    if !(top > 0.0) {
        return Err(DfError::invalid("X'y is zero; lasso path is trivial"));
    }
    let lo = top * ratio;
    Ok((0..n_grid)
        .map(|k| (lo.ln() + (top.ln() - lo.ln()) * k as f64 / (n_grid - 1) as f64).exp())
        .collect())
}

/// Sparse linear model with standard Gaussian design and noise:
/// beta_1 = beta_2 = beta_3 = 1, the rest zero, so Var(x'beta) / Var(eps) = 3.
pub fn simulate_sparse_linear(n: usize, p: usize, seed: u64) -> Result<DataSet> {
    if p < 3 {
        return Err(DfError::invalid(format!(
            "need p >= 3 for three active coefficients, got {p}"
        )));
    }
    let x = gaussian_design(n, p, child_seed(seed, 0));
    let beta = DVector::from_fn(p, |j, _| if j < 3 { 1.0 } else { 0.0 });
    let mu = &x * beta;
    let y = simulate_gaussian_response(&mu, child_seed(seed, 1))?;
    DataSet::new(x, y)
}

/// The lasso as a [`Procedure`]: fits report trace S(y) and the active count.
pub struct Lasso {
    pub lambda: f64,
    pub options: LassoOptions,
}

impl Lasso {
    pub fn new(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Lasso {
            lambda,
            options: LassoOptions::default(),
        })
    }
}

impl Procedure for Lasso {
    fn name(&self) -> String {
        "lasso".into()
    }
    fn params(&self) -> serde_json::Value {
        json!({ "lambda": self.lambda })
    }
    fn fit(&self, data: &DataSet) -> Result<FitOutput> {
        let problem = LassoProblem::new(data.x());
        let xty = data.x().transpose() * data.y();
        let start = problem.ridge_start(&xty, self.lambda)?;
        let st = problem.run(data.y(), &xty, self.lambda, start, &self.options, false)?;
        let trace = problem.smoother_trace(&st.beta, self.lambda)?;
        let active = active_set(&st.beta, &self.options).len();
        Ok(FitOutput::new(data.x() * &st.beta)
            .with_meta("trace", trace)
            .with_meta("active", active as f64)
            .with_meta("iterations", st.iterations as f64))
    }
}
