//! Multivariate adaptive regression splines: greedy forward growth of
//! hinge-product terms, backward deletion under GCV with the nominal df
//! r + c (r - 1) / 2, and the Monte Carlo correction of the penalty c.

mod study;

pub use study::{
    correct_penalty, cv_penalty, cv_penalty_with, r2_study, self_consistency_check, simulate_tensor_product,
    tensor_product_mean, ConsistencyCheck, ConsistencyConfig, ConsistencyRow, CorrectionConfig, CvResult,
    PenaltyChoice, PenaltyCorrection, R2Config, R2Row, R2Variant,
};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::criteria::gcv_from_rss;
use crate::data::{DataSet, FitOutput};
use crate::empirical::Procedure;
use crate::error::{DfError, Result};

/// A candidate column whose squared norm after projecting out the current
/// design falls below this fraction of its own squared norm is treated as
/// linearly dependent.
pub const RANK_TOL: f64 = 1e-10;

/// Forward growth stops when the best RSS decrease is below this fraction
/// of ||y||^2.
pub const MIN_IMPROVEMENT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// (x - t)+
    Plus,
    /// (t - x)+
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HingeFactor {
    pub variable: usize,
    pub knot: f64,
    pub direction: Direction,
}

impl HingeFactor {
    pub fn eval(&self, value: f64) -> f64 {
        match self.direction {
            Direction::Plus => (value - self.knot).max(0.0),
            Direction::Minus => (self.knot - value).max(0.0),
        }
    }
}

/// Product of hinge factors; the empty product is the intercept.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BasisTerm {
    pub factors: Vec<HingeFactor>,
}

impl BasisTerm {
    pub fn intercept() -> Self {
        BasisTerm { factors: Vec::new() }
    }

    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    pub fn uses(&self, variable: usize) -> bool {
        self.factors.iter().any(|f| f.variable == variable)
    }

    pub fn eval_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        self.factors.iter().map(|f| f.eval(x[(i, f.variable)])).product()
    }

    pub fn column(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(x.nrows(), |i, _| self.eval_row(x, i))
    }

    fn with_factor(&self, factor: HingeFactor) -> Self {
        let mut factors = self.factors.clone();
        factors.push(factor);
        BasisTerm { factors }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MarsModel {
    /// Intercept first.
    pub terms: Vec<BasisTerm>,
    pub coefficients: Vec<f64>,
    /// Rank of the design, intercept included.
    pub r: usize,
    pub c: f64,
    pub degree: usize,
    pub nk: usize,
    pub rss: f64,
    /// Set once the model has been through the backward pass.
    pub gcv: Option<f64>,
}

impl MarsModel {
    pub fn design(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        design_of(&self.terms, x)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.design(x) * DVector::from_column_slice(&self.coefficients)
    }

    pub fn nominal_df(&self) -> f64 {
        nominal_df(self.r, self.c)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("model is plain data")
    }
}

/// C(M) = r + c (r - 1) / 2: r independent basis functions plus c per knot,
/// counting (r - 1) / 2 knots.
pub fn nominal_df(r: usize, c: f64) -> f64 {
    r as f64 + c * (r as f64 - 1.0) / 2.0
}

/// 2 for additive fits, 3 once interactions are allowed.
pub fn default_penalty(degree: usize) -> f64 {
    if degree <= 1 {
        2.0
    } else {
        3.0
    }
}

fn design_of(terms: &[BasisTerm], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(x.nrows(), terms.len());
    for (j, t) in terms.iter().enumerate() {
        d.set_column(j, &t.column(x));
    }
    d
}

fn rank_of(d: &DMatrix<f64>) -> usize {
    if d.ncols() == 0 {
        return 0;
    }
    let sv = d.singular_values();
    let top = sv.max();
    sv.iter().filter(|&&s| s > RANK_TOL.sqrt() * top).count()
}

/// Least-squares coefficients and RSS on the given design.
fn least_squares(d: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let coef = d
        .clone()
        .svd(true, true)
        .solve(y, 1e-12)
        .map_err(|e| DfError::invalid(format!("least squares failed: {e}")))?;
    let rss = (y - d * &coef).norm_squared();
    Ok((coef, rss))
}

/// Removes from `v` its projection on the orthonormal columns `q`; two
/// Gram-Schmidt passes.
fn orthogonalize(q: &[DVector<f64>], v: &DVector<f64>) -> DVector<f64> {
    let mut u = v.clone();
    for _ in 0..2 {
        for qj in q {
            let a = qj.dot(&u);
            u.axpy(-a, qj, 1.0);
        }
    }
    u
}

/// A knot-spacing parameter, either fixed or derived from the data size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Span {
    Fixed(usize),
    Auto,
}

/// Restrictions on candidate knots. The default admits every observed
/// value in the parent's support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KnotRule {
    /// Minimum number of parent-support rows strictly on each side of a
    /// knot. Guards against hinges that are nonzero on one or two training
    /// rows and extrapolate with large coefficients. `Auto` is
    /// ceil(3 - log2(0.05 / p)).
    pub endspan: Span,
    /// Keep every k-th distinct value of the parent's support, counting from
    /// the smallest. `Auto` is floor(log2(p N / -ln 0.95) / 2.5) with N the
    /// support size, the spacing at which a run of noise between knots has
    /// under 5% chance of being fit.
    pub minspan: Span,
}

impl Default for KnotRule {
    fn default() -> Self {
        KnotRule {
            endspan: Span::Fixed(0),
            minspan: Span::Fixed(1),
        }
    }
}

impl KnotRule {
    pub fn stride(k: usize) -> Self {
        KnotRule {
            endspan: Span::Fixed(0),
            minspan: Span::Fixed(k),
        }
    }

    /// Automatic end and min spans, as in common MARS implementations.
    pub fn friedman() -> Self {
        KnotRule {
            endspan: Span::Auto,
            minspan: Span::Auto,
        }
    }

    fn endspan_for(&self, p: usize) -> usize {
        match self.endspan {
            Span::Fixed(k) => k,
            Span::Auto => (3.0 - (0.05 / p.max(1) as f64).log2()).ceil() as usize,
        }
    }

    fn minspan_for(&self, p: usize, support: usize) -> usize {
        match self.minspan {
            Span::Fixed(k) => k,
            Span::Auto => {
                let l = ((p * support) as f64 / -(0.95f64.ln())).log2() / 2.5;
                (l.floor() as usize).max(1)
            }
        }
    }
}

/// Best knot for one (parent, variable) pair.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    knot: f64,
}

struct ForwardState<'a> {
    x: &'a DMatrix<f64>,
    terms: Vec<BasisTerm>,
    cols: Vec<DVector<f64>>,
    q: Vec<DVector<f64>>,
    resid: DVector<f64>,
    /// Row indices sorted by each variable (ties by index).
    order: Vec<Vec<usize>>,
    rule: KnotRule,
}

impl<'a> ForwardState<'a> {
    fn new(x: &'a DMatrix<f64>, y: &DVector<f64>, rule: KnotRule) -> Self {
        let n = x.nrows();
        let one = DVector::from_element(n, 1.0);
        let q0 = &one / (n as f64).sqrt();
        let resid = y - &q0 * q0.dot(y);
        let order = (0..x.ncols())
            .map(|v| {
                let mut o: Vec<usize> = (0..n).collect();
                o.sort_by(|&a, &b| x[(a, v)].partial_cmp(&x[(b, v)]).expect("finite x").then(a.cmp(&b)));
                o
            })
            .collect();
        ForwardState {
            x,
            terms: vec![BasisTerm::intercept()],
            cols: vec![one],
            q: vec![q0],
            resid,
            order,
            rule,
        }
    }

    /// Scans every knot of `variable` for parent term `parent`.
    ///
    /// Adding the pair b(x-t)+, b(t-x)+ spans the same space as adding b x
    /// and b(x-t)+ (their difference is b(x - t) and b is already in the
    /// model), so the linear part is projected once and the knot sweep only
    /// updates one column, using running sums over rows with x > t.
    fn sweep(&self, parent: usize, variable: usize) -> Option<Candidate> {
        let b = &self.cols[parent];
        let xv = self.x.column(variable);
        let rows: Vec<usize> = self.order[variable].iter().copied().filter(|&i| b[i] != 0.0).collect();
        if rows.is_empty() {
            return None;
        }
        let bx = b.component_mul(&xv);
        let bx2 = bx.norm_squared();
        let u0 = orthogonalize(&self.q, &bx);
        let q_lin = (bx2 > 0.0 && u0.norm_squared() > RANK_TOL * bx2).then(|| &u0 / u0.norm());
        let lin_dot = q_lin.as_ref().map_or(0.0, |q| q.dot(&self.resid));
        let lin_gain = lin_dot * lin_dot;

        // w[0] = residual, w[1..=k] = current basis, w[k+1] = linear part
        let mut w: Vec<&DVector<f64>> = Vec::with_capacity(self.q.len() + 2);
        w.push(&self.resid);
        w.extend(self.q.iter());
        if let Some(q) = q_lin.as_ref() {
            w.push(q);
        }
        let nw = w.len();
        let lin_idx = q_lin.as_ref().map(|_| nw - 1);

        // sums over the current set {x > t}: b w, b w (x - t), b^2, b^2 (x - t), b^2 (x - t)^2
        let mut sb = vec![0.0; nw];
        let mut sd = vec![0.0; nw];
        let (mut n0, mut n1, mut n2) = (0.0, 0.0, 0.0);
        let mut t_cur = xv[rows[rows.len() - 1]];
        let mut best: Option<Candidate> = None;

        let spacing = self.rule.minspan_for(self.x.ncols(), rows.len());
        let endspan = self.rule.endspan_for(self.x.ncols());
        let mut distinct = 1 + rows.windows(2).filter(|w| xv[w[0]] != xv[w[1]]).count();
        let mut end = rows.len();
        while end > 0 {
            let t = xv[rows[end - 1]];
            let mut start = end - 1;
            while start > 0 && xv[rows[start - 1]] == t {
                start -= 1;
            }
            let delta = t_cur - t;
            n2 += 2.0 * delta * n1 + delta * delta * n0;
            n1 += delta * n0;
            for k in 0..nw {
                sd[k] += delta * sb[k];
            }
            t_cur = t;

            let mut gain = lin_gain;
            if n0 > 0.0 && n2 > 0.0 {
                let proj2: f64 = sd[1..].iter().map(|d| d * d).sum();
                let ct2 = n2 - proj2;
                if ct2 > RANK_TOL * n2 {
                    let rp = sd[0] - lin_idx.map_or(0.0, |l| lin_dot * sd[l]);
                    gain += rp * rp / ct2;
                }
            }
            distinct -= 1;
            let allowed = start >= endspan && rows.len() - end >= endspan && distinct % spacing == 0;
            // descending sweep: `>=` keeps the smallest knot among ties
            if allowed && best.is_none_or(|c| gain >= c.gain) {
                best = Some(Candidate { gain, knot: t });
            }

            for &i in &rows[start..end] {
                let bi = b[i];
                n0 += bi * bi;
                for k in 0..nw {
                    sb[k] += bi * w[k][i];
                }
            }
            end = start;
        }
        best
    }

    /// Appends the term if its column is independent of the current basis.
    fn push(&mut self, term: BasisTerm) -> bool {
        let col = term.column(self.x);
        let norm2 = col.norm_squared();
        if norm2 == 0.0 {
            return false;
        }
        let u = orthogonalize(&self.q, &col);
        let un2 = u.norm_squared();
        if un2 <= RANK_TOL * norm2 {
            return false;
        }
        let qn = u / un2.sqrt();
        let a = qn.dot(&self.resid);
        self.resid.axpy(-a, &qn, 1.0);
        self.q.push(qn);
        self.cols.push(col);
        self.terms.push(term);
        true
    }
}

/// Greedy forward growth from the intercept.
///
/// Each step scans every (parent, variable, knot) with the parent already in
/// the model, the variable absent from the parent and the parent below the
/// degree cap, and adds the reflected hinge pair with the lowest refit RSS.
/// A member of the pair that is linearly dependent on the design is
/// dropped. Stops once there are at least `nk` nonintercept terms, when no
/// candidate is left, or when the best RSS decrease falls below
/// [`MIN_IMPROVEMENT`] times ||y||^2.
pub fn forward_pass(data: &DataSet, nk: usize, degree: usize) -> Result<MarsModel> {
    forward_pass_with(data, nk, degree, KnotRule::default())
}

/// [`forward_pass`] with restricted knot candidates.
pub fn forward_pass_with(data: &DataSet, nk: usize, degree: usize, rule: KnotRule) -> Result<MarsModel> {
    if rule.minspan == Span::Fixed(0) {
        return Err(DfError::invalid("knot stride must be at least 1"));
    }
    if nk < 1 {
        return Err(DfError::invalid("nk must be at least 1"));
    }
    if degree < 1 {
        return Err(DfError::invalid("degree must be at least 1"));
    }
    let (x, y) = (data.x(), data.y());
    let floor = MIN_IMPROVEMENT * y.norm_squared();
    let mut st = ForwardState::new(x, y, rule);
    while st.terms.len() - 1 < nk {
        let terms = &st.terms;
        let pairs: Vec<(usize, usize)> = (0..terms.len())
            .filter(|&m| terms[m].degree() < degree)
            .flat_map(|m| (0..x.ncols()).filter(move |&v| !terms[m].uses(v)).map(move |v| (m, v)))
            .collect();
        let found: Vec<Option<Candidate>> = pairs.par_iter().map(|&(m, v)| st.sweep(m, v)).collect();
        let mut best: Option<(Candidate, usize, usize)> = None;
        for (&(m, v), cand) in pairs.iter().zip(found) {
            if let Some(c) = cand {
                if best.is_none_or(|(b, _, _)| c.gain > b.gain) {
                    best = Some((c, m, v));
                }
            }
        }
        let Some((cand, m, v)) = best else { break };
        if cand.gain < floor {
            break;
        }
        let parent = st.terms[m].clone();
        let plus = st.push(parent.with_factor(HingeFactor {
            variable: v,
            knot: cand.knot,
            direction: Direction::Plus,
        }));
        let minus = st.push(parent.with_factor(HingeFactor {
            variable: v,
            knot: cand.knot,
            direction: Direction::Minus,
        }));
        if !plus && !minus {
            break;
        }
    }
    let d = design_of(&st.terms, x);
    let (coef, rss) = least_squares(&d, y)?;
    Ok(MarsModel {
        r: st.terms.len(),
        terms: st.terms,
        coefficients: coef.iter().copied().collect(),
        c: 0.0,
        degree,
        nk,
        rss,
        gcv: None,
    })
}

/// One model on the deletion path.
#[derive(Debug, Clone, Serialize)]
pub struct PathStep {
    /// Indices into the forward model's terms.
    pub kept: Vec<usize>,
    pub rss: f64,
    pub r: usize,
    pub nominal_df: f64,
    pub gcv: f64,
}

/// The backward deletion path: starting from the full model, repeatedly
/// drop the nonintercept term whose removal gives the lowest GCV, down to
/// the intercept.
pub fn deletion_path(model: &MarsModel, data: &DataSet, c: f64) -> Result<Vec<PathStep>> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(DfError::invalid(format!("penalty c must be finite and >= 0, got {c}")));
    }
    let n = data.n();
    let full = design_of(&model.terms, data.x());
    let mut kept: Vec<usize> = (0..model.terms.len()).collect();
    let mut path = Vec::with_capacity(kept.len());
    loop {
        let d = full.select_columns(kept.iter());
        let (coef, rss) = least_squares(&d, data.y())?;
        let r = rank_of(&d);
        let nominal = nominal_df(r, c);
        if nominal >= n as f64 {
            return Err(DfError::DegenerateGcv { nominal, n });
        }
        let gcv = gcv_from_rss(rss, n, nominal)?;
        path.push(PathStep {
            kept: kept.clone(),
            rss,
            r,
            nominal_df: nominal,
            gcv,
        });
        if kept.len() == 1 {
            break;
        }
        // RSS after dropping column j is rss + coef_j^2 / [(D'D)^-1]_jj
        let qr = d.clone().qr();
        let rmat = qr.r();
        let k = kept.len();
        let rinv = rmat
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or(DfError::SingularDesign {
                smallest: 0.0,
                tol: RANK_TOL,
            })?;
        let mut drop: Option<(f64, usize)> = None;
        for j in 1..k {
            let diag = rinv.row(j).norm_squared();
            let increase = coef[j] * coef[j] / diag;
            if drop.is_none_or(|(best, _)| increase < best) {
                drop = Some((increase, j));
            }
        }
        let (_, j) = drop.expect("at least one nonintercept term");
        kept.remove(j);
    }
    Ok(path)
}

/// Runs the deletion path and keeps its GCV-minimal model (ties go to the
/// smaller model).
pub fn backward_pass(model: &MarsModel, data: &DataSet, c: f64) -> Result<MarsModel> {
    let path = deletion_path(model, data, c)?;
    let best = path
        .iter()
        .fold(None::<&PathStep>, |acc, s| match acc {
            Some(a) if a.gcv < s.gcv => Some(a),
            _ => Some(s),
        })
        .expect("path is never empty");
    let terms: Vec<BasisTerm> = best.kept.iter().map(|&j| model.terms[j].clone()).collect();
    let (coef, rss) = least_squares(&design_of(&terms, data.x()), data.y())?;
    Ok(MarsModel {
        terms,
        coefficients: coef.iter().copied().collect(),
        r: best.r,
        c,
        degree: model.degree,
        nk: model.nk,
        rss,
        gcv: Some(best.gcv),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MarsOptions {
    pub nk: usize,
    pub degree: usize,
    pub c: f64,
    /// Run the backward pass; otherwise the forward model is returned with
    /// `c` recorded for its nominal df.
    pub prune: bool,
    pub knots: KnotRule,
}

impl MarsOptions {
    pub fn new(nk: usize, degree: usize) -> Self {
        MarsOptions {
            nk,
            degree,
            c: default_penalty(degree),
            prune: true,
            knots: KnotRule::default(),
        }
    }

    pub fn with_knots(mut self, knots: KnotRule) -> Self {
        self.knots = knots;
        self
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_prune(mut self, prune: bool) -> Self {
        self.prune = prune;
        self
    }
}

pub fn fit_mars(data: &DataSet, opts: &MarsOptions) -> Result<MarsModel> {
    let mut model = forward_pass_with(data, opts.nk, opts.degree, opts.knots)?;
    if opts.prune {
        model = backward_pass(&model, data, opts.c)?;
    } else {
        model.c = opts.c;
    }
    Ok(model)
}

/// MARS as a [`Procedure`]. Fits report `r`, `nominal` (r + c (r-1)/2 of
/// the returned model) and `terms`.
pub struct Mars {
    pub opts: MarsOptions,
}

impl Procedure for Mars {
    fn name(&self) -> String {
        "mars".into()
    }
    fn params(&self) -> serde_json::Value {
        json!(self.opts)
    }
    fn fit(&self, data: &DataSet) -> Result<FitOutput> {
        let model = fit_mars(data, &self.opts)?;
        let fitted = model.predict(data.x());
        Ok(FitOutput::new(fitted)
            .with_meta("r", model.r as f64)
            .with_meta("nominal", model.nominal_df())
            .with_meta("terms", model.terms.len() as f64))
    }
}
