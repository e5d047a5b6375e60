use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use dflab::adaptive::{default_lambda_grid, lasso_path_with_theorem, simulate_sparse_linear, Lasso, TheoremOptions};
use dflab::empirical::{constant_mean, estimate_df, DfRecord};
use dflab::linear::{Knn, KnnSpec, Ols, Ridge, RidgeSpec};
use dflab::mars::{
    correct_penalty, cv_penalty_with, default_penalty, fit_mars, r2_study, self_consistency_check, BasisTerm,
    ConsistencyConfig, CorrectionConfig, Direction, KnotRule, Mars, MarsOptions, PenaltyChoice, R2Config, Span,
};
use dflab::splines::{spline_df_table, Spline, SplineSpec, SplineTableConfig};
use dflab::tree::{tree_df_table, Tree, TreeTableConfig};
use dflab::{DataSet, DfError, DfExperiment, Procedure};

use crate::config::{ensure, List, Settings};
use crate::error::{CliError, Result};
use crate::output::{Emitter, Format};

pub struct Context {
    pub settings: Settings,
    pub seed: u64,
    pub command: String,
    pub format: Format,
    pub out: Option<PathBuf>,
}

impl Context {
    /// Call once every knob is resolved: rejects unknown config keys and
    /// freezes the header.
    fn emitter(&self) -> Result<Emitter> {
        self.settings.check_unused()?;
        Ok(Emitter {
            command: self.command.clone(),
            settings: self.settings.resolved().to_vec(),
            format: self.format,
            out: self.out.clone(),
        })
    }
}

fn load_data(path: &PathBuf) -> Result<DataSet> {
    DataSet::from_csv_path(path).map_err(|e| match e {
        DfError::Io(io) => CliError::io(format!("reading {}", path.display()), io),
        other => other.into(),
    })
}

fn check_mc(n: usize, m: usize, reps: usize) -> Result<()> {
    ensure(n >= 2, || format!("n must be at least 2, got {n}"))?;
    ensure(m >= 2, || format!("m must be at least 2, got {m}"))?;
    ensure(reps >= 1, || "reps must be at least 1".into())
}

#[derive(Debug, Args)]
pub struct SplinesTableArgs {
    #[arg(long)]
    n: Option<usize>,
    /// Monte Carlo repetitions per replication.
    #[arg(long)]
    m: Option<usize>,
    /// Outer replications (for standard errors).
    #[arg(long)]
    reps: Option<usize>,
    /// Basis sizes J for regression splines, comma separated.
    #[arg(long)]
    j_grid: Option<List<usize>>,
    /// Penalties for smoothing splines, comma separated.
    #[arg(long)]
    lambda_grid: Option<List<f64>>,
}

pub fn splines_table(ctx: &mut Context, a: SplinesTableArgs) -> Result<()> {
    let d = SplineTableConfig::default();
    let s = &mut ctx.settings;
    let cfg = SplineTableConfig {
        n: s.value("n", a.n, d.n)?,
        m: s.value("m", a.m, d.m)?,
        reps: s.value("reps", a.reps, d.reps)?,
        seed: ctx.seed,
        j_grid: s.value("j-grid", a.j_grid, List(d.j_grid))?.0,
        lambda_grid: s.value("lambda-grid", a.lambda_grid, List(d.lambda_grid))?.0,
    };
    check_mc(cfg.n, cfg.m, cfg.reps)?;
    ensure(cfg.j_grid.iter().all(|&j| j >= 4), || {
        "every J must be at least 4 (cubic)".into()
    })?;
    ensure(cfg.lambda_grid.iter().all(|&l| l > 0.0), || {
        "smoothing penalties must be positive".into()
    })?;
    let emitter = ctx.emitter()?;
    emitter.rows(&spline_df_table(&cfg)?)
}

#[derive(Debug, Args)]
pub struct TreeTableArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Numbers of predictors, comma separated.
    #[arg(long)]
    p_values: Option<List<usize>>,
    /// Tree depths, comma separated.
    #[arg(long)]
    depths: Option<List<usize>>,
}

pub fn tree_table(ctx: &mut Context, a: TreeTableArgs) -> Result<()> {
    let d = TreeTableConfig::default();
    let s = &mut ctx.settings;
    let cfg = TreeTableConfig {
        n: s.value("n", a.n, d.n)?,
        m: s.value("m", a.m, d.m)?,
        reps: s.value("reps", a.reps, d.reps)?,
        seed: ctx.seed,
        p_values: s.value("p-values", a.p_values, List(d.p_values))?.0,
        depths: s.value("depths", a.depths, List(d.depths))?.0,
    };
    check_mc(cfg.n, cfg.m, cfg.reps)?;
    ensure(cfg.p_values.iter().all(|&p| p >= 1), || {
        "p values must be positive".into()
    })?;
    let emitter = ctx.emitter()?;
    emitter.rows(&tree_df_table(&cfg)?)
}

#[derive(Debug, Args)]
pub struct LassoPathArgs {
    /// CSV data set (columns x1..xp, y); simulated sparse data when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Number of log-spaced penalties below the null threshold.
    #[arg(long)]
    grid_size: Option<usize>,
    /// Smallest penalty as a fraction of the largest.
    #[arg(long)]
    ratio: Option<f64>,
    /// Explicit increasing penalty grid; overrides grid-size and ratio.
    #[arg(long)]
    lambda_grid: Option<List<f64>>,
    /// Finite-difference step for the derivative correction.
    #[arg(long)]
    fd_step: Option<f64>,
}

pub fn lasso_path(ctx: &mut Context, a: LassoPathArgs) -> Result<()> {
    let s = &mut ctx.settings;
    let data_path = s.optional("data", a.data.map(Path::from))?;
    let data = match &data_path {
        Some(p) => load_data(&p.0)?,
        None => {
            let n = s.value("n", a.n, 100usize)?;
            let p = s.value("p", a.p, 20usize)?;
            ensure(n >= 2 && p >= 3, || {
                "simulated lasso data needs n >= 2 and p >= 3".into()
            })?;
            simulate_sparse_linear(n, p, ctx.seed)?
        }
    };
    let explicit = s.optional("lambda-grid", a.lambda_grid)?;
    let grid = match explicit {
        Some(g) => g.0,
        None => {
            let size = s.value("grid-size", a.grid_size, 20usize)?;
            let ratio = s.value("ratio", a.ratio, 0.01f64)?;
            default_lambda_grid(&data, size, ratio)?
        }
    };
    let fd_step = s.value("fd-step", a.fd_step, TheoremOptions::default().fd_step)?;
    ensure(fd_step > 0.0, || "fd-step must be positive".into())?;
    let emitter = ctx.emitter()?;
    let topts = TheoremOptions {
        fd_step,
        ..TheoremOptions::default()
    };
    emitter.rows(&lasso_path_with_theorem(&data, &grid, &topts)?)
}

/// Displayable path wrapper so data paths land in the header.
#[derive(Debug, Clone)]
struct Path(PathBuf);

impl From<PathBuf> for Path {
    fn from(p: PathBuf) -> Self {
        Path(p)
    }
}

impl FromStr for Path {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(Path(PathBuf::from(s)))
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.display())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KnotChoice {
    /// Every observed value in the parent's support.
    All,
    /// Automatic end span and min span.
    Friedman,
}

impl FromStr for KnotChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <KnotChoice as ValueEnum>::from_str(s, true)
    }
}

impl fmt::Display for KnotChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KnotChoice::All => "all",
            KnotChoice::Friedman => "friedman",
        })
    }
}

#[derive(Debug, Args)]
pub struct MarsKnobs {
    /// Maximum interaction degree (1 = additive).
    #[arg(long)]
    degree: Option<usize>,
    /// Forward-pass cap on nonintercept terms.
    #[arg(long)]
    nk: Option<usize>,
    /// Candidate knot rule.
    #[arg(long, value_enum)]
    knots: Option<KnotChoice>,
    /// Keep every k-th candidate knot (replaces the min span).
    #[arg(long)]
    knot_stride: Option<usize>,
}

struct MarsBase {
    degree: usize,
    nk: Option<usize>,
    knots: KnotRule,
}

impl MarsKnobs {
    /// `nk_default` of `None` means the command takes a grid instead.
    fn resolve(
        self,
        s: &mut Settings,
        degree: usize,
        nk_default: Option<usize>,
        knots: KnotChoice,
    ) -> Result<MarsBase> {
        let degree = s.value("degree", self.degree, degree)?;
        ensure(degree >= 1, || "degree must be at least 1".into())?;
        let nk = match nk_default {
            Some(d) => Some(s.value("nk", self.nk, d)?),
            None => None,
        };
        let choice = s.value("knots", self.knots, knots)?;
        let mut rule = match choice {
            KnotChoice::All => KnotRule::default(),
            KnotChoice::Friedman => KnotRule::friedman(),
        };
        if let Some(k) = s.optional("knot-stride", self.knot_stride)? {
            ensure(k >= 1, || "knot-stride must be at least 1".into())?;
            rule.minspan = Span::Fixed(k);
        }
        Ok(MarsBase {
            degree,
            nk,
            knots: rule,
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum MarsAction {
    /// Corrected penalty c from the empirical df of the unpruned forward pass.
    Correct(CorrectArgs),
    /// Nominal against empirical df over an nk grid, with the fitted line.
    Check(CheckArgs),
    /// Test-set R^2 of default, corrected and cross-validated penalties.
    R2study(R2Args),
    /// Fit MARS to a CSV data set and dump the model.
    FitCsv(FitCsvArgs),
}

impl MarsAction {
    pub fn name(&self) -> &'static str {
        match self {
            MarsAction::Correct(_) => "mars correct",
            MarsAction::Check(_) => "mars check",
            MarsAction::R2study(_) => "mars r2study",
            MarsAction::FitCsv(_) => "mars fit-csv",
        }
    }
}

pub fn mars(ctx: &mut Context, action: MarsAction) -> Result<()> {
    match action {
        MarsAction::Correct(a) => mars_correct(ctx, a),
        MarsAction::Check(a) => mars_check(ctx, a),
        MarsAction::R2study(a) => mars_r2(ctx, a),
        MarsAction::FitCsv(a) => mars_fit_csv(ctx, a),
    }
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[command(flatten)]
    mars: MarsKnobs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Debug, Serialize)]
struct CorrectionRow {
    n: usize,
    p: usize,
    degree: usize,
    nk: usize,
    df_hat: f64,
    se: f64,
    r: usize,
    c_default: f64,
    c_corrected: f64,
}

fn mars_correct(ctx: &mut Context, a: CorrectArgs) -> Result<()> {
    let s = &mut ctx.settings;
    let n = s.value("n", a.n, 100usize)?;
    let p = s.value("p", a.p, 1usize)?;
    let m = s.value("m", a.m, 100usize)?;
    let reps = s.value("reps", a.reps, 4usize)?;
    let base = a.mars.resolve(s, 1, Some(21), KnotChoice::Friedman)?;
    check_mc(n, m, reps)?;
    ensure(p >= 1, || "p must be at least 1".into())?;
    let nk = base.nk.expect("single nk");
    let emitter = ctx.emitter()?;
    let cfg = CorrectionConfig {
        n,
        p,
        degree: base.degree,
        nk,
        m,
        reps,
        seed: ctx.seed,
        knots: base.knots,
    };
    let pc = correct_penalty(&cfg)?;
    match emitter.format {
        Format::Csv => emitter.rows(&[CorrectionRow {
            n,
            p,
            degree: base.degree,
            nk,
            df_hat: pc.df_hat.value,
            se: pc.df_hat.std_error,
            r: pc.r,
            c_default: pc.c_default,
            c_corrected: pc.c_corrected,
        }]),
        Format::Json => emitter.json(json!({
            "df_hat": pc.df_hat.value,
            "se": pc.df_hat.std_error,
            "r": pc.r,
            "r_distribution": pc.r_distribution,
            "c_default": pc.c_default,
            "c_corrected": pc.c_corrected,
        })),
    }
}

/// `default`, `corrected`, `cv` or a fixed number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyArg {
    Default,
    Corrected,
    Cv,
    Fixed(f64),
}

impl FromStr for PenaltyArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "default" => Ok(PenaltyArg::Default),
            "corrected" => Ok(PenaltyArg::Corrected),
            "cv" => Ok(PenaltyArg::Cv),
            other => match other.parse::<f64>() {
                Ok(c) if c >= 0.0 && c.is_finite() => Ok(PenaltyArg::Fixed(c)),
                _ => Err(format!(
                    "expected default, corrected, cv or a non-negative number, got {other:?}"
                )),
            },
        }
    }
}

impl fmt::Display for PenaltyArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyArg::Default => f.write_str("default"),
            PenaltyArg::Corrected => f.write_str("corrected"),
            PenaltyArg::Cv => f.write_str("cv"),
            PenaltyArg::Fixed(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    mars: MarsKnobs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Forward-pass caps to sweep, comma separated.
    #[arg(long)]
    nk_grid: Option<List<usize>>,
    /// `corrected` (per nk), `default`, or a fixed c.
    #[arg(long)]
    penalty: Option<PenaltyArg>,
    /// Run the backward pass inside the procedure.
    #[arg(long)]
    prune: Option<bool>,
}

fn mars_check(ctx: &mut Context, a: CheckArgs) -> Result<()> {
    let s = &mut ctx.settings;
    let n = s.value("n", a.n, 100usize)?;
    let p = s.value("p", a.p, 1usize)?;
    let m = s.value("m", a.m, 100usize)?;
    let reps = s.value("reps", a.reps, 4usize)?;
    let base = a.mars.resolve(s, 1, None, KnotChoice::Friedman)?;
    let nk_grid = s
        .value("nk-grid", a.nk_grid, List(vec![3usize, 5, 7, 9, 11, 15, 19]))?
        .0;
    let penalty = s.value("penalty", a.penalty, PenaltyArg::Corrected)?;
    let prune = s.value("prune", a.prune, false)?;
    check_mc(n, m, reps)?;
    let penalty = match penalty {
        PenaltyArg::Corrected => PenaltyChoice::Corrected,
        PenaltyArg::Default => PenaltyChoice::Fixed(default_penalty(base.degree)),
        PenaltyArg::Fixed(c) => PenaltyChoice::Fixed(c),
        PenaltyArg::Cv => return Err(CliError::config("penalty cv is only available for fit-csv and r2study")),
    };
    let emitter = ctx.emitter()?;
    let cfg = ConsistencyConfig {
        n,
        p,
        degree: base.degree,
        nk_grid,
        penalty,
        prune,
        m,
        reps,
        seed: ctx.seed,
        knots: base.knots,
    };
    let check = self_consistency_check(&cfg)?;
    if let Some(nk) = check.truncated_at {
        eprintln!("sweep stopped at nk = {nk}: the GCV denominator degenerates");
    }
    match check.fit_line() {
        Some((slope, intercept)) => {
            let ok = (slope - 1.0).abs() <= 0.15 && intercept.abs() <= 1.5;
            eprintln!(
                "nominal = {slope:.3} * empirical {} {:.3}; slope within 0.15 of 1 and intercept within 1.5 of 0: {}",
                if intercept < 0.0 { "-" } else { "+" },
                intercept.abs(),
                if ok { "yes" } else { "no" }
            );
        }
        None => eprintln!("fewer than two grid points; no line fitted"),
    }
    eprintln!("mean nominal - empirical: {:.3}", check.mean_bias());
    emitter.rows(&check.rows)
}

#[derive(Debug, Args)]
pub struct R2Args {
    #[command(flatten)]
    mars: MarsKnobs,
    #[arg(long)]
    n: Option<usize>,
    /// Size of the fresh test set.
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    p_grid: Option<List<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    /// Candidate penalties for cross-validation.
    #[arg(long)]
    c_grid: Option<List<f64>>,
    #[arg(long)]
    folds: Option<usize>,
    /// Monte Carlo repetitions of the penalty correction.
    #[arg(long)]
    correction_m: Option<usize>,
    #[arg(long)]
    correction_reps: Option<usize>,
}

fn mars_r2(ctx: &mut Context, a: R2Args) -> Result<()> {
    let d = R2Config::default();
    let s = &mut ctx.settings;
    let n = s.value("n", a.n, d.n)?;
    let n_test = s.value("n-test", a.n_test, d.n_test)?;
    let p_grid = s.value("p-grid", a.p_grid, List(d.p_grid.clone()))?.0;
    let reps = s.value("reps", a.reps, d.reps)?;
    let base = a.mars.resolve(s, d.degree, Some(d.nk), KnotChoice::Friedman)?;
    let c_grid = s.value("c-grid", a.c_grid, List(d.c_grid.clone()))?.0;
    let folds = s.value("folds", a.folds, d.folds)?;
    let correction_m = s.value("correction-m", a.correction_m, d.correction_m)?;
    let correction_reps = s.value("correction-reps", a.correction_reps, d.correction_reps)?;
    check_mc(n, correction_m, reps)?;
    ensure(correction_reps >= 1 && n_test >= 1, || {
        "correction-reps and n-test must be positive".into()
    })?;
    ensure(p_grid.iter().all(|&p| p >= 2), || {
        "the tensor-product design needs p >= 2".into()
    })?;
    ensure(folds >= 2, || "folds must be at least 2".into())?;
    let emitter = ctx.emitter()?;
    let cfg = R2Config {
        n,
        n_test,
        p_grid,
        degree: base.degree,
        nk: base.nk.expect("single nk"),
        reps,
        seed: ctx.seed,
        c_grid,
        folds,
        correction_m,
        correction_reps,
        knots: base.knots,
    };
    emitter.rows(&r2_study(&cfg)?)
}

#[derive(Debug, Args)]
pub struct FitCsvArgs {
    #[command(flatten)]
    mars: MarsKnobs,
    /// CSV data set (columns x1..xp, y).
    #[arg(long)]
    data: Option<PathBuf>,
    /// `default`, `corrected`, `cv`, or a fixed c.
    #[arg(long)]
    penalty: Option<PenaltyArg>,
    #[arg(long)]
    c_grid: Option<List<f64>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    correction_m: Option<usize>,
    #[arg(long)]
    correction_reps: Option<usize>,
}

#[derive(Debug, Serialize)]
struct TermRow {
    term: String,
    coefficient: f64,
}

fn describe_term(t: &BasisTerm) -> String {
    if t.factors.is_empty() {
        return "1".into();
    }
    let parts: Vec<String> = t
        .factors
        .iter()
        .map(|f| match f.direction {
            Direction::Plus => format!("h(x{}-{})", f.variable + 1, f.knot),
            Direction::Minus => format!("h({}-x{})", f.knot, f.variable + 1),
        })
        .collect();
    parts.join("*")
}

fn mars_fit_csv(ctx: &mut Context, a: FitCsvArgs) -> Result<()> {
    let s = &mut ctx.settings;
    let path = s.required("data", a.data.map(Path::from))?;
    let base = a.mars.resolve(s, 1, Some(21), KnotChoice::All)?;
    let penalty = s.value("penalty", a.penalty, PenaltyArg::Default)?;
    let d = R2Config::default();
    let (c_grid, folds, correction) = match penalty {
        PenaltyArg::Cv => (
            s.value("c-grid", a.c_grid, List(d.c_grid))?.0,
            s.value("folds", a.folds, d.folds)?,
            None,
        ),
        PenaltyArg::Corrected => {
            let m = s.value("correction-m", a.correction_m, d.correction_m)?;
            let reps = s.value("correction-reps", a.correction_reps, d.correction_reps)?;
            check_mc(2, m, reps)?;
            (Vec::new(), 0, Some((m, reps)))
        }
        _ => (Vec::new(), 0, None),
    };
    let nk = base.nk.expect("single nk");
    let data = load_data(&path.0)?;
    let emitter = ctx.emitter()?;

    let c = match penalty {
        PenaltyArg::Default => default_penalty(base.degree),
        PenaltyArg::Fixed(c) => c,
        PenaltyArg::Corrected => {
            let (m, reps) = correction.expect("resolved above");
            let cfg = CorrectionConfig {
                n: data.n(),
                p: data.p(),
                degree: base.degree,
                nk,
                m,
                reps,
                seed: ctx.seed,
                knots: base.knots,
            };
            correct_penalty(&cfg)?.c_corrected
        }
        PenaltyArg::Cv => cv_penalty_with(&data, base.degree, nk, &c_grid, folds, ctx.seed, base.knots)?.c,
    };
    let opts = MarsOptions::new(nk, base.degree).with_c(c).with_knots(base.knots);
    let model = fit_mars(&data, &opts)?;
    match emitter.format {
        Format::Csv => {
            let rows: Vec<TermRow> = model
                .terms
                .iter()
                .zip(&model.coefficients)
                .map(|(t, &coefficient)| TermRow {
                    term: describe_term(t),
                    coefficient,
                })
                .collect();
            emitter.rows(&rows)
        }
        Format::Json => emitter.json(json!({
            "c": c,
            "nominal_df": model.nominal_df(),
            "model": model.to_json(),
        })),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProcedureName {
    Ols,
    Ridge,
    Knn,
    Tree,
    Lasso,
    Mars,
    Spline,
    SmoothingSpline,
    Constant,
}

impl FromStr for ProcedureName {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <ProcedureName as ValueEnum>::from_str(s, true)
    }
}

impl fmt::Display for ProcedureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.to_possible_value().expect("no skipped variants");
        f.write_str(v.get_name())
    }
}

#[derive(Debug, Args)]
pub struct DfArgs {
    /// CSV data set (columns x1..xp, y).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    procedure: Option<ProcedureName>,
    /// Ridge, lasso or smoothing-spline penalty.
    #[arg(long)]
    lambda: Option<f64>,
    /// Neighbours for knn.
    #[arg(long)]
    k: Option<usize>,
    /// Tree depth.
    #[arg(long)]
    depth: Option<usize>,
    /// Regression-spline basis size.
    #[arg(long)]
    j: Option<usize>,
    #[command(flatten)]
    mars: MarsKnobs,
    /// MARS penalty c (defaults by degree).
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Debug, Serialize)]
struct DfRow {
    procedure: String,
    params: String,
    n: usize,
    p: usize,
    m: usize,
    reps: usize,
    seed: u64,
    df_hat: f64,
    se: f64,
}

fn build_procedure(name: ProcedureName, a: DfArgs, s: &mut Settings) -> Result<Box<dyn Procedure>> {
    Ok(match name {
        ProcedureName::Ols => Box::new(Ols),
        ProcedureName::Constant => Box::new(constant_mean()),
        ProcedureName::Ridge => Box::new(Ridge(RidgeSpec::new(s.value("lambda", a.lambda, 1.0)?)?)),
        ProcedureName::Lasso => Box::new(Lasso::new(s.value("lambda", a.lambda, 1.0)?)?),
        ProcedureName::Knn => {
            let k = s.value("k", a.k, 5usize)?;
            ensure(k >= 1, || "k must be at least 1".into())?;
            Box::new(Knn(KnnSpec { k }))
        }
        ProcedureName::Tree => Box::new(Tree {
            depth: s.value("depth", a.depth, 2usize)?,
        }),
        ProcedureName::Spline => {
            let j = s.value("j", a.j, 10usize)?;
            ensure(j >= 4, || "j must be at least 4".into())?;
            Box::new(Spline::new(SplineSpec::regression(j)))
        }
        ProcedureName::SmoothingSpline => {
            Box::new(Spline::new(SplineSpec::smoothing(s.value("lambda", a.lambda, 0.01)?)?))
        }
        ProcedureName::Mars => {
            let base = a.mars.resolve(s, 1, Some(21), KnotChoice::All)?;
            let c = s.value("c", a.c, default_penalty(base.degree))?;
            ensure(c >= 0.0, || "c must be non-negative".into())?;
            let opts = MarsOptions::new(base.nk.expect("single nk"), base.degree)
                .with_c(c)
                .with_knots(base.knots);
            Box::new(Mars { opts })
        }
    })
}

/// Monte Carlo df on the CSV design, with the procedure's own fit to the
/// observed response as the true mean and unit-variance noise.
pub fn df(ctx: &mut Context, a: DfArgs) -> Result<()> {
    let s = &mut ctx.settings;
    let path = s.required("data", a.data.clone().map(Path::from))?;
    let name = s.value("procedure", a.procedure, ProcedureName::Ols)?;
    let m = s.value("m", a.m, 100usize)?;
    let reps = s.value("reps", a.reps, 10usize)?;
    let data = load_data(&path.0)?;
    check_mc(data.n(), m, reps)?;
    let procedure = build_procedure(name, a, s)?;
    let emitter = ctx.emitter()?;

    let mu = procedure.fit(&data)?.fitted;
    let exp = DfExperiment::new(procedure.as_ref(), data.x().clone())
        .with_mu(mu)
        .with_m(m)
        .with_reps(reps)
        .with_seed(ctx.seed);
    let est = estimate_df(&exp)?;
    let record = DfRecord::new(&exp, &est);
    match emitter.format {
        Format::Csv => emitter.rows(&[DfRow {
            procedure: record.procedure,
            params: record.params.to_string(),
            n: record.n,
            p: record.p,
            m: record.m,
            reps: record.reps,
            seed: record.seed,
            df_hat: record.df_hat,
            se: record.se,
        }]),
        Format::Json => emitter.json(json!({ "record": record, "replicates": est.replicates })),
    }
}
