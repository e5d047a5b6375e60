//! Penalty correction for MARS, the nominal-versus-empirical df check, CV
//! selection of the penalty and the tensor-product prediction study.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{backward_pass, default_penalty, forward_pass_with, KnotRule, Mars, MarsOptions};
use crate::criteria::r_squared_decrease;
use crate::data::{
    child_seed, gaussian_design, mean_and_se, rng_from_seed, simulate_gaussian_response, DataSet, DfEstimate, FitOutput,
};
use crate::empirical::{run_experiment, DfExperiment};
use crate::error::{DfError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct CorrectionConfig {
    pub n: usize,
    pub p: usize,
    pub degree: usize,
    pub nk: usize,
    pub m: usize,
    pub reps: usize,
    pub seed: u64,
    pub knots: KnotRule,
}

#[derive(Debug, Clone, Serialize)]
pub struct PenaltyCorrection {
    pub c_default: f64,
    pub c_corrected: f64,
    /// Empirical df of the unpruned forward pass.
    pub df_hat: DfEstimate,
    /// Modal design rank over the Monte Carlo fits.
    pub r: usize,
    /// (rank, fraction of fits) for every rank that occurred.
    pub r_distribution: Vec<(usize, f64)>,
}

/// Solves df_hat = r + c (r - 1) / 2 for c on the unpruned forward pass,
/// with pure-noise responses on a fixed standard Gaussian design:
/// c = 2 (df_hat - r)+ / (r - 1).
pub fn correct_penalty(cfg: &CorrectionConfig) -> Result<PenaltyCorrection> {
    if cfg.nk < 2 {
        return Err(DfError::invalid("penalty correction needs nk >= 2"));
    }
    let proc = Mars {
        opts: MarsOptions::new(cfg.nk, cfg.degree)
            .with_prune(false)
            .with_knots(cfg.knots),
    };
    let exp = DfExperiment::gaussian(&proc, cfg.n, cfg.p, cfg.seed)
        .with_m(cfg.m)
        .with_reps(cfg.reps);
    // each forward step adds at most two terms, so r <= nk + 2
    let ranks: Vec<usize> = (1..=cfg.nk + 2).collect();
    let indicators: Vec<Box<dyn Fn(&FitOutput) -> f64 + Sync>> = ranks
        .iter()
        .map(|&r| {
            Box::new(move |f: &FitOutput| if f.meta_value("r") == Some(r as f64) { 1.0 } else { 0.0 })
                as Box<dyn Fn(&FitOutput) -> f64 + Sync>
        })
        .collect();
    let refs: Vec<&(dyn Fn(&FitOutput) -> f64 + Sync)> = indicators.iter().map(|b| b.as_ref()).collect();
    let run = run_experiment(&exp, &refs)?;
    let r_distribution: Vec<(usize, f64)> = ranks
        .iter()
        .zip(&run.extracted)
        .filter(|(_, e)| e.value > 0.0)
        .map(|(&r, e)| (r, e.value))
        .collect();
    let r = r_distribution
        .iter()
        .fold(None::<(usize, f64)>, |acc, &(r, f)| match acc {
            Some((_, best)) if best >= f => acc,
            _ => Some((r, f)),
        })
        .map_or(1, |(r, _)| r);
    if r < 2 {
        return Err(DfError::DegenerateCorrection(r));
    }
    let c_corrected = 2.0 * (run.df.value - r as f64).max(0.0) / (r as f64 - 1.0);
    Ok(PenaltyCorrection {
        c_default: default_penalty(cfg.degree),
        c_corrected,
        df_hat: run.df,
        r,
        r_distribution,
    })
}

/// Penalty used at each nk of a consistency sweep.
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyChoice {
    Fixed(f64),
    /// Corrected separately at every nk by [`correct_penalty`] on the same
    /// design and seed.
    Corrected,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyConfig {
    pub n: usize,
    pub p: usize,
    pub degree: usize,
    pub nk_grid: Vec<usize>,
    pub penalty: PenaltyChoice,
    /// Run the backward pass; when false the nominal df is that of the
    /// forward model at the given penalty.
    pub prune: bool,
    pub m: usize,
    pub reps: usize,
    pub seed: u64,
    pub knots: KnotRule,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyRow {
    pub nk: usize,
    /// Mean of r + c (r-1)/2 over the fitted models.
    pub nominal_df: f64,
    pub nominal_se: f64,
    pub empirical_df: f64,
    pub se: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyCheck {
    pub rows: Vec<ConsistencyRow>,
    /// First nk at which the GCV denominator degenerated; the sweep stops there.
    pub truncated_at: Option<usize>,
}

impl ConsistencyCheck {
    /// Least-squares line of nominal on empirical df: (slope, intercept).
    pub fn fit_line(&self) -> Option<(f64, f64)> {
        let k = self.rows.len();
        if k < 2 {
            return None;
        }
        let mx = self.rows.iter().map(|r| r.empirical_df).sum::<f64>() / k as f64;
        let my = self.rows.iter().map(|r| r.nominal_df).sum::<f64>() / k as f64;
        let sxx: f64 = self.rows.iter().map(|r| (r.empirical_df - mx).powi(2)).sum();
        let sxy: f64 = self
            .rows
            .iter()
            .map(|r| (r.empirical_df - mx) * (r.nominal_df - my))
            .sum();
        if sxx == 0.0 {
            return None;
        }
        let slope = sxy / sxx;
        Some((slope, my - slope * mx))
    }

    /// Mean of nominal minus empirical df over the grid.
    pub fn mean_bias(&self) -> f64 {
        self.rows.iter().map(|r| r.nominal_df - r.empirical_df).sum::<f64>() / self.rows.len() as f64
    }
}

fn is_degenerate_gcv(e: &DfError) -> bool {
    match e {
        DfError::DegenerateGcv { .. } => true,
        DfError::Replicate { source, .. } => is_degenerate_gcv(source),
        _ => false,
    }
}

/// For each nk: the nominal df of the fitted models and the empirical df of
/// the whole procedure, on pure-noise responses over one fixed standard
/// Gaussian design.
pub fn self_consistency_check(cfg: &ConsistencyConfig) -> Result<ConsistencyCheck> {
    let mut rows = Vec::new();
    let x = gaussian_design(cfg.n, cfg.p, child_seed(cfg.seed, u64::MAX));
    for &nk in &cfg.nk_grid {
        let c = match cfg.penalty {
            PenaltyChoice::Fixed(c) => c,
            PenaltyChoice::Corrected => {
                let corr = CorrectionConfig {
                    n: cfg.n,
                    p: cfg.p,
                    degree: cfg.degree,
                    nk,
                    m: cfg.m,
                    reps: cfg.reps,
                    seed: cfg.seed,
                    knots: cfg.knots,
                };
                correct_penalty(&corr)?.c_corrected
            }
        };
        let proc = Mars {
            opts: MarsOptions::new(nk, cfg.degree)
                .with_c(c)
                .with_prune(cfg.prune)
                .with_knots(cfg.knots),
        };
        let exp = DfExperiment::new(&proc, x.clone())
            .with_m(cfg.m)
            .with_reps(cfg.reps)
            .with_seed(cfg.seed);
        let nominal = |f: &FitOutput| f.meta_value("nominal").unwrap_or(f64::NAN);
        match run_experiment(&exp, &[&nominal]) {
            Ok(run) => rows.push(ConsistencyRow {
                nk,
                nominal_df: run.extracted[0].value,
                nominal_se: run.extracted[0].std_error,
                empirical_df: run.df.value,
                se: run.df.std_error,
                c,
            }),
            Err(e) if is_degenerate_gcv(&e) => {
                return Ok(ConsistencyCheck {
                    rows,
                    truncated_at: Some(nk),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ConsistencyCheck {
        rows,
        truncated_at: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CvResult {
    pub c: f64,
    /// Mean squared prediction error per grid value; infinite where the
    /// GCV denominator degenerated on some fold.
    pub errors: Vec<f64>,
}

/// k-fold cross-validation of the full pipeline over `c_grid`. The forward
/// pass does not depend on c, so each fold grows once and prunes per c.
/// Ties go to the smaller c.
pub fn cv_penalty(
    data: &DataSet,
    degree: usize,
    nk: usize,
    c_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    cv_penalty_with(data, degree, nk, c_grid, folds, seed, KnotRule::default())
}

/// [`cv_penalty`] with restricted knot candidates.
pub fn cv_penalty_with(
    data: &DataSet,
    degree: usize,
    nk: usize,
    c_grid: &[f64],
    folds: usize,
    seed: u64,
    knots: KnotRule,
) -> Result<CvResult> {
    if folds < 2 {
        return Err(DfError::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if c_grid.is_empty() {
        return Err(DfError::invalid("penalty grid is empty"));
    }
    let n = data.n();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let fold_rows: Vec<Vec<usize>> = (0..folds)
        .map(|k| perm.iter().skip(k).step_by(folds).copied().collect())
        .collect();
    for (k, rows) in fold_rows.iter().enumerate() {
        if rows.len() < 2 {
            return Err(DfError::InvalidFold {
                fold: k,
                size: rows.len(),
            });
        }
    }
    let per_fold: Vec<Result<Vec<f64>>> = fold_rows
        .par_iter()
        .map(|test| {
            let mut is_test = vec![false; n];
            test.iter().for_each(|&i| is_test[i] = true);
            let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
            let tr = data.select_rows(&train)?;
            let te = data.select_rows(test)?;
            let fwd = forward_pass_with(&tr, nk, degree, knots)?;
            c_grid
                .iter()
                .map(|&c| match backward_pass(&fwd, &tr, c) {
                    Ok(model) => Ok((te.y() - model.predict(te.x())).norm_squared()),
                    Err(DfError::DegenerateGcv { .. }) => Ok(f64::INFINITY),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect();
    let per_fold: Vec<Vec<f64>> = per_fold.into_iter().collect::<Result<_>>()?;
    let errors: Vec<f64> = (0..c_grid.len())
        .map(|j| per_fold.iter().map(|f| f[j]).sum::<f64>() / n as f64)
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for (&c, &e) in c_grid.iter().zip(&errors) {
        let better = match best {
            None => true,
            Some((bc, be)) => e < be || (e == be && c < bc),
        };
        if better && e.is_finite() {
            best = Some((c, e));
        }
    }
    let (c, _) =
        best.ok_or_else(|| DfError::DegenerateCriterion("GCV degenerate for every penalty in the grid".into()))?;
    Ok(CvResult { c, errors })
}

/// (x1 - 1)+ + (x1 - 1)+ (x2 - 0.8)+ for each row.
pub fn tensor_product_mean(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(x.nrows(), |i, _| {
        let h1 = (x[(i, 0)] - 1.0).max(0.0);
        h1 + h1 * (x[(i, 1)] - 0.8).max(0.0)
    })
}

/// Standard Gaussian predictors and y = mu(x) + 0.12 eps. Returns the data
/// and the true mean.
pub fn simulate_tensor_product(n: usize, p: usize, seed: u64) -> Result<(DataSet, DVector<f64>)> {
    if p < 2 {
        return Err(DfError::invalid(format!("tensor-product model needs p >= 2, got {p}")));
    }
    let x = gaussian_design(n, p, child_seed(seed, 0));
    let mu = tensor_product_mean(&x);
    let eps = simulate_gaussian_response(&DVector::zeros(n), child_seed(seed, 1))?;
    let y = &mu + eps * 0.12;
    Ok((DataSet::new(x, y)?, mu))
}

#[derive(Debug, Clone, Serialize)]
pub struct R2Config {
    pub n: usize,
    pub n_test: usize,
    pub p_grid: Vec<usize>,
    pub degree: usize,
    pub nk: usize,
    pub reps: usize,
    pub seed: u64,
    pub c_grid: Vec<f64>,
    pub folds: usize,
    /// Monte Carlo size of the penalty correction.
    pub correction_m: usize,
    pub correction_reps: usize,
    pub knots: KnotRule,
}

impl Default for R2Config {
    fn default() -> Self {
        R2Config {
            n: 200,
            n_test: 2000,
            p_grid: vec![2, 5, 10, 20],
            degree: 2,
            nk: 21,
            reps: 10,
            seed: 1,
            c_grid: (0..=20).map(|k| k as f64 * 0.5).collect(),
            folds: 10,
            correction_m: 100,
            correction_reps: 4,
            knots: KnotRule::friedman(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum R2Variant {
    Default,
    Corrected,
    Cv,
}

impl R2Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            R2Variant::Default => "default",
            R2Variant::Corrected => "corrected",
            R2Variant::Cv => "cv",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct R2Row {
    pub p: usize,
    pub variant: R2Variant,
    pub mean_r2: f64,
    pub se: f64,
    /// Mean penalty used over replications, with its SE (zero unless CV).
    pub c_used: f64,
    pub c_se: f64,
}

/// Proportional decrease in model error on fresh test draws for the
/// default, corrected and CV-selected penalties.
pub fn r2_study(cfg: &R2Config) -> Result<Vec<R2Row>> {
    let mut out = Vec::new();
    for &p in &cfg.p_grid {
        let pseed = child_seed(cfg.seed, p as u64);
        let corr = correct_penalty(&CorrectionConfig {
            n: cfg.n,
            p,
            degree: cfg.degree,
            nk: cfg.nk,
            m: cfg.correction_m,
            reps: cfg.correction_reps,
            seed: child_seed(pseed, 0),
            knots: cfg.knots,
        })?;
        let per_rep: Vec<Result<[(f64, f64); 3]>> = (0..cfg.reps)
            .into_par_iter()
            .map(|r| {
                let rseed = child_seed(child_seed(pseed, 1), r as u64);
                let (train, _) = simulate_tensor_product(cfg.n, p, child_seed(rseed, 0))?;
                let x_test = gaussian_design(cfg.n_test, p, child_seed(rseed, 1));
                let mu_test = tensor_product_mean(&x_test);
                let ybar = train.y().mean();
                let mse0 = mu_test.iter().map(|m| (ybar - m).powi(2)).sum::<f64>() / cfg.n_test as f64;
                let cv = cv_penalty_with(
                    &train,
                    cfg.degree,
                    cfg.nk,
                    &cfg.c_grid,
                    cfg.folds,
                    child_seed(rseed, 2),
                    cfg.knots,
                )?;
                let fwd = forward_pass_with(&train, cfg.nk, cfg.degree, cfg.knots)?;
                let mut res = [(0.0, 0.0); 3];
                for (slot, c) in [corr.c_default, corr.c_corrected, cv.c].into_iter().enumerate() {
                    let model = backward_pass(&fwd, &train, c)?;
                    let mse = (model.predict(&x_test) - &mu_test).norm_squared() / cfg.n_test as f64;
                    res[slot] = (r_squared_decrease(mse0, mse)?, c);
                }
                Ok(res)
            })
            .collect();
        let per_rep: Vec<[(f64, f64); 3]> = per_rep.into_iter().collect::<Result<_>>()?;
        for (slot, variant) in [R2Variant::Default, R2Variant::Corrected, R2Variant::Cv]
            .into_iter()
            .enumerate()
        {
            let r2: Vec<f64> = per_rep.iter().map(|v| v[slot].0).collect();
            let cs: Vec<f64> = per_rep.iter().map(|v| v[slot].1).collect();
            let (mean_r2, se) = mean_and_se(&r2);
            let (c_used, c_se) = mean_and_se(&cs);
            out.push(R2Row {
                p,
                variant,
                mean_r2,
                se,
                c_used,
                c_se,
            });
        }
    }
    Ok(out)
}
