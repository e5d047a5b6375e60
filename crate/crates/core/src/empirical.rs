//! Monte Carlo estimation of degrees of freedom.
//!
//! For a fixed design and mean vector, responses are simulated with unit
//! noise, the procedure is refit on each draw, and df is estimated as the sum
//! over observations of the sample covariance between fitted and observed
//! values. Outer replications of the whole estimate give the standard error.
//!
//! Seeding: replication `r` uses `child_seed(seed, r)` and repetition `j`
//! inside it uses `child_seed(child_seed(seed, r), j)`, so every draw is
//! fixed by the master seed regardless of how the work is scheduled.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{
    child_seed, gaussian_design, sample_covariance, simulate_gaussian_response, DataSet, DfEstimate, FitOutput,
};
use crate::error::{DfError, Result};

/// A fitting procedure: a pure map from data to fitted values.
pub trait Procedure: Sync {
    fn name(&self) -> String;

    fn params(&self) -> serde_json::Value {
        serde_json::Value::Object(Default::default())
    }

    fn fit(&self, data: &DataSet) -> Result<FitOutput>;
}

impl<P: Procedure + ?Sized> Procedure for &P {
    fn name(&self) -> String {
        (**self).name()
    }
    fn params(&self) -> serde_json::Value {
        (**self).params()
    }
    fn fit(&self, data: &DataSet) -> Result<FitOutput> {
        (**self).fit(data)
    }
}

/// Wraps a closure as a [`Procedure`].
pub struct FnProcedure<F> {
    name: String,
    f: F,
}

impl<F> FnProcedure<F>
where
    F: Fn(&DataSet) -> Result<FitOutput> + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnProcedure { name: name.into(), f }
    }
}

impl<F> Procedure for FnProcedure<F>
where
    F: Fn(&DataSet) -> Result<FitOutput> + Sync,
{
    fn name(&self) -> String {
        self.name.clone()
    }
    fn fit(&self, data: &DataSet) -> Result<FitOutput> {
        (self.f)(data)
    }
}

/// The fitted mean, `ybar * 1`.
pub fn constant_mean() -> FnProcedure<impl Fn(&DataSet) -> Result<FitOutput> + Sync> {
    FnProcedure::new("constant", |d: &DataSet| {
        let n = d.n();
        Ok(FitOutput::new(DVector::from_element(n, d.y().mean())).with_meta("trace", 1.0))
    })
}

pub const DEFAULT_M: usize = 100;
pub const DEFAULT_REPS: usize = 100;

/// One Monte Carlo df experiment on a fixed design.
#[derive(Clone)]
pub struct DfExperiment<'a> {
    pub procedure: &'a dyn Procedure,
    pub x: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub m: usize,
    pub reps: usize,
    pub seed: u64,
}

impl<'a> DfExperiment<'a> {
    /// Fixed design `x`, zero mean, default m and reps.
    pub fn new(procedure: &'a dyn Procedure, x: DMatrix<f64>) -> Self {
        let n = x.nrows();
        DfExperiment {
            procedure,
            x,
            mu: DVector::zeros(n),
            m: DEFAULT_M,
            reps: DEFAULT_REPS,
            seed: 0,
        }
    }

    /// Standard Gaussian design drawn once from the experiment seed.
    pub fn gaussian(procedure: &'a dyn Procedure, n: usize, p: usize, seed: u64) -> Self {
        let x = gaussian_design(n, p, child_seed(seed, u64::MAX));
        DfExperiment::new(procedure, x).with_seed(seed)
    }

    pub fn with_mu(mut self, mu: DVector<f64>) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(DfError::invalid(format!(
                "need at least 2 Monte Carlo repetitions, got {}",
                self.m
            )));
        }
        if self.reps < 1 {
            return Err(DfError::invalid("need at least one replication"));
        }
        if self.mu.len() != self.x.nrows() {
            return Err(DfError::invalid(format!(
                "mean length {} does not match {} design rows",
                self.mu.len(),
                self.x.nrows()
            )));
        }
        Ok(())
    }
}

pub type Extractor<'e> = &'e (dyn Fn(&FitOutput) -> f64 + Sync);

/// Everything one experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub df: DfEstimate,
    /// For each extractor: per-replication mean over the m repetitions.
    pub extracted: Vec<DfEstimate>,
    /// For each extractor: per-replication `df - mean(extractor)`.
    pub gaps: Vec<DfEstimate>,
}

struct RepetitionOutcome {
    y: DVector<f64>,
    fitted: DVector<f64>,
    extracted: Vec<f64>,
}

/// Runs the experiment, evaluating each extractor on every fit.
pub fn run_experiment(exp: &DfExperiment<'_>, extractors: &[Extractor<'_>]) -> Result<ExperimentRun> {
    exp.validate()?;
    let base = DataSet::new(exp.x.clone(), exp.mu.clone())?;
    let n = exp.n();

    let per_rep: Vec<Result<(f64, Vec<f64>)>> = (0..exp.reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = child_seed(exp.seed, r as u64);
            let outcomes: Vec<Result<RepetitionOutcome>> = (0..exp.m)
                .into_par_iter()
                .map(|j| {
                    let wrap = |e: DfError| DfError::Replicate {
                        replicate: r,
                        repetition: j,
                        source: Box::new(e),
                    };
                    let y = simulate_gaussian_response(&exp.mu, child_seed(rep_seed, j as u64)).map_err(wrap)?;
                    let data = base.with_response(y.clone()).map_err(wrap)?;
                    let fit = exp.procedure.fit(&data).map_err(wrap)?;
                    if fit.fitted.len() != n {
                        return Err(wrap(DfError::invalid(
                            "procedure returned wrong number of fitted values",
                        )));
                    }
                    let mut extracted = Vec::with_capacity(extractors.len());
                    for ex in extractors {
                        let v = ex(&fit);
                        if !v.is_finite() {
                            return Err(wrap(DfError::InvalidExtractor(v)));
                        }
                        extracted.push(v);
                    }
                    Ok(RepetitionOutcome {
                        y,
                        fitted: fit.fitted,
                        extracted,
                    })
                })
                .collect();
            let outcomes: Vec<RepetitionOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
            let df = covariance_df(&outcomes, n)?;
            let means = (0..extractors.len())
                .map(|k| outcomes.iter().map(|o| o.extracted[k]).sum::<f64>() / outcomes.len() as f64)
                .collect();
            Ok((df, means))
        })
        .collect();
    let per_rep: Vec<(f64, Vec<f64>)> = per_rep.into_iter().collect::<Result<_>>()?;

    let df = DfEstimate::from_replicates(per_rep.iter().map(|(d, _)| *d).collect(), exp.seed);
    let extracted = (0..extractors.len())
        .map(|k| DfEstimate::from_replicates(per_rep.iter().map(|(_, e)| e[k]).collect(), exp.seed))
        .collect();
    let gaps = (0..extractors.len())
        .map(|k| DfEstimate::from_replicates(per_rep.iter().map(|(d, e)| d - e[k]).collect(), exp.seed))
        .collect();
    Ok(ExperimentRun { df, extracted, gaps })
}

fn covariance_df(outcomes: &[RepetitionOutcome], n: usize) -> Result<f64> {
    let m = outcomes.len();
    let mut fi = vec![0.0; m];
    let mut yi = vec![0.0; m];
    let mut total = 0.0;
    for i in 0..n {
        for (j, o) in outcomes.iter().enumerate() {
            fi[j] = o.fitted[i];
            yi[j] = o.y[i];
        }
        total += sample_covariance(&fi, &yi)?;
    }
    Ok(total)
}

/// Empirical degrees of freedom with its standard error.
pub fn estimate_df(exp: &DfExperiment<'_>) -> Result<DfEstimate> {
    Ok(run_experiment(exp, &[])?.df)
}

/// Empirical df minus the Monte Carlo mean of trace S(y), on shared draws.
pub fn empirical_msdf(exp: &DfExperiment<'_>, trace_extractor: Extractor<'_>) -> Result<DfEstimate> {
    let mut run = run_experiment(exp, &[trace_extractor])?;
    Ok(run.gaps.remove(0))
}

/// Serializable summary of one experiment.
#[derive(Debug, Clone, Serialize)]
pub struct DfRecord {
    pub procedure: String,
    pub params: serde_json::Value,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub reps: usize,
    pub seed: u64,
    pub df_hat: f64,
    pub se: f64,
}

impl DfRecord {
    pub fn new(exp: &DfExperiment<'_>, est: &DfEstimate) -> Self {
        DfRecord {
            procedure: exp.procedure.name(),
            params: exp.procedure.params(),
            n: exp.x.nrows(),
            p: exp.x.ncols(),
            m: exp.m,
            reps: exp.reps,
            seed: exp.seed,
            df_hat: est.value,
            se: est.std_error,
        }
    }
}
