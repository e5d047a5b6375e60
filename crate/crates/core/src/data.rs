//! Shared data model: data sets, smoother matrices, df estimates, seeded
//! Gaussian simulation and the sample covariance used by the Monte Carlo
//! estimators.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{DfError, Result};

/// Design matrix plus response. Rows are observations.
#[derive(Debug, Clone)]
pub struct DataSet {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl DataSet {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(DfError::invalid(format!(
                "design must be at least 1x1, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if y.len() != x.nrows() {
            return Err(DfError::invalid(format!(
                "response length {} does not match {} design rows",
                y.len(),
                x.nrows()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(DfError::invalid("data contain non-finite entries"));
        }
        Ok(DataSet { x, y })
    }

    /// Same design, new response. Used by the Monte Carlo loops.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        DataSet::new(self.x.clone(), y)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        DataSet::new(x, y)
    }

    /// Reads a CSV with a header row naming predictors `x1..xp` and the
    /// response `y`. Column order in the file is free.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| DfError::Csv {
                row: 0,
                message: e.to_string(),
            })?
            .clone();

        let mut y_col = None;
        let mut x_cols: Vec<(usize, usize)> = Vec::new();
        for (col, name) in headers.iter().enumerate() {
            if name == "y" {
                if y_col.replace(col).is_some() {
                    return Err(DfError::Csv {
                        row: 0,
                        message: "duplicate column y".into(),
                    });
                }
            } else if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                x_cols.push((idx, col));
            } else {
                return Err(DfError::Csv {
                    row: 0,
                    message: format!("unexpected column name {name:?} (expected x1..xp and y)"),
                });
            }
        }
        let y_col = y_col.ok_or_else(|| DfError::Csv {
            row: 0,
            message: "missing column y".into(),
        })?;
        x_cols.sort_unstable();
        if x_cols.is_empty() || x_cols.iter().enumerate().any(|(k, &(idx, _))| idx != k + 1) {
            return Err(DfError::Csv {
                row: 0,
                message: "predictor columns must be named x1..xp without gaps".into(),
            });
        }

        let p = x_cols.len();
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for (k, record) in rdr.records().enumerate() {
            let row = k + 1;
            let record = record.map_err(|e| DfError::Csv {
                row,
                message: e.to_string(),
            })?;
            let parse = |col: usize| -> Result<f64> {
                let cell = record.get(col).unwrap_or("");
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(DfError::Csv {
                        row,
                        message: format!("non-numeric cell {cell:?}"),
                    }),
                }
            };
            for &(_, col) in &x_cols {
                xs.push(parse(col)?);
            }
            ys.push(parse(y_col)?);
        }
        let n = ys.len();
        if n == 0 {
            return Err(DfError::Csv {
                row: 0,
                message: "no data rows".into(),
            });
        }
        DataSet::new(DMatrix::from_row_slice(n, p, &xs), DVector::from_vec(ys))
    }
}

/// An n x n linear operator with fitted = S y.
#[derive(Debug, Clone)]
pub struct SmootherMatrix(DMatrix<f64>);

impl SmootherMatrix {
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        if !s.is_square() {
            return Err(DfError::invalid(format!(
                "smoother must be square, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(DfError::invalid("smoother has non-finite entries"));
        }
        Ok(SmootherMatrix(s))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.0 * y
    }
}

/// A Monte Carlo df value with its standard error over outer replications.
#[derive(Debug, Clone, Serialize)]
pub struct DfEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_reps: usize,
    pub seed: u64,
    /// Per-replication values; their mean is `value`.
    pub replicates: Vec<f64>,
}

impl DfEstimate {
    pub fn from_replicates(replicates: Vec<f64>, seed: u64) -> Self {
        let (value, std_error) = mean_and_se(&replicates);
        DfEstimate {
            value,
            std_error,
            n_reps: replicates.len(),
            seed,
            replicates,
        }
    }
}

/// Mean and standard error (sample SD / sqrt(k)); the SE is 0 for k = 1.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

pub type FitMeta = BTreeMap<String, f64>;

/// Result of one fit: fitted values, optionally the smoother that produced
/// them, and a procedure-specific record (active-set size, leaf count, ...).
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub fitted: DVector<f64>,
    pub smoother: Option<SmootherMatrix>,
    pub meta: FitMeta,
}

impl FitOutput {
    pub fn new(fitted: DVector<f64>) -> Self {
        FitOutput {
            fitted,
            smoother: None,
            meta: FitMeta::new(),
        }
    }

    pub fn with_smoother(mut self, s: SmootherMatrix) -> Self {
        self.meta.insert("trace".into(), s.trace());
        self.smoother = Some(s);
        self
    }

    pub fn with_meta(mut self, key: &str, value: f64) -> Self {
        self.meta.insert(key.to_string(), value);
        self
    }

    pub fn meta_value(&self, key: &str) -> Option<f64> {
        self.meta.get(key).copied()
    }

    /// Trace of the (possibly response-dependent) smoother behind this fit.
    pub fn trace(&self) -> Option<f64> {
        self.meta_value("trace")
    }

    pub fn residuals(&self, y: &DVector<f64>) -> DVector<f64> {
        y - &self.fitted
    }
}

/// Derives a child seed from a master seed and an index (splitmix64 mix).
pub fn child_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws y_i ~ N(mu_i, 1) independently. A pure function of (mu, seed).
pub fn simulate_gaussian_response(mu: &DVector<f64>, seed: u64) -> Result<DVector<f64>> {
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(DfError::invalid("mean vector has non-finite entries"));
    }
    let mut rng = rng_from_seed(seed);
    Ok(mu.map(|m| {
        let z: f64 = StandardNormal.sample(&mut rng);
        m + z
    }))
}

/// n x p matrix of independent standard normal entries.
pub fn gaussian_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    // row-major fill so that a row's draws do not depend on p's column order
    let mut m = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            m[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    m
}

/// n x p matrix of independent Uniform(0, 1) entries.
pub fn uniform_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    let mut m = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            m[(i, j)] = rng.random::<f64>();
        }
    }
    m
}

/// Sample covariance with the m - 1 denominator.
pub fn sample_covariance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DfError::invalid(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    let m = a.len();
    if m < 2 {
        return Err(DfError::InsufficientData { needed: 2, got: m });
    }
    let ma = a.iter().sum::<f64>() / m as f64;
    let mb = b.iter().sum::<f64>() / m as f64;
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    Ok(s / (m - 1) as f64)
}
