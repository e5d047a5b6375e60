//! Linear smoothers with response-independent smoother matrices: least
//! squares, ridge regression and k-nearest-neighbour averaging.

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::data::{DataSet, FitOutput, SmootherMatrix};
use crate::empirical::Procedure;
use crate::error::{DfError, Result};

/// Relative singular-value cutoff used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct RidgeSpec {
    pub lambda: f64,
}

impl RidgeSpec {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(DfError::invalid(format!(
                "ridge penalty must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(RidgeSpec { lambda })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KnnSpec {
    pub k: usize,
}

/// Thin left singular vectors and singular values of `x`.
fn thin_svd(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let svd = x.clone().svd(true, false);
    (svd.u.expect("requested U"), svd.singular_values)
}

fn check_rank(d: &DVector<f64>) -> Result<()> {
    let largest = d.max();
    let smallest = d.min();
    if d.len() == 0 || !(smallest > RANK_TOL * largest) {
        return Err(DfError::SingularDesign {
            smallest,
            tol: RANK_TOL,
        });
    }
    Ok(())
}

/// U diag(w) U^T
fn weighted_projection(u: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut uw = u.clone();
    for (mut col, &wj) in uw.column_iter_mut().zip(w.iter()) {
        col *= wj;
    }
    uw * u.transpose()
}

fn smoother_fit(s: DMatrix<f64>, y: &DVector<f64>) -> Result<FitOutput> {
    let fitted = &s * y;
    Ok(FitOutput::new(fitted).with_smoother(SmootherMatrix::new(s)?))
}

/// Least squares projection X (X^T X)^{-1} X^T.
pub fn fit_ols(data: &DataSet) -> Result<FitOutput> {
    if data.p() > data.n() {
        return Err(DfError::SingularDesign {
            smallest: 0.0,
            tol: RANK_TOL,
        });
    }
    let (u, d) = thin_svd(data.x());
    check_rank(&d)?;
    let s = &u * u.transpose();
    smoother_fit(s, data.y())
}

/// Ridge smoother X (X^T X + lambda I)^{-1} X^T.
pub fn fit_ridge(data: &DataSet, spec: RidgeSpec) -> Result<FitOutput> {
    if spec.lambda == 0.0 {
        return fit_ols(data);
    }
    let (u, d) = thin_svd(data.x());
    let w = d.map(|dj| dj * dj / (dj * dj + spec.lambda));
    smoother_fit(weighted_projection(&u, &w), data.y())
}

/// sum_j d_j^2 / (d_j^2 + lambda), with 0/0 read as 0.
pub fn analytic_ridge_df(singular_values: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(DfError::invalid(format!(
            "ridge penalty must be finite and >= 0, got {lambda}"
        )));
    }
    if singular_values.iter().any(|&d| !(d >= 0.0)) {
        return Err(DfError::invalid("singular values must be non-negative"));
    }
    Ok(singular_values
        .iter()
        .map(|&d| {
            let d2 = d * d;
            if d2 == 0.0 {
                0.0
            } else {
                d2 / (d2 + lambda)
            }
        })
        .sum())
}

/// Singular values of the design, for use with [`analytic_ridge_df`].
pub fn singular_values(x: &DMatrix<f64>) -> Vec<f64> {
    x.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Average of the k nearest responses (Euclidean distance, self included,
/// distance ties broken by row index).
pub fn fit_knn(data: &DataSet, spec: KnnSpec) -> Result<FitOutput> {
    let n = data.n();
    if spec.k < 1 || spec.k > n {
        return Err(DfError::invalid(format!("k must lie in 1..={n}, got {}", spec.k)));
    }
    let x = data.x();
    let w = 1.0 / spec.k as f64;
    let mut s = DMatrix::zeros(n, n);
    let mut order: Vec<(f64, bool, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        for j in 0..n {
            let d2: f64 = x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b).powi(2)).sum();
            order.push((d2, j != i, j));
        }
        order.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        for &(_, _, j) in order.iter().take(spec.k) {
            s[(i, j)] = w;
        }
    }
    smoother_fit(s, data.y())
}

pub struct Ols;

impl Procedure for Ols {
    fn name(&self) -> String {
        "ols".into()
    }
    fn fit(&self, data: &DataSet) -> Result<FitOutput> {
        fit_ols(data)
    }
}

pub struct Ridge(pub RidgeSpec);

impl Procedure for Ridge {
    fn name(&self) -> String {
        "ridge".into()
    }
    fn params(&self) -> serde_json::Value {
        json!({ "lambda": self.0.lambda })
    }
    fn fit(&self, data: &DataSet) -> Result<FitOutput> {
        fit_ridge(data, self.0)
    }
}

pub struct Knn(pub KnnSpec);

impl Procedure for Knn {
    fn name(&self) -> String {
        "knn".into()
    }
    fn params(&self) -> serde_json::Value {
        json!({ "k": self.0.k })
    }
    fn fit(&self, data: &DataSet) -> Result<FitOutput> {
        fit_knn(data, self.0)
    }
}
