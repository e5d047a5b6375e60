//! Model-selection criteria parameterized by a degrees-of-freedom value.
//! Natural logarithms throughout.

use serde::Serialize;

use crate::error::{DfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CriterionName {
    Aic,
    Bic,
    Gcv,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CriterionValue {
    pub name: CriterionName,
    pub value: f64,
    pub df_used: f64,
    pub n: usize,
}

impl CriterionValue {
    pub fn evaluate(name: CriterionName, residuals: &[f64], df: f64) -> Result<Self> {
        let value = match name {
            CriterionName::Aic => aic(residuals, df)?,
            CriterionName::Bic => bic(residuals, df)?,
            CriterionName::Gcv => gcv(residuals, df)?,
        };
        Ok(CriterionValue {
            name,
            value,
            df_used: df,
            n: residuals.len(),
        })
    }
}

fn rss(residuals: &[f64]) -> f64 {
    residuals.iter().map(|r| r * r).sum()
}

fn check_df(n: usize, df: f64) -> Result<()> {
    if n == 0 {
        return Err(DfError::invalid("empty residual vector"));
    }
    if !(df >= 0.0) || !df.is_finite() {
        return Err(DfError::invalid(format!(
            "df must be finite and non-negative, got {df}"
        )));
    }
    Ok(())
}

fn log_rss(residuals: &[f64]) -> Result<f64> {
    let s = rss(residuals);
    if s <= 0.0 {
        return Err(DfError::DegenerateCriterion(
            "residual sum of squares is zero (log 0)".into(),
        ));
    }
    Ok(s.ln())
}

/// n log(RSS) + 2 df
pub fn aic(residuals: &[f64], df: f64) -> Result<f64> {
    check_df(residuals.len(), df)?;
    Ok(residuals.len() as f64 * log_rss(residuals)? + 2.0 * df)
}

/// n log(RSS) + df log(n)
pub fn bic(residuals: &[f64], df: f64) -> Result<f64> {
    check_df(residuals.len(), df)?;
    let n = residuals.len() as f64;
    Ok(n * log_rss(residuals)? + df * n.ln())
}

/// RSS / (1 - df/n)^2
pub fn gcv(residuals: &[f64], df: f64) -> Result<f64> {
    gcv_from_rss(rss(residuals), residuals.len(), df)
}

/// GCV from a precomputed residual sum of squares.
pub fn gcv_from_rss(rss: f64, n: usize, df: f64) -> Result<f64> {
    check_df(n, df)?;
    if df >= n as f64 {
        return Err(DfError::DegenerateCriterion(format!(
            "df {df} is not below n = {n}; GCV denominator vanishes"
        )));
    }
    let d = 1.0 - df / n as f64;
    Ok(rss / (d * d))
}

/// Proportional decrease in model error, (mse0 - mse) / mse0.
pub fn r_squared_decrease(mse0: f64, mse: f64) -> Result<f64> {
    if !(mse0 > 0.0) || !mse0.is_finite() {
        return Err(DfError::invalid(format!("baseline error must be positive, got {mse0}")));
    }
    if !(mse >= 0.0) {
        return Err(DfError::invalid(format!("model error must be non-negative, got {mse}")));
    }
    Ok((mse0 - mse) / mse0)
}
