//! Independent reference solvers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

fn soft(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

/// Lasso for ||y - X b||^2 + lambda ||b||_1 by cyclic coordinate descent,
/// iterated until the duality gap of the halved problem is below
/// `gap_tol * max(1, ||y||^2 / 2)`.
pub fn cd_lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, gap_tol: f64) -> DVector<f64> {
    let p = x.ncols();
    let alpha = lambda / 2.0;
    let norms: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared()).collect();
    let mut beta = DVector::zeros(p);
    let mut r = y.clone();
    let scale = (0.5 * y.norm_squared()).max(1.0);
    for sweep in 0..1_000_000 {
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let old = beta[j];
            let rho = x.column(j).dot(&r) + norms[j] * old;
            let new = soft(rho, alpha) / norms[j];
            if new != old {
                r.axpy(old - new, &x.column(j), 1.0);
                beta[j] = new;
            }
        }
        if sweep % 5 == 0 {
            let primal = 0.5 * r.norm_squared() + alpha * beta.lp_norm(1);
            let corr = (x.transpose() * &r).amax();
            let theta = &r * if corr > alpha { alpha / corr } else { 1.0 };
            let dual = 0.5 * y.norm_squared() - 0.5 * (y - &theta).norm_squared();
            if primal - dual <= gap_tol * scale {
                return beta;
            }
        }
    }
    panic!("coordinate descent oracle did not converge");
}

/// Leave-one-out squared prediction error of the oracle lasso at each lambda.
pub fn loocv_lasso(x: &DMatrix<f64>, y: &DVector<f64>, grid: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    grid.iter()
        .map(|&lambda| {
            (0..n)
                .map(|i| {
                    let keep: Vec<usize> = (0..n).filter(|&k| k != i).collect();
                    let xi = x.select_rows(keep.iter());
                    let yi = DVector::from_iterator(n - 1, keep.iter().map(|&k| y[k]));
                    let b = cd_lasso(&xi, &yi, lambda, 1e-10);
                    (y[i] - x.row(i).transpose().dot(&b)).powi(2)
                })
                .sum::<f64>()
                / n as f64
        })
        .collect()
}
