//! Lawson-Hanson active-set solver for min ||A x - b|| subject to x >= 0.

use nalgebra::{DMatrix, DVector};

use crate::error::{DfError, Result};

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    /// Columns whose coefficient is free (strictly positive).
    pub passive: Vec<usize>,
    pub iterations: usize,
}

/// Least squares restricted to `cols` (other coefficients zero), from the
/// Gram matrix A'A and A'b.
fn restricted_ls(gram: &DMatrix<f64>, atb: &DVector<f64>, cols: &[usize]) -> DVector<f64> {
    let mut z = DVector::zeros(gram.ncols());
    if cols.is_empty() {
        return z;
    }
    let k = cols.len();
    let sub = DMatrix::from_fn(k, k, |r, c| gram[(cols[r], cols[c])]);
    let rhs = DVector::from_fn(k, |r, _| atb[cols[r]]);
    let sol = match sub.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => sub
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(k)),
    };
    for (r, &c) in cols.iter().enumerate() {
        z[c] = sol[r];
    }
    z
}

/// min ||A x - b|| subject to x >= 0.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    if b.len() != a.nrows() {
        return Err(DfError::invalid(format!(
            "rhs length {} does not match {} rows",
            b.len(),
            a.nrows()
        )));
    }
    let scale = a.amax().max(1.0) * b.amax().max(1.0) * a.nrows().max(a.ncols()) as f64;
    nnls_gram(&(a.transpose() * a), &(a.transpose() * b), scale)
}

/// Lawson-Hanson iterations on the normal equations, for repeated solves
/// with a fixed design: `gram = A'A`, `atb = A'b`. `scale` sets the
/// optimality tolerance, 10 eps scale, on the gradient A'(b - Ax).
pub fn nnls_gram(gram: &DMatrix<f64>, atb: &DVector<f64>, scale: f64) -> Result<NnlsSolution> {
    let n = gram.ncols();
    if gram.nrows() != n || atb.len() != n {
        return Err(DfError::invalid("Gram matrix must be square and match A'b"));
    }
    let mut x = DVector::zeros(n);
    let mut in_p = vec![false; n];
    let tol = 10.0 * f64::EPSILON * scale;
    let max_outer = 3 * n + 10;
    let mut iterations = 0;

    loop {
        let w = atb - gram * &x;
        let candidate = (0..n)
            .filter(|&j| !in_p[j])
            .max_by(|&i, &j| w[i].partial_cmp(&w[j]).expect("finite gradient"));
        let t = match candidate {
            Some(t) if w[t] > tol => t,
            _ => break,
        };
        iterations += 1;
        if iterations > max_outer {
            return Err(DfError::Convergence {
                iterations,
                residual: w[t],
            });
        }
        in_p[t] = true;

        let mut inner = 0;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&j| in_p[j]).collect();
            let z = restricted_ls(gram, atb, &cols);
            if cols.iter().all(|&j| z[j] > 0.0) {
                x = z;
                break;
            }
            inner += 1;
            if inner > n + 1 {
                return Err(DfError::Convergence {
                    iterations,
                    residual: f64::NAN,
                });
            }
            // step towards z until the first passive coefficient hits zero
            let (alpha, hit) = cols
                .iter()
                .filter(|&&j| z[j] <= 0.0)
                .map(|&j| (x[j] / (x[j] - z[j]), j))
                .fold((f64::INFINITY, usize::MAX), |acc, v| if v.0 < acc.0 { v } else { acc });
            x = &x + (z - &x) * alpha;
            x[hit] = 0.0;
            for &j in &cols {
                if x[j] <= 0.0 {
                    x[j] = 0.0;
                    in_p[j] = false;
                }
            }
            // the newly added column can be rejected when its gradient was at round-off level
            if !in_p.iter().any(|&f| f) {
                break;
            }
        }
    }
    let passive = (0..n).filter(|&j| in_p[j]).collect();
    Ok(NnlsSolution { x, passive, iterations })
}
