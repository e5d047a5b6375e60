//! Cubic B-spline basis: evaluation by the Cox-de Boor recurrence and the
//! exact second-derivative penalty matrix.

use nalgebra::DMatrix;

use crate::error::{DfError, Result};

pub const CUBIC_ORDER: usize = 4;

/// How interior knots are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Knots {
    /// `J` basis functions: `J - 4` interior knots at quantiles of the
    /// distinct x values.
    Count(usize),
    /// Every distinct x strictly inside the range is a knot (smoothing spline).
    AllUnique,
}

/// Cubic B-spline basis on `[boundary.0, boundary.1]` with simple interior knots.
#[derive(Debug, Clone)]
pub struct BSplineBasis {
    order: usize,
    interior_knots: Vec<f64>,
    boundary: (f64, f64),
    /// Augmented knot sequence: `order` copies of each boundary knot.
    knots: Vec<f64>,
}

fn distinct_sorted(x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DfError::invalid("spline abscissae must be finite"));
    }
    let mut u = x.to_vec();
    u.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    u.dedup();
    Ok(u)
}

impl BSplineBasis {
    pub fn new(interior_knots: Vec<f64>, boundary: (f64, f64)) -> Result<Self> {
        let (lo, hi) = boundary;
        if !(lo < hi) {
            return Err(DfError::invalid(format!(
                "boundary must satisfy min < max, got ({lo}, {hi})"
            )));
        }
        if interior_knots.iter().any(|&k| !(k > lo && k < hi)) {
            return Err(DfError::invalid("interior knots must lie strictly inside the boundary"));
        }
        if interior_knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(DfError::invalid("interior knots must be strictly increasing"));
        }
        let order = CUBIC_ORDER;
        let mut knots = vec![lo; order];
        knots.extend_from_slice(&interior_knots);
        knots.extend(std::iter::repeat_n(hi, order));
        Ok(BSplineBasis {
            order,
            interior_knots,
            boundary,
            knots,
        })
    }

    /// `J` cubic basis functions with interior knots at quantiles of the
    /// distinct values of `x`; boundary knots at min and max of `x`.
    pub fn from_quantiles(x: &[f64], j: usize) -> Result<Self> {
        if j < CUBIC_ORDER {
            return Err(DfError::invalid(format!("need J >= 4 basis functions, got {j}")));
        }
        let u = distinct_sorted(x)?;
        let k = j - CUBIC_ORDER;
        if u.len() < k + 2 {
            return Err(DfError::invalid(format!(
                "{} distinct x values cannot support {k} interior knots",
                u.len()
            )));
        }
        let last = (u.len() - 1) as f64;
        let interior = (1..=k)
            .map(|i| {
                let pos = last * i as f64 / (k + 1) as f64;
                let lo = pos.floor() as usize;
                let frac = pos - lo as f64;
                if frac == 0.0 {
                    u[lo]
                } else {
                    u[lo] + frac * (u[lo + 1] - u[lo])
                }
            })
            .collect();
        BSplineBasis::new(interior, (u[0], u[u.len() - 1]))
    }

    /// Knots at every distinct interior x value, as for a smoothing spline.
    pub fn from_unique(x: &[f64]) -> Result<Self> {
        let u = distinct_sorted(x)?;
        if u.len() < 2 {
            return Err(DfError::invalid("need at least two distinct x values"));
        }
        BSplineBasis::new(u[1..u.len() - 1].to_vec(), (u[0], u[u.len() - 1]))
    }

    pub fn build(x: &[f64], knots: Knots) -> Result<Self> {
        match knots {
            Knots::Count(j) => Self::from_quantiles(x, j),
            Knots::AllUnique => Self::from_unique(x),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn boundary(&self) -> (f64, f64) {
        self.boundary
    }

    /// Number of basis functions J.
    pub fn dim(&self) -> usize {
        self.interior_knots.len() + self.order
    }

    /// Index of the knot interval holding `x`; the right boundary belongs
    /// to the last non-empty interval.
    fn span(&self, x: f64) -> usize {
        let t = &self.knots;
        let j = self.dim();
        if x >= t[j] {
            return j - 1;
        }
        if x <= t[self.order - 1] {
            return self.order - 1;
        }
        // t[span] <= x < t[span + 1]
        let mut lo = self.order - 1;
        let mut hi = j;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < t[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of the `deriv`-th derivative of all J basis functions at `x`.
    /// Points outside the boundary are clamped to it.
    pub fn eval(&self, x: f64, deriv: usize) -> Vec<f64> {
        let t = &self.knots;
        let j = self.dim();
        let x = x.clamp(self.boundary.0, self.boundary.1);
        let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };

        // order-1 indicators over the J + order - 1 knot intervals
        let mut vals = vec![0.0; t.len() - 1];
        vals[self.span(x)] = 1.0;
        let top = self.order - deriv.min(self.order - 1);
        for k in 2..=top {
            let len = t.len() - k;
            let next: Vec<f64> = (0..len)
                .map(|i| {
                    ratio(x - t[i], t[i + k - 1] - t[i]) * vals[i]
                        + ratio(t[i + k] - x, t[i + k] - t[i + 1]) * vals[i + 1]
                })
                .collect();
            vals = next;
        }
        if deriv >= self.order {
            return vec![0.0; j];
        }
        // raise the order back to `order`, differentiating at each step
        for k in (top + 1)..=self.order {
            let len = t.len() - k;
            let c = (k - 1) as f64;
            let next: Vec<f64> = (0..len)
                .map(|i| c * (ratio(vals[i], t[i + k - 1] - t[i]) - ratio(vals[i + 1], t[i + k] - t[i + 1])))
                .collect();
            vals = next;
        }
        debug_assert_eq!(vals.len(), j);
        vals
    }

    /// n x J evaluation matrix.
    pub fn design(&self, x: &[f64]) -> DMatrix<f64> {
        let j = self.dim();
        let mut b = DMatrix::zeros(x.len(), j);
        for (i, &xi) in x.iter().enumerate() {
            for (c, v) in self.eval(xi, 0).into_iter().enumerate() {
                b[(i, c)] = v;
            }
        }
        b
    }

    /// Omega_{jk} = integral of B_j'' B_k'' over the boundary interval.
    ///
    /// B'' is piecewise linear, so the integrand is piecewise quadratic and
    /// two-point Gauss-Legendre on every knot interval is exact.
    pub fn penalty(&self) -> DMatrix<f64> {
        let j = self.dim();
        let mut omega = DMatrix::zeros(j, j);
        let breaks: Vec<f64> = std::iter::once(self.boundary.0)
            .chain(self.interior_knots.iter().copied())
            .chain(std::iter::once(self.boundary.1))
            .collect();
        let g = 1.0 / 3f64.sqrt();
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for node in [mid - half * g, mid + half * g] {
                let d2 = self.eval(node, 2);
                let nz: Vec<usize> = (0..j).filter(|&c| d2[c] != 0.0).collect();
                for &r in &nz {
                    for &c in &nz {
                        omega[(r, c)] += half * d2[r] * d2[c];
                    }
                }
            }
        }
        (&omega + omega.transpose()) * 0.5
    }
}

/// Both basis matrices for one abscissa vector.
#[derive(Debug, Clone)]
pub struct BasisMatrices {
    pub b: DMatrix<f64>,
    pub omega: DMatrix<f64>,
}

impl BasisMatrices {
    pub fn new(basis: &BSplineBasis, x: &[f64]) -> Self {
        BasisMatrices {
            b: basis.design(x),
            omega: basis.penalty(),
        }
    }
}

/// Builds the basis for `x` and its evaluation matrix.
pub fn build_basis(x: &[f64], j: usize) -> Result<(BSplineBasis, DMatrix<f64>)> {
    let basis = BSplineBasis::from_quantiles(x, j)?;
    let b = basis.design(x);
    Ok((basis, b))
}

pub fn build_penalty(basis: &BSplineBasis) -> DMatrix<f64> {
    basis.penalty()
}
