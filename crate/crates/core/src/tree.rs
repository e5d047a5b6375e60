//! Greedy binary regression trees grown to a fixed depth without pruning.
//!
//! A tree fit is the linear map that averages the responses within each
//! leaf, so for a fixed partition it is a smoother with trace M (the leaf
//! count). The partition itself is searched on y, which is where the extra
//! degrees of freedom come from.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::data::{child_seed, gaussian_design, DataSet, FitOutput, SmootherMatrix};
use crate::empirical::{run_experiment, DfExperiment, Procedure};
use crate::error::{DfError, Result};

#[derive(Debug, Clone)]
pub enum TreeNode {
    Internal {
        feature: usize,
        cutpoint: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        mean: f64,
        rows: Vec<usize>,
    },
}

impl TreeNode {
    fn leaves<'a>(&'a self, out: &mut Vec<&'a TreeNode>) {
        match self {
            TreeNode::Internal { left, right, .. } => {
                left.leaves(out);
                right.leaves(out);
            }
            leaf => out.push(leaf),
        }
    }

    /// Leaf value for a point: go left when `x[feature] <= cutpoint`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { mean, .. } => *mean,
            TreeNode::Internal {
                feature,
                cutpoint,
                left,
                right,
            } => {
                if x[*feature] <= *cutpoint {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TreeFit {
    pub root: TreeNode,
    pub depth: usize,
    pub n: usize,
    pub fitted: DVector<f64>,
}

impl TreeFit {
    /// Leaf count M.
    pub fn leaves(&self) -> usize {
        let mut v = Vec::new();
        self.root.leaves(&mut v);
        v.len()
    }

    /// Member rows of each leaf, left to right.
    pub fn leaf_rows(&self) -> Vec<&[usize]> {
        let mut v = Vec::new();
        self.root.leaves(&mut v);
        v.into_iter()
            .map(|l| match l {
                TreeNode::Leaf { rows, .. } => rows.as_slice(),
                TreeNode::Internal { .. } => unreachable!("leaves() yields leaves"),
            })
            .collect()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(x.nrows(), |i, _| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            self.root.predict(&row)
        })
    }
}

/// Best split of `rows`: (feature, cutpoint, left rows, right rows).
type Split = (usize, f64, Vec<usize>, Vec<usize>);

/// Exhaustive search over features and midpoints between consecutive
/// distinct values, maximizing S_L^2 / n_L + S_R^2 / n_R (equivalently
/// minimizing the children's SSE). Ties keep the lowest feature, then the
/// smallest cutpoint.
fn best_split(x: &DMatrix<f64>, y: &DVector<f64>, rows: &[usize]) -> Option<Split> {
    let n = rows.len();
    let total: f64 = rows.iter().map(|&i| y[i]).sum();
    let per_feature: Vec<Option<(f64, f64)>> = (0..x.ncols())
        .into_par_iter()
        .map(|f| {
            let mut order: Vec<usize> = rows.to_vec();
            order.sort_by(|&a, &b| x[(a, f)].partial_cmp(&x[(b, f)]).expect("finite x").then(a.cmp(&b)));
            let mut best: Option<(f64, f64)> = None;
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += y[order[k]];
                let (a, b) = (x[(order[k], f)], x[(order[k + 1], f)]);
                if a == b {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl + right_sum * right_sum / nr;
                if best.is_none_or(|(g, _)| gain > g + 1e-12 * g.abs()) {
                    best = Some((gain, 0.5 * (a + b)));
                }
            }
            best
        })
        .collect();
    let mut best: Option<(f64, usize, f64)> = None;
    for (f, cand) in per_feature.into_iter().enumerate() {
        if let Some((gain, cut)) = cand {
            if best.is_none_or(|(g, _, _)| gain > g + 1e-12 * g.abs()) {
                best = Some((gain, f, cut));
            }
        }
    }
    let (_, feature, cutpoint) = best?;
    let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[(i, feature)] <= cutpoint);
    Some((feature, cutpoint, left, right))
}

fn grow(x: &DMatrix<f64>, y: &DVector<f64>, rows: Vec<usize>, depth_left: usize) -> TreeNode {
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
    let constant = rows.iter().all(|&i| y[i] == y[rows[0]]);
    if depth_left == 0 || rows.len() < 2 || constant {
        return TreeNode::Leaf { mean, rows };
    }
    match best_split(x, y, &rows) {
        None => TreeNode::Leaf { mean, rows },
        Some((feature, cutpoint, left, right)) => TreeNode::Internal {
            feature,
            cutpoint,
            left: Box::new(grow(x, y, left, depth_left - 1)),
            right: Box::new(grow(x, y, right, depth_left - 1)),
        },
    }
}

/// Greedy tree of at most `depth` levels.
pub fn fit_tree(data: &DataSet, depth: usize) -> Result<TreeFit> {
    let n = data.n();
    if n == 0 {
        return Err(DfError::InsufficientData { needed: 1, got: 0 });
    }
    let root = grow(data.x(), data.y(), (0..n).collect(), depth);
    let mut fitted = DVector::zeros(n);
    let mut leaves = Vec::new();
    root.leaves(&mut leaves);
    for leaf in leaves {
        if let TreeNode::Leaf { mean, rows } = leaf {
            for &i in rows {
                fitted[i] = *mean;
            }
        }
    }
    Ok(TreeFit { root, depth, n, fitted })
}

/// S_ij = 1/|R_m| when rows i and j share leaf m.
pub fn tree_smoother(fit: &TreeFit) -> Result<SmootherMatrix> {
    let mut s = DMatrix::zeros(fit.n, fit.n);
    for rows in fit.leaf_rows() {
        let w = 1.0 / rows.len() as f64;
        for &i in rows {
            for &j in rows {
                s[(i, j)] = w;
            }
        }
    }
    SmootherMatrix::new(s)
}

/// The tree as a [`Procedure`]. Fits report `trace` = `leaves` = M, the
/// exact trace of the leaf-averaging smoother.
pub struct Tree {
    pub depth: usize,
}

impl Procedure for Tree {
    fn name(&self) -> String {
        "tree".into()
    }
    fn params(&self) -> serde_json::Value {
        json!({ "depth": self.depth })
    }
    fn fit(&self, data: &DataSet) -> Result<FitOutput> {
        let fit = fit_tree(data, self.depth)?;
        let m = fit.leaves() as f64;
        Ok(FitOutput::new(fit.fitted).with_meta("trace", m).with_meta("leaves", m))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeTableConfig {
    pub n: usize,
    pub m: usize,
    pub reps: usize,
    pub seed: u64,
    pub p_values: Vec<usize>,
    pub depths: Vec<usize>,
}

impl Default for TreeTableConfig {
    fn default() -> Self {
        TreeTableConfig {
            n: 100,
            m: 100,
            reps: 10,
            seed: 1,
            p_values: vec![1, 5, 10],
            depths: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TreeTableRow {
    pub depth: usize,
    /// Mean leaf count over all fits. Falls below 2^depth when a greedy split
    /// isolates a single row, which can then not be split further.
    pub leaves: f64,
    pub p: usize,
    pub df_hat: f64,
    pub se: f64,
    pub msdf: f64,
    pub msdf_se: f64,
    /// Fits whose leaf count fell below 2^depth.
    pub incomplete_fits: usize,
}

/// Empirical df of fixed-depth trees on standard Gaussian designs with zero
/// mean. Each p gets its own design, shared across depths.
pub fn tree_df_table(cfg: &TreeTableConfig) -> Result<Vec<TreeTableRow>> {
    let mut rows = Vec::new();
    for &p in &cfg.p_values {
        let seed = child_seed(cfg.seed, p as u64);
        let x = gaussian_design(cfg.n, p, child_seed(seed, u64::MAX));
        for &depth in &cfg.depths {
            let proc = Tree { depth };
            let exp = DfExperiment::new(&proc, x.clone())
                .with_m(cfg.m)
                .with_reps(cfg.reps)
                .with_seed(seed);
            let full = (1usize << depth.min(62)) as f64;
            let leaves = |f: &FitOutput| f.meta_value("leaves").unwrap_or(f64::NAN);
            let short = |f: &FitOutput| {
                if f.meta_value("leaves").unwrap_or(0.0) < full {
                    1.0
                } else {
                    0.0
                }
            };
            let run = run_experiment(&exp, &[&leaves, &short])?;
            let incomplete = run.extracted[1]
                .replicates
                .iter()
                .map(|v| v * cfg.m as f64)
                .sum::<f64>()
                .round() as usize;
            rows.push(TreeTableRow {
                depth,
                leaves: run.extracted[0].value,
                p,
                df_hat: run.df.value,
                se: run.df.std_error,
                msdf: run.gaps[0].value,
                msdf_se: run.gaps[0].std_error,
                incomplete_fits: incomplete,
            });
        }
    }
    Ok(rows)
}
