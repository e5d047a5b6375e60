//! Acceptance suite. Each test checks one criterion, writes one PASS/FAIL
//! line straight to stdout (visible without `--nocapture`) and then asserts.
//!
//! Run a single criterion with `cargo test -p dflab-core --test acceptance criterion_07`.

mod common;

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use dflab::adaptive::{
    default_lambda_grid, fit_lasso_mm, lasso_df_theorem_with, lasso_path_with_theorem, simulate_sparse_linear,
    LassoOptions, TheoremOptions,
};
use dflab::criteria::gcv_from_rss;
use dflab::data::{child_seed, gaussian_design, simulate_gaussian_response, uniform_design};
use dflab::empirical::{constant_mean, estimate_df};
use dflab::linear::{analytic_ridge_df, fit_knn, fit_ols, fit_ridge, singular_values, KnnSpec, Ols, RidgeSpec};
use dflab::mars::{
    forward_pass, r2_study, self_consistency_check, ConsistencyConfig, KnotRule, PenaltyChoice, R2Config, R2Row,
    R2Variant,
};
use dflab::splines::BSplineBasis;
use dflab::splines::{
    spline_df_table, GroupMatrix, MonotoneProblem, SplineDesign, SplineMethod, SplineSpec, SplineTableConfig,
};
use dflab::tree::{fit_tree, tree_df_table, tree_smoother, TreeNode, TreeTableConfig};
use dflab::{DataSet, DfExperiment};

fn report(id: u32, title: &str, pass: bool, detail: &str, start: Instant) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!(
        "criterion {id:>2} {verdict}: {title} [{detail}] ({:.1} s)\n",
        start.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn finish(id: u32, title: &str, failures: &[String], start: Instant) {
    let detail = if failures.is_empty() {
        "all checks met".to_string()
    } else {
        failures.join("; ")
    };
    report(id, title, failures.is_empty(), &detail, start);
    assert!(failures.is_empty(), "criterion {id}: {detail}");
}

#[test]
fn criterion_01_linear_smoother_traces() {
    let start = Instant::now();
    let n = 200;
    let x = gaussian_design(n, 5, 11);
    let y = simulate_gaussian_response(&DVector::zeros(n), 12).unwrap();
    let data = DataSet::new(x.clone(), y).unwrap();
    let mut worst = 0.0f64;

    worst = worst.max((fit_ols(&data).unwrap().trace().unwrap() - 5.0).abs());
    let d = singular_values(&x);
    for lambda in [1e-3, 0.1, 1.0, 10.0, 100.0, 1e4] {
        let tr = fit_ridge(&data, RidgeSpec::new(lambda).unwrap())
            .unwrap()
            .trace()
            .unwrap();
        worst = worst.max((tr - analytic_ridge_df(&d, lambda).unwrap()).abs());
    }
    for k in [1, 2, 5, 7, 10, 50] {
        let tr = fit_knn(&data, KnnSpec { k }).unwrap().trace().unwrap();
        worst = worst.max((tr - n as f64 / k as f64).abs());
    }
    let mut failures = Vec::new();
    if worst > 1e-8 {
        failures.push(format!("max trace error {worst:.2e} > 1e-8"));
    }
    if start.elapsed().as_secs_f64() > 1.0 {
        failures.push(format!("runtime {:.2} s > 1 s", start.elapsed().as_secs_f64()));
    }
    finish(
        1,
        "trace(S) equals analytic df for OLS, ridge and kNN",
        &failures,
        start,
    );
}

#[test]
fn criterion_02_monte_carlo_calibration() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let ols = Ols;
    let est = estimate_df(&DfExperiment::gaussian(&ols, 100, 5, 2024).with_m(100).with_reps(100)).unwrap();
    if (est.value - 5.0).abs() > 3.0 * est.std_error {
        failures.push(format!(
            "ols df {:.3} (se {:.3}) not within 3 se of 5",
            est.value, est.std_error
        ));
    }
    let constant = constant_mean();
    let est_c = estimate_df(
        &DfExperiment::gaussian(&constant, 100, 5, 2025)
            .with_m(100)
            .with_reps(100),
    )
    .unwrap();
    if (est_c.value - 1.0).abs() > 3.0 * est_c.std_error {
        failures.push(format!(
            "constant df {:.3} (se {:.3}) not within 3 se of 1",
            est_c.value, est_c.std_error
        ));
    }
    if start.elapsed().as_secs_f64() > 30.0 {
        failures.push("runtime above 30 s".into());
    }
    let title = format!(
        "Monte Carlo df: ols {:.3}±{:.3}, constant {:.3}±{:.3}",
        est.value, est.std_error, est_c.value, est_c.std_error
    );
    finish(2, &title, &failures, start);
}

#[test]
fn criterion_03_spline_table() {
    let start = Instant::now();
    let rows = spline_df_table(&SplineTableConfig::default()).unwrap();
    let mut failures = Vec::new();
    let monotone_ref = [(5.0, 2.21), (10.0, 2.78), (15.0, 3.38)];
    let smoothing_ref = [(0.001, 7.33), (0.01, 4.56), (0.1, 3.00)];
    let mut checked = 0;
    for r in &rows {
        match r.method {
            SplineMethod::Cubic => {
                checked += 1;
                if (r.empirical - r.parameter).abs() > 0.3 {
                    failures.push(format!("cubic J={} empirical {:.3}", r.parameter, r.empirical));
                }
            }
            SplineMethod::MonotoneCubic => {
                checked += 1;
                let want = monotone_ref.iter().find(|(j, _)| *j == r.parameter).unwrap().1;
                if (r.empirical - want).abs() > 0.4 {
                    failures.push(format!(
                        "monotone J={} empirical {:.3} vs {want}",
                        r.parameter, r.empirical
                    ));
                }
                let theo = r.theoretical.unwrap();
                if (r.empirical - theo).abs() > 4.0 * r.se {
                    failures.push(format!(
                        "monotone J={} empirical {:.3} vs E[U_y] {:.3} beyond 4 se ({:.3})",
                        r.parameter, r.empirical, theo, r.se
                    ));
                }
            }
            SplineMethod::Smoothing => {
                checked += 1;
                let want = smoothing_ref.iter().find(|(l, _)| *l == r.parameter).unwrap().1;
                if (r.empirical - want).abs() > 0.5 {
                    failures.push(format!(
                        "smoothing lambda={} empirical {:.3} vs {want}",
                        r.parameter, r.empirical
                    ));
                }
            }
            SplineMethod::MonotoneSmoothing => {}
        }
    }
    if checked != 9 {
        failures.push(format!("expected 9 checked rows, got {checked}"));
    }
    if start.elapsed().as_secs_f64() > 600.0 {
        failures.push("runtime above 10 min".into());
    }
    let summary: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {}: {:.2}", r.method.as_str(), r.parameter, r.empirical))
        .collect();
    let title = format!("spline df table ({})", summary.join(", "));
    finish(3, &title, &failures, start);
}

/// Best fit over every split of the coefficients into contiguous runs whose
/// least-squares values are nondecreasing.
fn monotone_projection_oracle(b: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let j = b.ncols();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << (j - 1)) {
        let starts: Vec<usize> = std::iter::once(0)
            .chain((1..j).filter(|&k| mask & (1 << (k - 1)) != 0))
            .collect();
        let bg = GroupMatrix::new(starts, j).unwrap().merge_columns(b);
        let coef = bg.clone().svd(true, true).solve(y, 1e-12).unwrap();
        if coef.as_slice().windows(2).any(|w| w[1] < w[0] - 1e-12) {
            continue;
        }
        let fitted = &bg * coef;
        let obj = (y - &fitted).norm_squared();
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, fitted));
        }
    }
    best.expect("the single-run split is always feasible").1
}

#[test]
fn criterion_04_monotone_structure() {
    let start = Instant::now();
    let n = 60;
    let shapes: [fn(f64) -> f64; 4] = [|t| 2.0 * t, |t| -t, |t| (6.0 * t).sin(), |_| 0.0];
    let mut fits = 0;
    let mut oracle_fits = 0;
    let mut worst_trace = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for seed in 0..30u64 {
        let x = uniform_design(n, 1, child_seed(seed, 0));
        let xs: Vec<f64> = x.column(0).iter().copied().collect();
        let noise = simulate_gaussian_response(&DVector::zeros(n), child_seed(seed, 1)).unwrap();
        for f in &shapes {
            let y = DVector::from_fn(n, |i, _| f(xs[i]) + 0.3 * noise[i]);
            for j in [4usize, 5, 6, 8, 10, 15] {
                let design = SplineDesign::new(&xs, SplineSpec::regression(j).knots).unwrap();
                let b = design.b.clone();
                let problem = MonotoneProblem::new(design, 0.0).unwrap();
                let fit = problem.solve(&y).unwrap();
                let tr = problem.group_smoother(&fit.groups).unwrap().trace();
                worst_trace = worst_trace.max((tr - fit.groups.groups() as f64).abs());
                fits += 1;
                if j <= 6 {
                    let oracle = monotone_projection_oracle(&b, &y);
                    worst_oracle = worst_oracle.max((&fit.fitted - oracle).amax());
                    oracle_fits += 1;
                }
            }
        }
    }
    let mut failures = Vec::new();
    if worst_trace > 1e-6 {
        failures.push(format!("group smoother trace off by {worst_trace:.2e}"));
    }
    if worst_oracle > 1e-8 {
        failures.push(format!(
            "monotone fit differs from exhaustive projection by {worst_oracle:.2e}"
        ));
    }
    let title = format!(
        "monotone trace = groups on {fits} fits (max err {worst_trace:.1e}), oracle on {oracle_fits} fits (max err {worst_oracle:.1e})"
    );
    finish(4, &title, &failures, start);
}

#[test]
fn criterion_05_lasso_solver_equivalence() {
    let start = Instant::now();
    let opts = LassoOptions::default();
    let mut worst_gap = 0.0f64;
    let mut worst_rise = 0.0f64;
    let mut fits = 0;
    for inst in 0..20u64 {
        let p = if inst % 2 == 0 { 20 } else { 120 };
        let data = simulate_sparse_linear(100, p, child_seed(500, inst)).unwrap();
        let grid = default_lambda_grid(&data, 20, 0.01).unwrap();
        for &lambda in &grid {
            let fit = fit_lasso_mm(&data, lambda, &opts).unwrap();
            for w in fit.objective.windows(2) {
                worst_rise = worst_rise.max((w[1] - w[0]) / w[0].abs().max(1.0));
            }
            let oracle = common::cd_lasso(data.x(), data.y(), lambda, 1e-13);
            for j in 0..p {
                if fit.beta[j].abs() <= opts.floor {
                    continue;
                }
                worst_gap = worst_gap.max((fit.beta[j] - oracle[j]).abs());
            }
            fits += 1;
        }
    }
    let mut failures = Vec::new();
    if worst_gap > 1e-4 {
        failures.push(format!("max coefficient gap {worst_gap:.2e} > 1e-4"));
    }
    // round-off only: a relative rise of 1e-12 is far below any real increase
    if worst_rise > 1e-12 {
        failures.push(format!("objective rose by {worst_rise:.2e} (relative)"));
    }
    if start.elapsed().as_secs_f64() > 120.0 {
        failures.push("runtime above 2 min".into());
    }
    let title =
        format!("MM lasso vs coordinate descent on {fits} fits: gap {worst_gap:.1e}, max rise {worst_rise:.1e}");
    finish(5, &title, &failures, start);
}

/// sum_i d mu_i / d y_i by central differences of fresh MM fits.
fn divergence_oracle(data: &DataSet, lambda: f64, opts: &LassoOptions) -> f64 {
    let n = data.n();
    let x = data.x();
    (0..n)
        .map(|i| {
            let h = 1e-3 * (1.0 + data.y()[i].abs());
            let fit_at = |shift: f64| {
                let mut y = data.y().clone();
                y[i] += shift;
                let d = data.with_response(y).unwrap();
                let fit = fit_lasso_mm(&d, lambda, opts).unwrap();
                x.row(i).transpose().dot(&fit.beta)
            };
            (fit_at(h) - fit_at(-h)) / (2.0 * h)
        })
        .sum()
}

#[test]
fn criterion_06_lasso_df_decomposition() {
    let start = Instant::now();
    let topts = TheoremOptions::default();
    let mut failures = Vec::new();

    let mut worst_delta = 0.0f64;
    let mut instances = 0;
    for seed in 0..3u64 {
        let data = simulate_sparse_linear(100, 20, child_seed(600, seed)).unwrap();
        let grid = default_lambda_grid(&data, 20, 0.01).unwrap();
        for &lambda in &[grid[4], grid[10], grid[16]] {
            let br = lasso_df_theorem_with(&data, lambda, &topts).unwrap();
            let div = divergence_oracle(&data, lambda, &topts.solver);
            let delta_oracle = div - br.trace_s;
            worst_delta = worst_delta.max((br.delta - delta_oracle).abs());
            instances += 1;
        }
    }
    if worst_delta > 1e-2 {
        failures.push(format!(
            "delta differs from finite-difference divergence by {worst_delta:.2e}"
        ));
    }

    let data = simulate_sparse_linear(100, 20, 601).unwrap();
    let grid = default_lambda_grid(&data, 20, 0.01).unwrap();
    let rows = lasso_path_with_theorem(&data, &grid, &topts).unwrap();
    let mean_gap = rows
        .iter()
        .map(|r| (r.df_theorem.unwrap() - r.n_active as f64).abs())
        .sum::<f64>()
        / rows.len() as f64;
    if mean_gap > 0.5 {
        failures.push(format!("mean |trace S + delta - n_active| = {mean_gap:.3} > 0.5"));
    }
    let worst_excess = rows
        .iter()
        .map(|r| r.trace_s - r.n_active as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    if worst_excess > 0.5 {
        failures.push(format!("trace S exceeds n_active by {worst_excess:.3}"));
    }
    if start.elapsed().as_secs_f64() > 300.0 {
        failures.push("runtime above 5 min".into());
    }
    let title = format!(
        "lasso df = trace S + delta: {instances} oracle instances (max err {worst_delta:.1e}), path mean gap {mean_gap:.3}, max trace excess {worst_excess:.3}"
    );
    finish(6, &title, &failures, start);
}

#[test]
fn criterion_07_tree_table() {
    let start = Instant::now();
    let mut failures = Vec::new();

    // exact trace on a spread of fits
    let mut trace_fits = 0;
    for seed in 0..40u64 {
        let x = gaussian_design(100, 5, child_seed(700, seed));
        let y = simulate_gaussian_response(&DVector::zeros(100), child_seed(701, seed)).unwrap();
        let data = DataSet::new(x, y).unwrap();
        for depth in 0..=4 {
            let fit = fit_tree(&data, depth).unwrap();
            let tr = tree_smoother(&fit).unwrap().trace();
            if (tr - fit.leaves() as f64).abs() > 1e-12 {
                failures.push(format!(
                    "seed {seed} depth {depth}: trace {tr} vs {} leaves",
                    fit.leaves()
                ));
            }
            trace_fits += 1;
        }
    }

    let reference = [
        [1.01, 1.02, 1.00],
        [5.71, 8.71, 9.87],
        [11.84, 18.38, 21.62],
        [19.80, 30.14, 35.01],
        [28.97, 42.06, 48.49],
    ];
    let cfg = TreeTableConfig::default();
    let rows = tree_df_table(&cfg).unwrap();
    let mut worst = 0.0f64;
    let mut cells = 0;
    for r in &rows {
        let col = cfg.p_values.iter().position(|&p| p == r.p).unwrap();
        let want = reference[r.depth][col];
        worst = worst.max((r.df_hat - want).abs());
        cells += 1;
        if (r.df_hat - want).abs() > 1.0 {
            failures.push(format!("depth {} p {}: {:.2} vs {want}", r.depth, r.p, r.df_hat));
        }
        if r.depth >= 1 && r.msdf <= 3.0 * r.msdf_se {
            failures.push(format!(
                "depth {} p {}: msdf {:.2} within 3 se ({:.2})",
                r.depth, r.p, r.msdf, r.msdf_se
            ));
        }
    }
    if cells != 15 {
        failures.push(format!("expected 15 cells, got {cells}"));
    }
    if start.elapsed().as_secs_f64() > 300.0 {
        failures.push("runtime above 5 min".into());
    }
    let title = format!("tree trace exact on {trace_fits} fits, table cells max deviation {worst:.2}");
    finish(7, &title, &failures, start);
}

#[test]
fn criterion_08_mars_self_consistency() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for degree in [1usize, 2] {
        for p in [1usize, 5, 10, 20] {
            let base = ConsistencyConfig {
                n: 100,
                p,
                degree,
                nk_grid: vec![3, 5, 7, 9, 11, 15, 19],
                penalty: PenaltyChoice::Fixed(if degree == 1 { 2.0 } else { 3.0 }),
                prune: false,
                m: 100,
                reps: 4,
                seed: 7 + 10 * p as u64 + degree as u64,
                knots: KnotRule::friedman(),
            };
            let corrected = self_consistency_check(&ConsistencyConfig {
                penalty: PenaltyChoice::Corrected,
                ..base.clone()
            })
            .unwrap();
            match corrected.fit_line() {
                Some((slope, intercept)) => {
                    notes.push(format!("d{degree} p{p} line {slope:.2}/{intercept:.2}"));
                    if !(0.85..=1.15).contains(&slope) || !(-1.5..=1.5).contains(&intercept) {
                        failures.push(format!(
                            "degree {degree} p {p}: corrected line slope {slope:.3} intercept {intercept:.3}"
                        ));
                    }
                }
                None => failures.push(format!("degree {degree} p {p}: fewer than two grid points")),
            }
            if p == 1 || p == 20 {
                let bias = self_consistency_check(&base).unwrap().mean_bias();
                notes.push(format!("d{degree} p{p} default bias {bias:.2}"));
                if (p == 1 && bias <= 0.0) || (p == 20 && bias >= 0.0) {
                    failures.push(format!(
                        "degree {degree} p {p}: default-c bias {bias:.3} has the wrong sign"
                    ));
                }
            }
        }
    }
    if start.elapsed().as_secs_f64() > 1200.0 {
        failures.push("runtime above 20 min".into());
    }
    let title = format!("MARS self-consistency ({})", notes.join(", "));
    finish(8, &title, &failures, start);
}

fn r2_checks(degree: usize, rows: &[R2Row], failures: &mut Vec<String>) -> String {
    let get = |p: usize, v: R2Variant| rows.iter().find(|r| r.p == p && r.variant == v).unwrap();
    let c_default = if degree == 1 { 2.0 } else { 3.0 };
    let mut ps: Vec<usize> = rows.iter().map(|r| r.p).collect();
    ps.dedup();
    let mut cs = Vec::new();
    let mut notes = Vec::new();
    for &p in &ps {
        let (def, cor, cv) = (
            get(p, R2Variant::Default),
            get(p, R2Variant::Corrected),
            get(p, R2Variant::Cv),
        );
        notes.push(format!("p{p} {:.3}/{:.3}/{:.3}", def.mean_r2, cor.mean_r2, cv.mean_r2));
        if cor.mean_r2 < def.mean_r2 - cor.se {
            failures.push(format!(
                "degree {degree} p {p}: corrected {:.3} below default {:.3} - se",
                cor.mean_r2, def.mean_r2
            ));
        }
        if (cv.mean_r2 - cor.mean_r2).abs() > cv.se + cor.se {
            failures.push(format!(
                "degree {degree} p {p}: cv {:.3} and corrected {:.3} bars do not overlap",
                cv.mean_r2, cor.mean_r2
            ));
        }
        cs.push(cor.c_used);
    }
    let last = *ps.last().unwrap();
    if get(last, R2Variant::Corrected).mean_r2 <= get(last, R2Variant::Default).mean_r2 {
        failures.push(format!(
            "degree {degree} p {last}: no strict improvement over the default c"
        ));
    }
    if cs.windows(2).any(|w| w[1] <= w[0]) {
        failures.push(format!("degree {degree}: corrected c not increasing in p ({cs:.2?})"));
    }
    let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < c_default && hi > c_default) {
        failures.push(format!(
            "degree {degree}: corrected c {cs:.2?} does not cross {c_default}"
        ));
    }
    format!("d{degree} {} c {:.2?}", notes.join(" "), cs)
}

#[test]
fn criterion_09_mars_r2_study() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    for degree in [1usize, 2] {
        let rows = r2_study(&R2Config {
            degree,
            ..R2Config::default()
        })
        .unwrap();
        notes.push(r2_checks(degree, &rows, &mut failures));
    }
    if start.elapsed().as_secs_f64() > 1800.0 {
        failures.push("runtime above 30 min".into());
    }
    let title = format!("MARS R^2 default/corrected/cv ({})", notes.join("; "));
    finish(9, &title, &failures, start);
}

/// Smallest within-node SSE of a single split over every feature and every
/// midpoint between distinct sorted values.
fn brute_force_split_sse(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<f64> {
    let n = x.nrows();
    let sse = |rows: &[usize]| {
        let m = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
        rows.iter().map(|&i| (y[i] - m).powi(2)).sum::<f64>()
    };
    let mut best: Option<f64> = None;
    for f in 0..x.ncols() {
        let mut vals: Vec<f64> = x.column(f).iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for w in vals.windows(2) {
            let cut = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| x[(i, f)] <= cut);
            let s = sse(&l) + sse(&r);
            if best.is_none_or(|b| s < b) {
                best = Some(s);
            }
        }
    }
    best
}

/// Smallest RSS over adding one reflected hinge pair on the intercept, for
/// every variable and every observed knot, each refitted from scratch.
fn exhaustive_first_pair(data: &DataSet) -> f64 {
    let x = data.x();
    let n = x.nrows();
    let mut best = f64::INFINITY;
    for v in 0..x.ncols() {
        for i in 0..n {
            let t = x[(i, v)];
            let d = DMatrix::from_fn(n, 3, |r, c| match c {
                0 => 1.0,
                1 => (x[(r, v)] - t).max(0.0),
                _ => (t - x[(r, v)]).max(0.0),
            });
            let coef = d.clone().svd(true, true).solve(data.y(), 1e-10).unwrap();
            best = best.min((data.y() - &d * coef).norm_squared());
        }
    }
    best
}

fn run_property<S: Strategy>(
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Option<String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).err().map(|e| format!("{name}: {e}"))
}

#[test]
fn criterion_10_property_suites() {
    let start = Instant::now();
    let mut failures: Vec<String> = Vec::new();

    failures.extend(run_property(
        "mm objective monotone",
        24,
        (0u64..10_000, 3usize..15, 0.05f64..0.9),
        |(seed, p, frac)| {
            let data = simulate_sparse_linear(50, p, seed).unwrap();
            let lambda = frac * 2.0 * (data.x().transpose() * data.y()).amax();
            let fit = fit_lasso_mm(&data, lambda, &LassoOptions::default()).unwrap();
            for w in fit.objective.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
            }
            Ok(())
        },
    ));

    failures.extend(run_property(
        "gcv increasing in df",
        256,
        (1e-3f64..1e3, 5usize..500, 0.0f64..1.0, 0.0f64..1.0),
        |(rss, n, a, b)| {
            let (lo, hi) = (a.min(b) * (n as f64 - 1.0), a.max(b) * (n as f64 - 1.0));
            prop_assume!(hi - lo > 1e-9);
            let g_lo = gcv_from_rss(rss, n, lo).unwrap();
            let g_hi = gcv_from_rss(rss, n, hi).unwrap();
            prop_assert!(g_hi > g_lo, "gcv({lo}) = {g_lo}, gcv({hi}) = {g_hi}");
            Ok(())
        },
    ));

    failures.extend(run_property(
        "b-spline partition of unity",
        128,
        (0u64..10_000, 4usize..20, 0.0f64..1.0),
        |(seed, j, u)| {
            let x: Vec<f64> = uniform_design(60, 1, seed).column(0).iter().copied().collect();
            let basis = BSplineBasis::from_quantiles(&x, j).unwrap();
            let (lo, hi) = basis.boundary();
            for point in [lo, hi, lo + u * (hi - lo)] {
                let total: f64 = basis.eval(point, 0).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12, "sum {total} at {point}");
            }
            Ok(())
        },
    ));

    failures.extend(run_property(
        "penalty matrix vs dense quadrature",
        16,
        (0u64..10_000, 5usize..14),
        |(seed, j)| {
            let x: Vec<f64> = uniform_design(80, 1, seed).column(0).iter().copied().collect();
            let basis = BSplineBasis::from_quantiles(&x, j).unwrap();
            let omega = basis.penalty();
            let (lo, hi) = basis.boundary();
            let breaks: Vec<f64> = std::iter::once(lo)
                .chain(basis.interior_knots().iter().copied())
                .chain(std::iter::once(hi))
                .collect();
            let dim = basis.dim();
            let mut dense = DMatrix::zeros(dim, dim);
            for w in breaks.windows(2) {
                let panels = 10_000;
                let h = (w[1] - w[0]) / panels as f64;
                let inset = 1e-12 * (hi - lo);
                for k in 0..=panels {
                    let s = (w[0] + k as f64 * h).clamp(w[0] + inset, w[1] - inset);
                    let weight = if k == 0 || k == panels { 0.5 * h } else { h };
                    let d2 = DVector::from_vec(basis.eval(s, 2));
                    dense += &d2 * d2.transpose() * weight;
                }
            }
            let scale = omega.amax();
            let err = (&omega - &dense).amax();
            prop_assert!(err <= 1e-6 * scale, "max error {err:.3e} vs scale {scale:.3e}");
            Ok(())
        },
    ));

    failures.extend(run_property(
        "split search vs brute force",
        64,
        (0u64..10_000, 2usize..25, 1usize..4),
        |(seed, n, p)| {
            let x = DMatrix::from_fn(n, p, |i, j| ((gaussian_design(n, p, seed)[(i, j)]) * 4.0).round() / 4.0);
            let y = simulate_gaussian_response(&DVector::zeros(n), seed + 1).unwrap();
            let data = DataSet::new(x.clone(), y.clone()).unwrap();
            let fit = fit_tree(&data, 1).unwrap();
            let mean = y.mean();
            let total = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            match (brute_force_split_sse(&x, &y), &fit.root) {
                (Some(best), TreeNode::Internal { .. }) => {
                    let got = (&y - &fit.fitted).norm_squared();
                    prop_assert!(
                        (got - best).abs() <= 1e-9 * total.max(1.0),
                        "tree sse {got} vs best {best}"
                    );
                }
                (None, TreeNode::Leaf { .. }) => {}
                (Some(best), TreeNode::Leaf { .. }) => {
                    // only a split that leaves the fit unchanged may be skipped
                    prop_assert!(
                        (best - total).abs() <= 1e-9 * total.max(1.0),
                        "missed split with sse {best} < {total}"
                    );
                }
                (None, TreeNode::Internal { .. }) => prop_assert!(false, "split found where none exists"),
            }
            Ok(())
        },
    ));

    failures.extend(run_property(
        "forward pass first step vs exhaustive refit",
        24,
        (0u64..10_000, 10usize..30, 1usize..4),
        |(seed, n, p)| {
            let x = gaussian_design(n, p, seed);
            let mu = DVector::from_fn(n, |i, _| (x[(i, 0)] - 0.3).max(0.0));
            let y = simulate_gaussian_response(&mu, seed + 1).unwrap();
            let data = DataSet::new(x, y).unwrap();
            let model = forward_pass(&data, 1, 1).unwrap();
            let best = exhaustive_first_pair(&data);
            let scale = data.y().norm_squared().max(1.0);
            prop_assert!(
                (model.rss - best).abs() <= 1e-8 * scale,
                "forward rss {} vs exhaustive {best}",
                model.rss
            );
            Ok(())
        },
    ));

    let title = "property suites (mm monotone, gcv in df, partition of unity, penalty quadrature, split search, forward argmin)";
    finish(10, title, &failures, start);
}
