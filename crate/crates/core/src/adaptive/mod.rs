//! Adaptive linear procedures: best subset selection, the lasso solved by
//! iterative ridge, and the relaxed lasso.

mod lasso;
mod subset;

pub use lasso::{
    default_lambda_grid, fit_lasso_mm, gcv_path_lasso, lasso_df_theorem, lasso_df_theorem_with, lasso_objective,
    lasso_path_with_theorem, simulate_sparse_linear, Lasso, LassoDfBreakdown, LassoFit, LassoOptions, LassoPathRow,
    TheoremOptions, DEFAULT_FLOOR, RELATIVE_TOL,
};
pub use subset::{
    fit_best_subset, fit_relaxed_lasso, least_squares_on, sdf_best_subset, BestSubset, RelaxedLasso, SearchDf,
    SubsetFit, SUBSET_GUARD,
};
