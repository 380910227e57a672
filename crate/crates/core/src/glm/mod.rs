//! Classical regression: clustered OLS, logistic MLE and lasso logistic.

mod amce;
mod lasso;
mod logistic;
mod ols;

pub use amce::{amce_equality_test, amce_test, stacked_design, AmceEstimate, AmceResult, ClusterUnit};
pub use lasso::{cv_lasso_logistic, fit_lasso_logistic, lasso_lambda_max, LassoCv, LassoLogisticFit, LassoOptions};
pub use logistic::{fit_logistic, lr_f, LogisticFit};
pub use ols::{aliased_columns, fit_ols_clustered, wald_f, ClusteredOlsFit, FTest};
