//! Synthetic data and Monte-Carlo studies.

mod dgp;
mod regularity;
mod study;

pub use dgp::{generate, heterogeneous_coefficients, variance_decomposition, ForcedChoiceDgp, SimDraw, VarianceDecomposition};
pub use regularity::{generate_regularity, Planted, RegularityDgp};
pub use study::{
    count_grid, inflation_design, logistic_inflation_study, power_study, size_grid, GridPoint, HistogramBin,
    InflationRecord, InflationSettings, InflationSummary, InflationTable, Method, PowerSettings, PowerSummary,
    PowerTable, RepRecord,
};
