//! Metrics and experiment runners that emit CSV reports.
//!
//! Generated-sample quality is measured with sliced Wasserstein distance
//! ([`SW_PROJECTIONS`] directions), not FID.

mod experiments;
mod metrics;

pub use experiments::{
    run_experiment, ExperimentKind, ExperimentSpec, GridPoint, Guidance, MetricReport, MetricRow,
    CSV_COLUMNS, SW_PROJECTIONS,
};
pub use metrics::{mean_std, mse, psnr, sliced_wasserstein, wasserstein_1d};
