//! Input-optimization and Monte Carlo visualizations plus the analyses
//! built on them.

mod montecarlo;
mod optimize;
mod reports;

pub use montecarlo::{generate_batch, mc_sample_select, mc_sample_select_many, Selected, Selection, SelectionMode, SelectionSpec, MC_BATCH};
pub use optimize::{optimize_input, InitMode, LossSpec, OptimizeResult, TrajectoryPoint};
pub use reports::{
    activation_profile, export_linear_weights, rpkm_binned_diff, ActivationProfile, BinStat, WeightEntry,
    WeightReport,
};
