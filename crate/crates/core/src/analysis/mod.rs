//! Ergodic statistics and Lyapunov-drift diagnostics computed from
//! trajectories and model specs.

mod capital;
mod ergodic;
mod histogram;
mod lyapunov;

pub use capital::{capital_curve, capital_curve_of_state, ranked_log_weights, CapitalCurve};
pub use ergodic::{occupation_fractions, time_average, OccupationStats, PermutationShare};
pub use histogram::{
    gap_histogram, gap_samples, quantile_binnings, tv_distance, tv_to_reference, tv_vs_time, BinSpec, Binning,
    GapHistogram, DEFAULT_BINS,
};
pub use lyapunov::{
    continuous_generator_v, drift_condition_scan, estimate_generator, gap_weighted, generator_diagnostic,
    jump_generator_v, leading_order_generator, lyapunov_v, mc_generator_estimate, random_point_on_plane,
    scan_directions, DriftConditionReport, Estimate, GeneratorDiagnostic, JumpGenerator, ScanConfig, ScanPoint,
};
