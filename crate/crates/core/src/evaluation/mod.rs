//! Metrics beyond the linear `R²`: quantile pseudo-`R²`, expected utility
//! under area-yield insurance, farm-equivalent coverage, long-horizon
//! simulation, measurement-error regressions and synthetic panels.

pub mod insurance;
pub mod measurement;
pub mod quantile;
pub mod simulate;
pub mod synthetic;

pub use insurance::{
    build_scheme, certainty_equivalent, crra_inverse, crra_utility, evaluate_eu,
    farm_equivalent_coverage, Coverage, FieldUtility, InsuranceScheme, Saturation,
    UtilityEvaluation, DEFAULT_CRRA, DEFAULT_TRIGGER,
};
pub use measurement::{measurement_error_fit, MeasurementErrorFit, MeasurementMode};
pub use quantile::{quantile_fit, quantile_r2_bar, QuantileFit, QuantileSummary, DEFAULT_TAU};
pub use simulate::{simulate_yields, Simulation, SimulationConfig, DEFAULT_HORIZON};
pub use synthetic::{
    equicorrelated_panel, generate_one_factor, spatial_exponential_panel, Dist, OneFactorSample,
    OneFactorSpec,
};
