//! Index-insurance basis risk from panel yield data.
//!
//! Basis risk of a field against an index is `1 - R²` of the field's yields
//! regressed on the index over time. Averaged over a zone it splits into
//! zonal risk, the part no index built from the zone's yields can remove,
//! and design risk, the extra left by a particular index.
//!
//! ```
//! use basisrisk::{decompose, zone_mean_index, Denominator, Metric, YieldPanel};
//!
//! let panel = YieldPanel::from_rows(&[
//!     vec![3.0, 4.0, 2.5, 5.0],
//!     vec![2.0, 3.5, 2.0, 4.0],
//!     vec![4.0, 3.0, 3.5, 4.5],
//! ])?;
//! let index = zone_mean_index(&panel);
//! let d = decompose(&panel, &index.into(), Metric::Avg, Denominator::Unbiased)?;
//! assert_eq!(d.total_risk, d.zonal_risk + d.design_risk);
//! # Ok::<(), basisrisk::Error>(())
//! ```

pub mod decomposition;
pub mod error;
pub mod evaluation;
pub mod indices;
pub mod moments;
pub mod panel;
pub mod rng;
pub mod stats;
pub mod zones;

pub use decomposition::{
    beta_vector, decompose, index_r2_bar, optimal_index, optimal_weights_avg,
    optimal_weights_total, r2_bar, r2_diag, r2_matrix, r2_total, regress_fields, zone_bound,
    FieldRegression, IndexSpec, IndexWeights, Metric, OptimalIndex, RiskDecomposition, WeightKind,
};
pub use error::{Error, Result};
pub use evaluation::{MeasurementMode, QuantileSummary, UtilityEvaluation};
pub use indices::{
    design_report, subsample_experiment, subsample_mean_index, zone_mean_index, DesignRiskReport,
    DesignRiskRow, ExperimentRow, ExperimentTable, IndexSeries, IndexSource, ZoneSet,
};
pub use moments::{
    compute_moments, panel_eigen, top_eigen, top_eigen_factor, top_eigen_gram, CenteredPanel,
    Denominator, EigenSummary, MomentSummary, Target,
};
pub use panel::{
    haversine_m, load_panel, read_panel, write_panel, ExternalSeries, ExternalTable, FieldMeta,
    FilterPolicy, LoadReport, Schema, SeasonWindow, SpatialIndex, TemporalAgg, YieldPanel,
    ZoneLevel,
};
pub use zones::{radius_sweep, zonal_sweep, RadiusSweep, ZonalSweep, ZoneAreas};
