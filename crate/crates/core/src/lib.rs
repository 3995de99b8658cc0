//! Group-fair conformal calibration of quantile-regression intervals.
//!
//! The pipeline: fit a linear multi-quantile model ([`quantile`]), score a
//! calibration set ([`conformal`]), split labels into equal-mass bins
//! ([`binning`]), tune one shift per (bin, group) cell so every group reaches
//! the target coverage at least width ([`fair`]), and turn test bands into
//! unions of intervals ([`intervals`]) scored by [`metrics`].

pub mod binning;
pub mod calibrator;
pub mod conformal;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fair;
pub mod intervals;
pub mod metrics;
pub mod quantile;
pub mod synthetic;

pub use binning::{equal_mass_bins, BinPartition};
pub use calibrator::{CalibrationConfig, Calibrator, Method, ThresholdArtifact};
pub use conformal::{
    cqr_calibrate, cqr_score, empirical_quantile, split_cp_calibrate, GlobalThreshold,
};
pub use data::{
    load_dataset, read_dataset, split_dataset, write_dataset, Band, BandPredictor, CsvSchema,
    Dataset, GroupId, GroupSet, LabelDomain, Observation, Record, SplitSpec, StoredBands,
};
pub use error::{Error, Result};
pub use fair::{
    brute_force_oracle, calibration_objective, eoc_optimize, init_thresholds, measure_coverage,
    slope_decrease, slope_increase, CoverageState, CoverageWeighting, OptimizerConfig,
    OptimizerTrace, Termination, ThresholdTable,
};
pub use intervals::{predict_interval, Interval, IntervalSet};
pub use metrics::{evaluate, mpiw, picp, picp_gap, EvalReport};
pub use quantile::{
    fit, pinball_loss, pinball_subgradient, FitConfig, QuantileLevels, QuantileModel,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};
