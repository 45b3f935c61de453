//! Error-state Kalman filter over the strapdown solution, with a replay
//! buffer for delayed measurements.
//!
//! Error state order is `(dr, dv, dpsi, dba, dbg)`. `dr` is in
//! (rad, rad, m); all errors are `computed - true` except the bias terms,
//! which are residual IMU errors (see [`crate::sins::apply_correction`]).

mod buffer;
mod filter;

pub use buffer::{FusionEngine, FusionStats, Snapshot, DEFAULT_HORIZON};
pub use filter::{
    build_f_g, heading_jacobian, predict_step, Cov15, ErrorStateFilter, FilterConfig, ImuNoise, MeasurementKind,
    NoiseInput, TimedMeasurement, UpdateOutcome,
};

#[cfg(test)]
mod tests;
