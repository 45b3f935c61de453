//! Multi-sensor vehicle localization.
//!
//! LiDAR intensity/altitude map matching, RTK GNSS positioning and a
//! strapdown INS are fused by an error-state Kalman filter. A
//! deterministic simulator and an evaluation harness exercise the whole
//! pipeline at desk scale.

pub mod error;
pub mod eskf;
pub mod eval;
pub mod gnss;
pub mod io;
pub mod lidar_loc;
pub mod map;
pub mod pipeline;
pub mod sim;
pub mod sins;

pub use error::{Error, Result};
