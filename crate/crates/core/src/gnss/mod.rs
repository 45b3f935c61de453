//! Single-frequency RTK positioning from single-differenced (rover minus
//! base) observations.
//!
//! Per satellite `i` the model is
//! `dρ = dR + l·dx + c·dt + e` and `dφ = dR + l·dx + c·dt - λ N + e`
//! where `dR` is the SD geometric range at the prior rover position, `l`
//! the unit line of sight from satellite to rover and `N` the SD ambiguity
//! in cycles (integer up to a common receiver phase offset, so only double
//! differences are integral).

mod lambda;
mod lsq;
mod rtk;
mod slip;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lambda::{integer_search, IntegerSolution};
pub use rtk::{
    float_solution, ins_aided_float, ins_aided_solution, resolve_ambiguities, rtk_solution, sd_to_dd, Ambiguities,
    AmbiguityResolution, DdAmbiguities, FloatSolution, InsPrior, RtkSolution,
};
pub use slip::{detect_cycle_slips, SlipReport};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// GPS L1 carrier wavelength, m.
pub const L1_WAVELENGTH: f64 = 0.1903;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatObservation {
    pub id: u32,
    /// Satellite position, ECEF m.
    pub pos: Vector3<f64>,
    /// SD pseudo-range, m.
    pub sd_range: f64,
    /// SD carrier phase, m.
    pub sd_phase: f64,
    pub wavelength: f64,
    /// Elevation seen from the rover, rad.
    pub elevation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnssEpoch {
    pub t: f64,
    /// Base station antenna, ECEF m.
    pub base: Vector3<f64>,
    pub sats: Vec<SatObservation>,
}

impl GnssEpoch {
    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() || self.base.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gnss epoch"));
        }
        for s in &self.sats {
            if !(s.wavelength > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "sat {}: wavelength {}",
                    s.id, s.wavelength
                )));
            }
            if !(s.elevation > 0.0 && s.elevation <= std::f64::consts::FRAC_PI_2) {
                return Err(Error::InvalidArgument(format!(
                    "sat {}: elevation {}",
                    s.id, s.elevation
                )));
            }
            if !(s.sd_range.is_finite() && s.sd_phase.is_finite()) || s.pos.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("satellite observation"));
            }
        }
        let mut ids: Vec<u32> = self.sats.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate satellite id".into()));
        }
        Ok(())
    }

    /// Index of the highest satellite.
    pub fn reference_index(&self) -> Option<usize> {
        (0..self.sats.len()).max_by(|&a, &b| {
            self.sats[a]
                .elevation
                .total_cmp(&self.sats[b].elevation)
                .then(self.sats[b].id.cmp(&self.sats[a].id))
        })
    }
}

/// SD geometric range and unit line of sight for one satellite.
pub fn sd_geometry(sat: &Vector3<f64>, rover: &Vector3<f64>, base: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let dr = rover - sat;
    let rr = dr.norm();
    (rr - (base - sat).norm(), dr / rr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RtkConfig {
    /// Zenith pseudo-range sigma, m.
    pub range_sigma: f64,
    /// Zenith carrier-phase sigma, m.
    pub phase_sigma: f64,
    pub ratio_threshold: f64,
    pub search_cap: usize,
    pub max_iterations: usize,
}

impl Default for RtkConfig {
    fn default() -> Self {
        Self {
            range_sigma: 0.5,
            phase_sigma: 0.003,
            ratio_threshold: 3.0,
            search_cap: 100_000,
            max_iterations: 10,
        }
    }
}

impl RtkConfig {
    /// Elevation-dependent weight `sin^2(el) / sigma^2`.
    pub fn weight(&self, elevation: f64, phase: bool) -> f64 {
        let s = if phase { self.phase_sigma } else { self.range_sigma };
        elevation.sin().powi(2) / (s * s)
    }
}
