//! Single-differenced GNSS observations for a rover following the truth.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gnss::{sd_geometry, GnssEpoch, SatObservation, L1_WAVELENGTH};
use crate::sins::earth::{enu_to_ecef_rotation, geodetic_to_ecef};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatelliteSpec {
    pub id: u32,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathSpec {
    pub start: f64,
    pub end: f64,
    pub range_factor: f64,
    #[serde(default = "one")]
    pub phase_factor: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipSpec {
    pub t: f64,
    pub sat: u32,
    pub cycles: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnssSpec {
    pub rate: f64,
    pub range_sigma: f64,
    pub phase_sigma: f64,
    pub satellites: Vec<SatelliteSpec>,
    /// Apparent azimuth drift of every satellite, deg/min.
    pub azimuth_rate: f64,
    pub elevation_mask_deg: f64,
    /// Base station relative to the map origin, ENU m.
    pub base_offset: [f64; 3],
    /// Random walk of the receiver clock difference, m/sqrt(s).
    pub clock_walk: f64,
    pub outages: Vec<Window>,
    pub multipath: Vec<MultipathSpec>,
    pub slips: Vec<SlipSpec>,
    pub wavelength: f64,
}

impl Default for GnssSpec {
    fn default() -> Self {
        let sky = [
            (78.0, 20.0),
            (60.0, 140.0),
            (52.0, 260.0),
            (45.0, 75.0),
            (38.0, 200.0),
            (30.0, 320.0),
            (24.0, 10.0),
            (18.0, 165.0),
            (14.0, 290.0),
        ];
        Self {
            rate: 5.0,
            range_sigma: 0.5,
            phase_sigma: 0.003,
            satellites: sky
                .iter()
                .enumerate()
                .map(|(k, (el, az))| SatelliteSpec {
                    id: k as u32 + 2,
                    azimuth_deg: *az,
                    elevation_deg: *el,
                })
                .collect(),
            azimuth_rate: 0.25,
            elevation_mask_deg: 10.0,
            base_offset: [800.0, -600.0, 5.0],
            clock_walk: 0.05,
            outages: Vec::new(),
            multipath: Vec::new(),
            slips: Vec::new(),
            wavelength: L1_WAVELENGTH,
        }
    }
}

const ORBIT_DISTANCE: f64 = 2.2e7;

/// Generator state: constellation frame, per-satellite integer ambiguities
/// and the common fractional receiver phase offset.
#[derive(Debug, Clone)]
pub struct GnssSimulator<R> {
    pub spec: GnssSpec,
    origin_ecef: Vector3<f64>,
    enu_to_ecef: nalgebra::Matrix3<f64>,
    pub base: Vector3<f64>,
    pub ambiguities: Vec<i64>,
    pub phase_offset: f64,
    pub clock: f64,
    last_t: Option<f64>,
    rng: R,
}

/// One synthesized epoch with the SD integer ambiguities in epoch order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnssRecord {
    pub epoch: GnssEpoch,
    pub t_received: f64,
    pub ambiguities: Vec<i64>,
}

impl<R: Rng> GnssSimulator<R> {
    /// `origin` is geodetic (lambda, L, a).
    pub fn new(spec: GnssSpec, origin: &Vector3<f64>, mut rng: R) -> Self {
        let origin_ecef = geodetic_to_ecef(origin);
        let r = enu_to_ecef_rotation(origin.x, origin.y);
        let base = origin_ecef + r * Vector3::from(spec.base_offset);
        let ambiguities = spec.satellites.iter().map(|_| rng.random_range(-2000..2000)).collect();
        let phase_offset = rng.random::<f64>();
        let clock = rng.random_range(-30.0..30.0);
        Self {
            spec,
            origin_ecef,
            enu_to_ecef: r,
            base,
            ambiguities,
            phase_offset,
            clock,
            last_t: None,
            rng,
        }
    }

    pub fn satellite_position(&self, k: usize, t: f64) -> Vector3<f64> {
        let s = &self.spec.satellites[k];
        let az = (s.azimuth_deg + self.spec.azimuth_rate * t / 60.0).to_radians();
        let el = s.elevation_deg.to_radians();
        let u = Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin());
        self.origin_ecef + self.enu_to_ecef * u * ORBIT_DISTANCE
    }

    /// Observations for a rover at ECEF `rover` at time `t`; `None` during
    /// outages. Slips and the clock walk advance even through outages.
    pub fn observe(&mut self, t: f64, rover: &Vector3<f64>) -> Option<(GnssEpoch, Vec<i64>)> {
        let dt = self.last_t.map_or(0.0, |l| (t - l).max(0.0));
        let prev = self.last_t.unwrap_or(f64::NEG_INFINITY);
        self.last_t = Some(t);
        let e: f64 = StandardNormal.sample(&mut self.rng);
        self.clock += self.spec.clock_walk * dt.sqrt() * e;
        for sl in &self.spec.slips {
            if sl.t > prev && sl.t <= t {
                if let Some(k) = self.spec.satellites.iter().position(|s| s.id == sl.sat) {
                    self.ambiguities[k] += sl.cycles;
                }
            }
        }
        if self.spec.outages.iter().any(|w| w.contains(t)) {
            return None;
        }
        let (rf, pf) = self
            .spec
            .multipath
            .iter()
            .filter(|m| t >= m.start && t <= m.end)
            .fold((1.0f64, 1.0f64), |a, m| {
                (a.0.max(m.range_factor), a.1.max(m.phase_factor))
            });
        let up = rover.normalize();
        let mask = self.spec.elevation_mask_deg.to_radians();
        let lambda = self.spec.wavelength;
        let mut sats = Vec::new();
        let mut amb = Vec::new();
        for k in 0..self.spec.satellites.len() {
            let pos = self.satellite_position(k, t);
            let el = (pos - rover).normalize().dot(&up).asin();
            if el < mask {
                continue;
            }
            let (dr, _) = sd_geometry(&pos, rover, &self.base);
            let e1: f64 = StandardNormal.sample(&mut self.rng);
            let e2: f64 = StandardNormal.sample(&mut self.rng);
            let n = self.ambiguities[k];
            sats.push(SatObservation {
                id: self.spec.satellites[k].id,
                pos,
                sd_range: dr + self.clock + e1 * rf * self.spec.range_sigma / el.sin(),
                sd_phase: dr + self.clock - lambda * (n as f64 + self.phase_offset)
                    + e2 * pf * self.spec.phase_sigma / el.sin(),
                wavelength: lambda,
                elevation: el,
            });
            amb.push(n);
        }
        Some((
            GnssEpoch {
                t,
                base: self.base,
                sats,
            },
            amb,
        ))
    }
}
