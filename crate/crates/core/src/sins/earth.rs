//! WGS-84 Earth model quantities used by the ENU mechanization.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WGS84_A: f64 = 6_378_137.0;
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
pub const WGS84_GM: f64 = 3.986_004_418e14;
/// Earth rotation rate, rad/s.
pub const OMEGA_IE: f64 = 7.292_115e-5;
/// Normal gravity at the equator and at the poles, m/s^2.
pub const GAMMA_EQUATOR: f64 = 9.780_325_335_9;
pub const GAMMA_POLE: f64 = 9.832_184_937_8;
pub const STANDARD_GRAVITY: f64 = 9.806_65;

/// Latitudes closer to the poles than this are rejected (|L| must stay
/// well below pi/2 for the ENU frame and R_c to be defined).
const POLAR_LIMIT: f64 = std::f64::consts::FRAC_PI_2 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EarthModel {
    /// Full rotating WGS-84 ellipsoid with Somigliana normal gravity.
    #[default]
    Wgs84,
    /// Non-rotating spherical tangent-plane model with constant gravity.
    /// Handy for unit tests with closed-form kinematics.
    Flat,
}

/// Earth-dependent terms of the navigation equations at one (r, v).
#[derive(Debug, Clone, Copy)]
pub struct EarthParams {
    pub omega_ie_n: Vector3<f64>,
    pub omega_en_n: Vector3<f64>,
    pub g_n: Vector3<f64>,
    /// Transverse (prime vertical) radius of curvature.
    pub r_n: f64,
    /// Meridian radius of curvature.
    pub r_m: f64,
    /// Diagonal of R_c mapping ENU velocity to (lambda, L, a) rates.
    pub rc: Vector3<f64>,
}

impl EarthParams {
    pub fn omega_in_n(&self) -> Vector3<f64> {
        self.omega_ie_n + self.omega_en_n
    }
}

impl EarthModel {
    /// Radii of curvature (R_N, R_M) at latitude `lat`.
    pub fn radii(&self, lat: f64) -> (f64, f64) {
        match self {
            EarthModel::Wgs84 => {
                let s2 = lat.sin().powi(2);
                let w = 1.0 - WGS84_E2 * s2;
                let r_n = WGS84_A / w.sqrt();
                let r_m = WGS84_A * (1.0 - WGS84_E2) / (w * w.sqrt());
                (r_n, r_m)
            }
            EarthModel::Flat => (WGS84_A, WGS84_A),
        }
    }

    /// Derivatives d(R_N)/dL and d(R_M)/dL.
    pub fn radii_derivatives(&self, lat: f64) -> (f64, f64) {
        match self {
            EarthModel::Wgs84 => {
                let (s, c) = lat.sin_cos();
                let w = 1.0 - WGS84_E2 * s * s;
                let dw = -2.0 * WGS84_E2 * s * c;
                let d_rn = -0.5 * WGS84_A * w.powf(-1.5) * dw;
                let d_rm = -1.5 * WGS84_A * (1.0 - WGS84_E2) * w.powf(-2.5) * dw;
                (d_rn, d_rm)
            }
            EarthModel::Flat => (0.0, 0.0),
        }
    }

    /// Magnitude of normal gravity at latitude `lat` and ellipsoidal height `h`.
    pub fn gravity(&self, lat: f64, h: f64) -> f64 {
        match self {
            EarthModel::Wgs84 => {
                let (s, c) = lat.sin_cos();
                let (a, b) = (WGS84_A, WGS84_B);
                let num = a * GAMMA_EQUATOR * c * c + b * GAMMA_POLE * s * s;
                let den = (a * a * c * c + b * b * s * s).sqrt();
                let gamma0 = num / den;
                let m = OMEGA_IE * OMEGA_IE * a * a * b / WGS84_GM;
                gamma0 * (1.0 - 2.0 / a * (1.0 + WGS84_F + m - 2.0 * WGS84_F * s * s) * h + 3.0 * h * h / (a * a))
            }
            EarthModel::Flat => STANDARD_GRAVITY,
        }
    }

    /// Earth terms at geodetic position `r = (lambda, L, a)` and ENU velocity `v_n`.
    pub fn params(&self, r: &Vector3<f64>, v_n: &Vector3<f64>) -> Result<EarthParams> {
        let (lat, alt) = (r.y, r.z);
        if !lat.is_finite() || lat.abs() >= POLAR_LIMIT {
            return Err(Error::PolarSingularity(lat));
        }
        let (r_n, r_m) = self.radii(lat);
        let (s, c) = lat.sin_cos();
        let rc = Vector3::new(1.0 / ((r_n + alt) * c), 1.0 / (r_m + alt), 1.0);
        let g_n = Vector3::new(0.0, 0.0, -self.gravity(lat, alt));
        let (omega_ie_n, omega_en_n) = match self {
            EarthModel::Wgs84 => (
                Vector3::new(0.0, OMEGA_IE * c, OMEGA_IE * s),
                Vector3::new(-v_n.y / (r_m + alt), v_n.x / (r_n + alt), v_n.x * s / (c * (r_n + alt))),
            ),
            EarthModel::Flat => (Vector3::zeros(), Vector3::zeros()),
        };
        Ok(EarthParams {
            omega_ie_n,
            omega_en_n,
            g_n,
            r_n,
            r_m,
            rc,
        })
    }
}

/// Geodetic (lambda, L, a) to ECEF, WGS-84.
pub fn geodetic_to_ecef(r: &Vector3<f64>) -> Vector3<f64> {
    let (lon, lat, h) = (r.x, r.y, r.z);
    let (sl, cl) = lat.sin_cos();
    let (so, co) = lon.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * sl * sl).sqrt();
    Vector3::new((n + h) * cl * co, (n + h) * cl * so, (n * (1.0 - WGS84_E2) + h) * sl)
}

/// ECEF to geodetic (lambda, L, a), iterative; converges to sub-micrometre
/// in a handful of iterations for terrestrial points.
pub fn ecef_to_geodetic(p: &Vector3<f64>) -> Vector3<f64> {
    let lon = p.y.atan2(p.x);
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    let mut lat = p.z.atan2(rho * (1.0 - WGS84_E2));
    let mut h = 0.0;
    for _ in 0..10 {
        let sl = lat.sin();
        let n = WGS84_A / (1.0 - WGS84_E2 * sl * sl).sqrt();
        h = rho / lat.cos() - n;
        let next = p.z.atan2(rho * (1.0 - WGS84_E2 * n / (n + h)));
        let done = (next - lat).abs() < 1e-15;
        lat = next;
        if done {
            break;
        }
    }
    Vector3::new(lon, lat, h)
}

/// Rotation taking ENU vectors at (lambda, L) into ECEF.
pub fn enu_to_ecef_rotation(lon: f64, lat: f64) -> nalgebra::Matrix3<f64> {
    let (so, co) = lon.sin_cos();
    let (sl, cl) = lat.sin_cos();
    nalgebra::Matrix3::new(-so, -sl * co, cl * co, co, -sl * so, cl * so, 0.0, cl, sl)
}
