//! Local tangent-plane projection between geodetic coordinates and the map frame.

use nalgebra::{Matrix2, Vector3};
use serde::{Deserialize, Serialize};

use crate::sins::EarthModel;

/// Linear projection about a reference point: `x = (lambda - lambda0) k_e`,
/// `y = (L - L0) k_n`, with `k_e = (R_N + a0) cos L0` and `k_n = R_M + a0`
/// evaluated at the reference. Exact inverse; scale error stays below
/// 1e-4 within a few kilometres of the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    pub lon0: f64,
    pub lat0: f64,
    pub alt0: f64,
    pub k_east: f64,
    pub k_north: f64,
}

impl LocalProjection {
    pub fn new(model: EarthModel, lon0: f64, lat0: f64, alt0: f64) -> Self {
        let (r_n, r_m) = model.radii(lat0);
        Self {
            lon0,
            lat0,
            alt0,
            k_east: (r_n + alt0) * lat0.cos(),
            k_north: r_m + alt0,
        }
    }

    pub fn forward(&self, lon: f64, lat: f64) -> (f64, f64) {
        ((lon - self.lon0) * self.k_east, (lat - self.lat0) * self.k_north)
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        (self.lon0 + x / self.k_east, self.lat0 + y / self.k_north)
    }

    /// Geodetic position of map point `(x, y)` at altitude `a`.
    pub fn to_geodetic(&self, x: f64, y: f64, a: f64) -> Vector3<f64> {
        let (lon, lat) = self.inverse(x, y);
        Vector3::new(lon, lat, a)
    }

    /// Jacobian d(lambda, L)/d(x, y).
    pub fn inverse_jacobian(&self) -> Matrix2<f64> {
        Matrix2::new(1.0 / self.k_east, 0.0, 0.0, 1.0 / self.k_north)
    }
}
