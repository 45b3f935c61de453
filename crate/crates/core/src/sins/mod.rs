//! Strapdown inertial navigation in the ENU frame.
//!
//! Frames: navigation `n` is east-north-up, body `b` is right-forward-up.
//! Attitude is `C_b^n = Rz(-h) * Rx(pitch) * Ry(roll)` where `h` is the
//! compass heading (clockwise from north), pitch rotates about the right
//! axis and roll about the forward axis. With that convention
//! `h = atan2(c12, c22)`, `pitch = asin(c32)` and `roll = atan2(-c31, c33)`.

pub mod earth;
mod mechanize;

use nalgebra::{Matrix3, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use earth::{EarthModel, EarthParams};
pub use mechanize::{mechanize, mechanize_with, MAX_STEP};

/// 15-element error state `(dr, dv, dpsi, dba, dbg)`.
pub type ErrorState = SVector<f64, 15>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub t: f64,
    /// Longitude (rad), latitude (rad), ellipsoidal altitude (m).
    pub pos: Vector3<f64>,
    /// ENU velocity, m/s.
    pub vel: Vector3<f64>,
    /// Body-to-navigation attitude.
    pub att: UnitQuaternion<f64>,
    /// Accelerometer bias, m/s^2 (subtracted from the raw specific force).
    pub accel_bias: Vector3<f64>,
    /// Gyro bias, rad/s (subtracted from the raw angular rate).
    pub gyro_bias: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub t: f64,
    /// Angular rate of body w.r.t. inertial space, body axes (rad/s).
    pub gyro: Vector3<f64>,
    /// Specific force, body axes (m/s^2).
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { t, gyro, accel }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.gyro.iter().all(|v| v.is_finite()) && self.accel.iter().all(|v| v.is_finite())
    }
}

impl NavState {
    pub fn new(t: f64, pos: Vector3<f64>, vel: Vector3<f64>, att: UnitQuaternion<f64>) -> Self {
        Self {
            t,
            pos,
            vel,
            att,
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
        }
    }

    pub fn dcm(&self) -> Matrix3<f64> {
        self.att.to_rotation_matrix().into_inner()
    }

    pub fn heading(&self) -> f64 {
        heading_of(&self.dcm())
    }

    /// (roll, pitch, heading) in radians.
    pub fn euler(&self) -> (f64, f64, f64) {
        euler_of(&self.dcm())
    }
}

pub fn attitude_from_euler(roll: f64, pitch: f64, heading: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -heading)
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), pitch)
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), roll)
}

pub fn heading_of(c: &Matrix3<f64>) -> f64 {
    c[(0, 1)].atan2(c[(1, 1)])
}

pub fn euler_of(c: &Matrix3<f64>) -> (f64, f64, f64) {
    let pitch = c[(2, 1)].clamp(-1.0, 1.0).asin();
    let roll = (-c[(2, 0)]).atan2(c[(2, 2)]);
    (roll, pitch, heading_of(c))
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_pi(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Largest attitude correction accepted by [`apply_correction`].
pub const MAX_ATTITUDE_CORRECTION: f64 = 0.1;

/// Feed an estimated error state back into the nominal state.
///
/// Position, velocity and attitude errors are `computed - true`; the bias
/// entries are the residual IMU output errors, so they are added to the
/// bias estimates. Attitude is corrected as `q <- dq(dpsi) * q`.
pub fn apply_correction(state: &NavState, dx: &ErrorState) -> Result<NavState> {
    if dx.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("error state"));
    }
    let dpsi: Vector3<f64> = dx.fixed_rows::<3>(6).into_owned();
    let n = dpsi.norm();
    if n >= MAX_ATTITUDE_CORRECTION {
        return Err(Error::CorrectionTooLarge(n));
    }
    let mut out = *state;
    out.pos -= dx.fixed_rows::<3>(0);
    out.pos.x = wrap_pi(out.pos.x);
    out.vel -= dx.fixed_rows::<3>(3);
    out.att = UnitQuaternion::new_normalize((UnitQuaternion::from_scaled_axis(dpsi) * state.att).into_inner());
    out.accel_bias += dx.fixed_rows::<3>(9);
    out.gyro_bias += dx.fixed_rows::<3>(12);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_state() -> NavState {
        NavState {
            t: 3.0,
            pos: Vector3::new(2.0, 0.7, 42.0),
            vel: Vector3::new(3.0, -1.0, 0.1),
            att: attitude_from_euler(0.02, -0.03, 1.1),
            accel_bias: Vector3::new(0.01, 0.0, -0.02),
            gyro_bias: Vector3::new(1e-5, 2e-5, 0.0),
        }
    }

    #[test]
    fn euler_round_trip() {
        let (r, p, h) = (0.1, -0.2, 2.5);
        let q = attitude_from_euler(r, p, h);
        let (r2, p2, h2) = euler_of(&q.to_rotation_matrix().into_inner());
        assert!((r - r2).abs() < 1e-12 && (p - p2).abs() < 1e-12 && (h - h2).abs() < 1e-12);
    }

    #[test]
    fn heading_points_forward_axis() {
        // heading 90 deg: forward (body y) points east
        let q = attitude_from_euler(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let fwd = q * Vector3::y();
        assert!((fwd - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn zero_correction_is_identity() {
        let s = sample_state();
        let out = apply_correction(&s, &ErrorState::zeros()).unwrap();
        assert_eq!(out.pos, s.pos);
        assert_eq!(out.vel, s.vel);
        assert!((out.att.coords - s.att.coords).norm() < 1e-15);
    }

    #[test]
    fn yaw_correction_changes_heading_exactly() {
        let mut s = sample_state();
        s.att = attitude_from_euler(0.0, 0.0, 0.4);
        let mut dx = ErrorState::zeros();
        dx[8] = 1e-3;
        let out = apply_correction(&s, &dx).unwrap();
        assert!(((out.heading() - s.heading()).abs() - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn large_attitude_correction_rejected() {
        let mut dx = ErrorState::zeros();
        dx[6] = 0.1;
        assert!(matches!(
            apply_correction(&sample_state(), &dx),
            Err(Error::CorrectionTooLarge(_))
        ));
    }

    #[test]
    fn apply_then_invert_is_second_order() {
        let s = sample_state();
        let mut dx = ErrorState::zeros();
        for i in 0..15 {
            dx[i] = 1e-3 * ((i as f64) * 0.7).sin();
        }
        let there = apply_correction(&s, &dx).unwrap();
        let back = apply_correction(&there, &(-dx)).unwrap();
        let scale = dx.norm_squared();
        assert!((back.pos - s.pos).norm() <= scale);
        assert!((back.vel - s.vel).norm() <= scale);
        assert!(back.att.angle_to(&s.att) <= scale);
        assert!((back.accel_bias - s.accel_bias).norm() <= scale);
    }

    #[test]
    fn quaternion_stays_normalized() {
        let s = sample_state();
        let mut dx = ErrorState::zeros();
        dx[6] = 0.05;
        dx[7] = -0.03;
        let out = apply_correction(&s, &dx).unwrap();
        assert!((out.att.coords.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrap_pi_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_pi(PI), PI);
        assert!((wrap_pi(-PI) - PI).abs() < 1e-15);
        assert!((wrap_pi(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
    }
}
