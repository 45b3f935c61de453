use nalgebra::{UnitQuaternion, Vector3};

use super::{wrap_pi, EarthModel, ImuSample, NavState};
use crate::error::{Error, Result};

/// Longest integration step accepted by the mechanization.
pub const MAX_STEP: f64 = 0.1;

/// Propagate `state` over `dt` with one IMU sample on the WGS-84 model.
pub fn mechanize(state: &NavState, sample: &ImuSample, dt: f64) -> Result<NavState> {
    mechanize_with(EarthModel::Wgs84, state, sample, dt)
}

/// One midpoint step of
/// `v' = C (f - ba) - (2 w_ie + w_en) x v + g`, `r' = R_c v`,
/// `q' = 1/2 q (x) w_nb`.
///
/// The sample is treated as constant over the step (its value should
/// represent the interval midpoint). Attitude uses the exact quaternion
/// exponential of the body rate; velocity and position use a
/// predictor/corrector midpoint rule.
pub fn mechanize_with(model: EarthModel, state: &NavState, sample: &ImuSample, dt: f64) -> Result<NavState> {
    if !(dt > 0.0 && dt <= MAX_STEP) {
        return Err(Error::InvalidArgument(format!("step {dt} s outside (0, {MAX_STEP}]")));
    }
    if !sample.is_finite() {
        return Err(Error::NonFinite("imu sample"));
    }
    let w = sample.gyro - state.gyro_bias;
    let f = sample.accel - state.accel_bias;
    let q = state.att;
    let (r, v) = (state.pos, state.vel);

    let ep0 = model.params(&r, &v)?;
    let w_nb0 = w - q.inverse_transform_vector(&ep0.omega_in_n());
    let q_half = q * UnitQuaternion::from_scaled_axis(w_nb0 * (0.5 * dt));
    let a0 = q_half * f - (2.0 * ep0.omega_ie_n + ep0.omega_en_n).cross(&v) + ep0.g_n;
    let v_mid = v + a0 * (0.5 * dt);
    let r_mid = r + ep0.rc.component_mul(&(v + v_mid)) * (0.25 * dt);

    let ep = model.params(&r_mid, &v_mid)?;
    let w_nb = w - q_half.inverse_transform_vector(&ep.omega_in_n());
    let q_mid = q * UnitQuaternion::from_scaled_axis(w_nb * (0.5 * dt));
    let q_new = q * UnitQuaternion::from_scaled_axis(w_nb * dt);
    let a = q_mid * f - (2.0 * ep.omega_ie_n + ep.omega_en_n).cross(&v_mid) + ep.g_n;
    let v_new = v + a * dt;
    let mut r_new: Vector3<f64> = r + ep.rc.component_mul(&(v + v_new)) * (0.5 * dt);
    r_new.x = wrap_pi(r_new.x);

    Ok(NavState {
        t: state.t + dt,
        pos: r_new,
        vel: v_new,
        att: UnitQuaternion::new_normalize(q_new.into_inner()),
        accel_bias: state.accel_bias,
        gyro_bias: state.gyro_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sins::attitude_from_euler;

    fn stationary(model: EarthModel, heading: f64) -> (NavState, ImuSample) {
        let pos = Vector3::new(2.0, 0.6, 30.0);
        let att = attitude_from_euler(0.01, -0.02, heading);
        let ep = model.params(&pos, &Vector3::zeros()).unwrap();
        let accel = att.inverse_transform_vector(&(-ep.g_n));
        let gyro = att.inverse_transform_vector(&ep.omega_ie_n);
        (
            NavState::new(0.0, pos, Vector3::zeros(), att),
            ImuSample::new(0.0, gyro, accel),
        )
    }

    #[test]
    fn stationary_equilibrium_holds() {
        let (mut s, imu) = stationary(EarthModel::Wgs84, 0.8);
        let start = s.pos;
        let ep = EarthModel::Wgs84.params(&start, &Vector3::zeros()).unwrap();
        for _ in 0..2000 {
            s = mechanize(&s, &imu, 0.005).unwrap();
        }
        let de = (s.pos.x - start.x) / ep.rc.x;
        let dn = (s.pos.y - start.y) / ep.rc.y;
        let du = s.pos.z - start.z;
        let drift = (de * de + dn * dn + du * du).sqrt();
        assert!(drift < 1e-6, "drift {drift}");
        assert!((s.att.coords.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_acceleration_flat_earth() {
        let model = EarthModel::Flat;
        let pos = Vector3::new(0.0, 0.0, 0.0);
        let att = UnitQuaternion::identity();
        let g = model.gravity(0.0, 0.0);
        let imu = ImuSample::new(0.0, Vector3::zeros(), Vector3::new(1.0, 0.0, g));
        let mut s = NavState::new(0.0, pos, Vector3::zeros(), att);
        for _ in 0..400 {
            s = mechanize_with(model, &s, &imu, 0.005).unwrap();
        }
        assert!((s.vel - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-9);
        let x = s.pos.x * 6_378_137.0;
        assert!((x - 2.0).abs() < 1e-6, "x = {x}");
    }

    #[test]
    fn rejects_bad_step_and_nan() {
        let (s, imu) = stationary(EarthModel::Wgs84, 0.0);
        assert!(mechanize(&s, &imu, 0.0).is_err());
        assert!(mechanize(&s, &imu, 0.2).is_err());
        let mut bad = imu;
        bad.accel.x = f64::NAN;
        assert!(matches!(mechanize(&s, &bad, 0.01), Err(Error::NonFinite(_))));
    }

    type Rk = (Vector3<f64>, Vector3<f64>, nalgebra::Quaternion<f64>);

    /// Continuous-time navigation equations for constant body inputs.
    fn rates(model: EarthModel, x: &Rk, w: &Vector3<f64>, f: &Vector3<f64>) -> Rk {
        let (r, v, q) = x;
        let q = UnitQuaternion::new_normalize(*q);
        let ep = model.params(r, v).unwrap();
        let w_nb = w - q.inverse_transform_vector(&ep.omega_in_n());
        let dq = q.into_inner() * nalgebra::Quaternion::from_imag(w_nb) * 0.5;
        let dv = q * f - (2.0 * ep.omega_ie_n + ep.omega_en_n).cross(v) + ep.g_n;
        (ep.rc.component_mul(v), dv, dq)
    }

    fn rk4(model: EarthModel, s: &NavState, w: &Vector3<f64>, f: &Vector3<f64>, h: f64, n: usize) -> Vector3<f64> {
        let mut x: Rk = (s.pos, s.vel, s.att.into_inner());
        let add = |x: &Rk, k: &Rk, c: f64| -> Rk { (x.0 + k.0 * c, x.1 + k.1 * c, x.2 + k.2 * c) };
        for _ in 0..n {
            let k1 = rates(model, &x, w, f);
            let k2 = rates(model, &add(&x, &k1, h / 2.0), w, f);
            let k3 = rates(model, &add(&x, &k2, h / 2.0), w, f);
            let k4 = rates(model, &add(&x, &k3, h), w, f);
            x = (
                x.0 + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (h / 6.0),
                x.1 + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (h / 6.0),
                x.2 + (k1.2 + k2.2 * 2.0 + k3.2 * 2.0 + k4.2) * (h / 6.0),
            );
        }
        x.0
    }

    #[test]
    fn circular_motion_matches_rk4() {
        let model = EarthModel::Wgs84;
        let pos = Vector3::new(2.0, 0.6, 30.0);
        let (speed, turn) = (10.0, 0.2);
        let ep = model.params(&pos, &Vector3::zeros()).unwrap();
        let att = attitude_from_euler(0.0, 0.0, 0.0);
        let start = NavState::new(0.0, pos, Vector3::new(0.0, speed, 0.0), att);
        // coordinated turn to the right at constant speed
        let w = Vector3::new(0.0, 0.0, -turn);
        let f = Vector3::new(speed * turn, 0.0, -ep.g_n.z);
        let dt = 0.01;
        let mut s = start;
        for k in 1..=1000 {
            s = mechanize_with(model, &s, &ImuSample::new(k as f64 * dt, w, f), dt).unwrap();
        }
        let oracle = rk4(model, &start, &w, &f, dt / 100.0, 100_000);
        let ep = model.params(&oracle, &Vector3::zeros()).unwrap();
        let d = s.pos - oracle;
        let err = Vector3::new(d.x / ep.rc.x, d.y / ep.rc.y, d.z).norm();
        assert!(err < 1e-4, "{err} m");
        let radius = ((s.pos.x - pos.x) / ep.rc.x).hypot((s.pos.y - pos.y) / ep.rc.y);
        assert!(radius > 10.0, "vehicle barely moved: {radius}");
    }
}
