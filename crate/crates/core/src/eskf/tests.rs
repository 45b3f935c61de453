use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::sins::{attitude_from_euler, skew, EarthModel, ErrorState, ImuSample, NavState};

fn nav_at(lat: f64, vel: Vector3<f64>) -> NavState {
    let mut n = NavState::new(
        0.0,
        Vector3::new(2.0, lat, 50.0),
        vel,
        attitude_from_euler(0.03, -0.02, 0.7),
    );
    n.accel_bias = Vector3::new(0.01, -0.02, 0.005);
    n.gyro_bias = Vector3::new(1e-5, -2e-5, 3e-5);
    n
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Error-state derivative computed from the nonlinear kinematics of a true
/// state and a nominal state displaced from it by `dx`.
fn error_rate(truth: &NavState, sample: &ImuSample, dx: &ErrorState) -> ErrorState {
    let model = EarthModel::Wgs84;
    let dpsi: Vector3<f64> = dx.fixed_rows::<3>(6).into_owned();
    let mut nom = *truth;
    nom.pos += dx.fixed_rows::<3>(0);
    nom.vel += dx.fixed_rows::<3>(3);
    nom.att = UnitQuaternion::from_scaled_axis(-dpsi) * truth.att;
    nom.accel_bias -= dx.fixed_rows::<3>(9);
    nom.gyro_bias -= dx.fixed_rows::<3>(12);

    let rates = |s: &NavState| {
        let ep = model.params(&s.pos, &s.vel).unwrap();
        let c = s.dcm();
        let r_dot = ep.rc.component_mul(&s.vel);
        let v_dot = c * (sample.accel - s.accel_bias) - (2.0 * ep.omega_ie_n + ep.omega_en_n).cross(&s.vel) + ep.g_n;
        let c_dot = c * skew(&(sample.gyro - s.gyro_bias)) - skew(&ep.omega_in_n()) * c;
        (r_dot, v_dot, c, c_dot)
    };
    let (rt, vt, ct, ct_dot) = rates(truth);
    let (rn, vn, cn, cn_dot) = rates(&nom);
    let e = ct * cn.transpose();
    let e_dot = ct_dot * cn.transpose() + ct * cn_dot.transpose();
    let mut out = ErrorState::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&(rn - rt));
    out.fixed_rows_mut::<3>(3).copy_from(&(vn - vt));
    out.fixed_rows_mut::<3>(6).copy_from(&vee(&(e_dot * e.transpose())));
    out
}

#[test]
fn stationary_gravity_skew_block() {
    let mut nav = NavState::new(0.0, Vector3::zeros(), Vector3::zeros(), UnitQuaternion::identity());
    nav.pos = Vector3::new(0.0, 0.0, 0.0);
    let ep = EarthModel::Wgs84.params(&nav.pos, &nav.vel).unwrap();
    let sample = ImuSample::new(0.0, ep.omega_ie_n, -ep.g_n);
    let (f, _) = build_f_g(EarthModel::Wgs84, &nav, &sample).unwrap();
    let b: Matrix3<f64> = f.fixed_view::<3, 3>(3, 6).into_owned();
    assert!((b + b.transpose()).norm() < 1e-15);
    let n = b.svd(false, false).singular_values.max();
    assert!((n - 9.78).abs() < 0.01, "{n}");
}

#[test]
fn f_matches_finite_difference_jacobian() {
    let truth = nav_at(0.6, Vector3::new(3.0, 4.0, 0.1));
    let sample = ImuSample::new(0.0, Vector3::new(0.01, -0.02, 0.15), Vector3::new(0.3, 1.2, 9.9));
    let (f, _) = build_f_g(EarthModel::Wgs84, &truth, &sample).unwrap();
    let eps = [
        1e-9, 1e-9, 1e-3, 1e-4, 1e-4, 1e-4, 1e-6, 1e-6, 1e-6, 1e-4, 1e-4, 1e-4, 1e-6, 1e-6, 1e-6,
    ];
    let mut worst = 0.0f64;
    for k in 0..15 {
        let mut d = ErrorState::zeros();
        d[k] = eps[k];
        let col = (error_rate(&truth, &sample, &d) - error_rate(&truth, &sample, &(-d))) / (2.0 * eps[k]);
        for row in 0..15 {
            // gravity / Earth-rate dependence on position is outside the model
            let out_of_model = k < 3 && (3..9).contains(&row);
            if !out_of_model {
                worst = worst.max((col[row] - f[(row, k)]).abs());
            }
        }
    }
    assert!(worst < 1e-6, "max |F - J| = {worst:e}");
}

#[test]
fn noise_does_not_reach_position() {
    let nav = nav_at(0.5, Vector3::new(5.0, 0.0, 0.0));
    let sample = ImuSample::new(0.0, Vector3::zeros(), Vector3::new(0.0, 0.0, 9.8));
    let (_, g) = build_f_g(EarthModel::Wgs84, &nav, &sample).unwrap();
    let q = ErrorStateFilter::process_noise(&ImuNoise::default());
    let gqg = g * q * g.transpose();
    for i in 0..3 {
        for j in 0..15 {
            assert_eq!(gqg[(i, j)], 0.0);
            assert_eq!(gqg[(j, i)], 0.0);
        }
    }
}

fn filter_at(nav: &NavState) -> ErrorStateFilter {
    ErrorStateFilter::new(FilterConfig::default(), nav).unwrap()
}

#[test]
fn zero_dynamics_leave_p() {
    let nav = nav_at(0.5, Vector3::zeros());
    let mut kf = filter_at(&nav);
    kf.q = SMatrix::zeros();
    let p0 = kf.p;
    kf.propagate(&Cov15::zeros(), &NoiseInput::zeros(), 0.01).unwrap();
    assert_eq!(kf.p, p0);
}

#[test]
fn scalar_riccati_closed_form() {
    let nav = nav_at(0.5, Vector3::zeros());
    let mut kf = filter_at(&nav);
    let (a, qd, dt, p0) = (-0.3, 0.02, 0.01, 0.5);
    let mut f = Cov15::zeros();
    f[(9, 9)] = a;
    kf.p = Cov15::identity();
    kf.p[(9, 9)] = p0;
    kf.q = SMatrix::zeros();
    kf.q[(6, 6)] = qd;
    let mut g = NoiseInput::zeros();
    g[(9, 6)] = 1.0;
    let n = 200;
    for _ in 0..n {
        kf.propagate(&f, &g, dt).unwrap();
    }
    let phi2 = (1.0 + a * dt).powi(2);
    let expect = phi2.powi(n) * p0 + qd * dt * (phi2.powi(n) - 1.0) / (phi2 - 1.0);
    assert!(
        (kf.p[(9, 9)] - expect).abs() < 1e-12 * expect,
        "{} vs {expect}",
        kf.p[(9, 9)]
    );
}

#[test]
fn trace_grows_without_updates() {
    let mut nav = nav_at(0.5, Vector3::new(8.0, 2.0, 0.0));
    let mut kf = filter_at(&nav);
    let sample = ImuSample::new(0.0, Vector3::new(0.0, 0.0, 0.05), Vector3::new(0.1, 0.2, 9.8));
    let mut tr = kf.p.trace();
    for _ in 0..100 {
        nav = predict_step(&mut kf, &nav, &sample, 0.005).unwrap();
        assert!(kf.p.trace() >= tr);
        tr = kf.p.trace();
    }
}

#[test]
fn zero_innovation_lidar_update() {
    let nav = nav_at(0.5, Vector3::new(5.0, 0.0, 0.0));
    let mut kf = filter_at(&nav);
    let r = SMatrix::<f64, 4, 4>::from_diagonal(&nalgebra::Vector4::new(1e-14, 1e-14, 0.04, 1e-4));
    let before = kf.p;
    let (out, res) = kf.update_lidar(&nav, &nav.pos, nav.heading(), &r).unwrap();
    assert!(res.accepted);
    assert_eq!(res.correction, ErrorState::zeros());
    assert_eq!(out.pos, nav.pos);
    for k in [0, 1, 2, 8] {
        assert!(kf.p[(k, k)] < before[(k, k)]);
    }
}

#[test]
fn heading_row_for_level_attitude() {
    let c = attitude_from_euler(0.0, 0.0, 1.1).to_rotation_matrix().into_inner();
    let h = heading_jacobian(&c);
    assert!(h.x.abs() < 1e-15 && h.y.abs() < 1e-15);
    assert_eq!(h.z, 1.0);
}

#[test]
fn heading_row_matches_numeric_derivative() {
    let q = attitude_from_euler(0.1, -0.15, 2.5);
    let c = q.to_rotation_matrix().into_inner();
    let h = heading_jacobian(&c);
    for k in 0..3 {
        let mut d = Vector3::zeros();
        d[k] = 1e-6;
        // nominal = Exp(-dpsi) * truth, so heading(nominal) - heading(truth) ~ h . dpsi
        let hp = crate::sins::heading_of(
            &(UnitQuaternion::from_scaled_axis(-d) * q)
                .to_rotation_matrix()
                .into_inner(),
        );
        let hm = crate::sins::heading_of(
            &(UnitQuaternion::from_scaled_axis(d) * q)
                .to_rotation_matrix()
                .into_inner(),
        );
        let num = (hp - hm) / 2e-6;
        assert!((num - h[k]).abs() < 1e-8, "{k}: {num} vs {}", h[k]);
    }
}

#[test]
fn scalar_bayes_on_altitude() {
    let nav = nav_at(0.5, Vector3::zeros());
    let mut kf = filter_at(&nav);
    kf.config.gate_probability = None;
    let (p, r, z) = (kf.p[(2, 2)], 0.25, 0.7);
    let mut meas = nav.pos;
    meas.z -= z;
    let mut rm = Matrix3::identity() * 1e6;
    rm[(2, 2)] = r;
    let (out, res) = kf.update_gnss(&nav, &meas, &rm).unwrap();
    let k = p / (p + r);
    assert!((res.correction[2] - k * z).abs() < 1e-12);
    assert!((kf.p[(2, 2)] - p * r / (p + r)).abs() < 1e-12);
    assert!((out.pos.z - (nav.pos.z - k * z)).abs() < 1e-12);
}

#[test]
fn gnss_update_keeps_gyro_bias_block() {
    let nav = nav_at(0.5, Vector3::zeros());
    let mut kf = filter_at(&nav);
    let before: Matrix3<f64> = kf.p.fixed_view::<3, 3>(12, 12).into_owned();
    let rm = Matrix3::from_diagonal(&Vector3::new(1e-14, 1e-14, 0.01));
    kf.update_gnss(&nav, &nav.pos, &rm).unwrap();
    let after: Matrix3<f64> = kf.p.fixed_view::<3, 3>(12, 12).into_owned();
    assert_eq!(before, after);
}

#[test]
fn gate_rejects_outlier() {
    let nav = nav_at(0.5, Vector3::zeros());
    let mut kf = filter_at(&nav);
    let p0 = kf.p;
    let mut meas = nav.pos;
    meas.z += 100.0;
    let (out, res) = kf.update_gnss(&nav, &meas, &(Matrix3::identity() * 1e-4)).unwrap();
    assert!(!res.accepted);
    assert_eq!(out, nav);
    assert_eq!(kf.p, p0);
}

// ---- delay protocol -------------------------------------------------------

pub(crate) struct Stream {
    pub nav0: NavState,
    pub imu: Vec<ImuSample>,
    pub meas: Vec<TimedMeasurement>,
}

/// Static vehicle with noisy IMU and noisy position fixes at 5 Hz.
pub(crate) fn static_stream(seed: u64, seconds: f64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nav0 = NavState::new(
        0.0,
        Vector3::new(2.0, 0.5, 30.0),
        Vector3::zeros(),
        attitude_from_euler(0.0, 0.0, 0.3),
    );
    let ep = EarthModel::Wgs84.params(&nav0.pos, &nav0.vel).unwrap();
    let cnb = nav0.att.inverse();
    let n = (seconds * 200.0).round() as usize;
    let imu = (1..=n)
        .map(|k| {
            let w = cnb * ep.omega_ie_n + Vector3::from_fn(|_, _| rng.random_range(-1e-3..1e-3));
            let f = cnb * (-ep.g_n) + Vector3::from_fn(|_, _| rng.random_range(-5e-3..5e-3));
            ImuSample::new(k as f64 * 0.005, w, f)
        })
        .collect();
    let mut meas = Vec::new();
    let mut t = 0.2;
    while t < seconds - 1e-9 {
        let e = Vector3::new(
            rng.random_range(-0.05..0.05) * ep.rc.x,
            rng.random_range(-0.05..0.05) * ep.rc.y,
            rng.random_range(-0.05..0.05),
        );
        let r = Matrix3::from_diagonal(&Vector3::new(
            (0.03 * ep.rc.x).powi(2),
            (0.03 * ep.rc.y).powi(2),
            0.03f64.powi(2),
        ));
        meas.push(TimedMeasurement {
            t_occurred: (t * 1000.0).round() / 1000.0,
            t_received: t,
            kind: MeasurementKind::GnssPosition { pos: nav0.pos + e, r },
            degraded: false,
        });
        t += 0.2;
    }
    Stream { nav0, imu, meas }
}

/// Deliver measurements by `t_received`, IMU samples first on ties.
pub(crate) fn run(stream: &Stream, meas: &[TimedMeasurement]) -> (Vec<Snapshot>, FusionEngine) {
    let mut eng = FusionEngine::new(FilterConfig::default(), stream.nav0).unwrap();
    let mut order: Vec<&TimedMeasurement> = meas.iter().collect();
    order.sort_by(|a, b| a.t_received.total_cmp(&b.t_received));
    let mut mi = 0;
    let mut rt = Vec::new();
    for s in &stream.imu {
        rt.push(eng.push_imu(s).unwrap());
        while mi < order.len() && order[mi].t_received <= s.t + 1e-9 {
            eng.push_measurement(*order[mi]).unwrap();
            mi += 1;
        }
    }
    (rt, eng)
}

fn naive(stream: &Stream) -> Vec<(NavState, Cov15)> {
    let mut kf = ErrorStateFilter::new(FilterConfig::default(), &stream.nav0).unwrap();
    let mut nav = stream.nav0;
    let mut out = Vec::new();
    let mut mi = 0;
    for s in &stream.imu {
        nav = predict_step(&mut kf, &nav, s, s.t - nav.t).unwrap();
        while mi < stream.meas.len() && (stream.meas[mi].t_occurred - nav.t).abs() < 1e-6 {
            nav = kf.apply(&nav, &stream.meas[mi].kind).unwrap().0;
            mi += 1;
        }
        out.push((nav, kf.p));
    }
    out
}

#[test]
fn zero_delay_matches_sequential_filter() {
    let mut s = static_stream(1, 3.0);
    for m in &mut s.meas {
        m.t_received = m.t_occurred;
    }
    let (_, eng) = run(&s, &s.meas);
    let (hist, _) = eng.finish();
    let reference = naive(&s);
    assert_eq!(hist.len(), reference.len());
    for (a, (nav, p)) in hist.iter().zip(&reference) {
        assert!(
            (a.nav.pos - nav.pos).abs().max() < 1e-12,
            "t={} {:?}",
            nav.t,
            a.nav.pos - nav.pos
        );
        assert!((a.p - p).abs().max() < 1e-12);
    }
}

fn final_state(eng: FusionEngine) -> Snapshot {
    let (hist, _) = eng.finish();
    *hist.last().unwrap()
}

#[test]
fn swapped_pair_matches_chronological() {
    let mut s = static_stream(2, 3.0);
    for m in &mut s.meas {
        m.t_received = m.t_occurred;
    }
    let (_, chrono) = run(&s, &s.meas);
    let mut swapped = s.meas.clone();
    // fix at 1.0 s arrives after the fix at 1.2 s
    swapped[4].t_received = 1.3;
    swapped[5].t_received = 1.25;
    let (_, late) = run(&s, &swapped);
    let (a, b) = (final_state(chrono), final_state(late));
    assert!((a.nav.pos - b.nav.pos).abs().max() < 1e-9);
    assert!((a.p - b.p).abs().max() < 1e-9);
}

#[test]
fn delayed_fix_matches_on_time_processing() {
    let mut s = static_stream(3, 3.0);
    for m in &mut s.meas {
        m.t_received = m.t_occurred;
    }
    let (_, on_time) = run(&s, &s.meas);
    let mut late = s.meas.clone();
    late[3].t_received += 0.4;
    let (_, delayed) = run(&s, &late);
    assert!(delayed.stats().replays > 0);
    let (a, b) = (final_state(on_time), final_state(delayed));
    assert!((a.nav.pos - b.nav.pos).abs().max() < 1e-9);
    assert!((a.nav.vel - b.nav.vel).abs().max() < 1e-9);
}

#[test]
fn fix_older_than_horizon_is_dropped() {
    let mut s = static_stream(4, 4.0);
    for m in &mut s.meas {
        m.t_received = m.t_occurred;
    }
    s.meas[0].t_received = 3.0;
    let (_, eng) = run(&s, &s.meas);
    let (_, stats) = eng.finish();
    assert_eq!(stats.dropped, 1);
}

#[test]
fn correction_resets_error_state() {
    let s = static_stream(5, 1.0);
    let mut kf = ErrorStateFilter::new(FilterConfig::default(), &s.nav0).unwrap();
    let m = s.meas[0];
    let (nav, out) = kf.apply(&s.nav0, &m.kind).unwrap();
    assert!(out.accepted);
    // re-applying the same fix to the corrected state gives a smaller step
    let (_, again) = kf.apply(&nav, &m.kind).unwrap();
    assert!(again.correction.fixed_rows::<3>(0).norm() < out.correction.fixed_rows::<3>(0).norm());
    let _: SVector<f64, 15> = again.correction;
}
