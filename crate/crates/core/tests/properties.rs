use msloc::eskf::{predict_step, ErrorStateFilter, FilterConfig, MeasurementKind};
use msloc::eval::{EpochError, TrajectoryPoint};
use msloc::gnss::integer_search;
use msloc::lidar_loc::{adaptive_gamma, combine, HistogramPosterior};
use msloc::sins::{attitude_from_euler, mechanize, ImuSample, NavState};
use nalgebra::{DMatrix, DVector, Matrix4, Vector3};
use proptest::prelude::*;

const HW: usize = 3;
const N: usize = (2 * HW + 1) * (2 * HW + 1);

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-9f64..1.0, N)
}

fn start() -> NavState {
    NavState::new(
        0.0,
        Vector3::new(2.03, 0.69, 50.0),
        Vector3::new(3.0, 8.0, 0.1),
        attitude_from_euler(0.01, 0.02, 0.4),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_stays_normalized(lik in distribution(), dx in -0.3f64..0.3, dy in -0.3f64..0.3, sigma in 0.01f64..0.5) {
        let mut p = HistogramPosterior::uniform((10.0, 20.0), HW, 0.1).unwrap();
        let k = p.update(&lik, 100.0).unwrap();
        prop_assert!((1.0..=100.0).contains(&k));
        p.predict((dx, dy), sigma).unwrap();
        p.update(&lik, 100.0).unwrap();
        let s: f64 = p.probs.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(p.probs.iter().all(|x| *x >= 0.0 && x.is_finite()));
    }

    #[test]
    fn gamma_inside_unit_interval(a in distribution(), b in distribution()) {
        let g = adaptive_gamma(&a, &b, HW, 0.1, 2.0);
        prop_assert!(g > 0.0 && g < 1.0, "gamma {}", g);
        let c = combine(&a, &b, g).unwrap();
        prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn error_split_preserves_length(dx in -5.0f64..5.0, dy in -5.0f64..5.0, h in -4.0f64..4.0) {
        let truth = TrajectoryPoint { t: 0.0, x: 1.0, y: 2.0, a: 0.0, heading: h };
        let est = TrajectoryPoint { x: 1.0 + dx, y: 2.0 + dy, ..truth };
        let e = EpochError::between(&est, &truth);
        let d = e.longitudinal.powi(2) + e.lateral.powi(2) - e.horizontal.powi(2);
        prop_assert!(d.abs() < 1e-12);
        prop_assert!((e.horizontal - dx.hypot(dy)).abs() < 1e-12);
    }

    #[test]
    fn attitude_quaternion_stays_unit(
        w in prop::array::uniform3(-1.0f64..1.0),
        f in prop::array::uniform3(-5.0f64..5.0),
        steps in 1usize..200,
    ) {
        let mut s = start();
        let sample = ImuSample::new(0.0, Vector3::from(w), Vector3::new(f[0], f[1], f[2] + 9.8));
        for _ in 0..steps {
            s = mechanize(&s, &sample, 0.01).unwrap();
        }
        prop_assert!((s.att.coords.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_stays_positive_definite(
        w in prop::array::uniform3(-0.3f64..0.3),
        f in prop::array::uniform3(-2.0f64..2.0),
        dpos in prop::array::uniform3(-1e-7f64..1e-7),
        var in 1e-16f64..1e-12,
    ) {
        let nav0 = start();
        let mut filter = ErrorStateFilter::new(FilterConfig::default(), &nav0).unwrap();
        let mut nav = nav0;
        let sample = ImuSample::new(0.0, Vector3::from(w), Vector3::new(f[0], f[1], f[2] + 9.8));
        for k in 0..50 {
            nav = predict_step(&mut filter, &nav, &sample, 0.01).unwrap();
            if k % 10 == 9 {
                let r = Matrix4::from_diagonal(&nalgebra::Vector4::new(var, var, 0.01, 1e-4));
                let m = MeasurementKind::LidarPose { pos: nav.pos + Vector3::from(dpos), heading: nav.heading(), r };
                nav = filter.apply(&nav, &m).unwrap().0;
            }
        }
        let p = filter.p;
        prop_assert!((p - p.transpose()).abs().max() <= 1e-12 * p.abs().max());
        let eig = p.symmetric_eigenvalues();
        prop_assert!(eig.min() > 0.0, "min eigenvalue {}", eig.min());
    }

    #[test]
    fn integer_search_beats_rounding(a in prop::array::uniform3(-20.0f64..20.0), l in prop::array::uniform3(-0.9f64..0.9)) {
        let lower = nalgebra::Matrix3::new(1.0, 0.0, 0.0, l[0], 1.0, 0.0, l[1], l[2], 1.0);
        let q = lower * nalgebra::Matrix3::from_diagonal(&Vector3::new(0.3, 0.1, 0.05)) * lower.transpose();
        let q = DMatrix::from_column_slice(3, 3, q.as_slice());
        let a = DVector::from_column_slice(&a);
        let sol = integer_search(&a, &q, 2, 1_000_000).unwrap();
        let qi = q.clone().try_inverse().unwrap();
        let dist = |z: &DVector<f64>| ((&a - z).transpose() * &qi * (&a - z))[0];
        let rounded = a.map(|x| x.round());
        prop_assert!(sol.distances[0] <= dist(&rounded) + 1e-9);
        prop_assert!(sol.distances.windows(2).all(|d| d[0] <= d[1]));
        let best = sol.best().map(|x| x as f64);
        prop_assert!((dist(&best) - sol.distances[0]).abs() < 1e-8 * (1.0 + sol.distances[0]));
    }
}
