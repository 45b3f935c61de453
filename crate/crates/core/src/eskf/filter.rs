use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::sins::{apply_correction, skew, wrap_pi, EarthModel, ErrorState, ImuSample, NavState};

pub type Cov15 = SMatrix<f64, 15, 15>;
pub type NoiseInput = SMatrix<f64, 15, 12>;

/// Continuous-time noise densities of the IMU model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuNoise {
    /// Accelerometer white noise, m/s^2/sqrt(Hz).
    pub accel_noise: f64,
    /// Gyro white noise, rad/s/sqrt(Hz).
    pub gyro_noise: f64,
    /// Accelerometer bias random walk, m/s^3/sqrt(Hz).
    pub accel_bias_walk: f64,
    /// Gyro bias random walk, rad/s^2/sqrt(Hz).
    pub gyro_bias_walk: f64,
    /// Initial accelerometer bias std, m/s^2.
    pub accel_bias_sigma: f64,
    /// Initial gyro bias std, rad/s.
    pub gyro_bias_sigma: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            accel_noise: 5.0e-4,
            gyro_noise: 8.7e-5,
            accel_bias_walk: 2.0e-5,
            gyro_bias_walk: 5.0e-7,
            accel_bias_sigma: 5.0e-3,
            gyro_bias_sigma: 2.5e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub earth: EarthModel,
    pub noise: ImuNoise,
    /// Innovation gate probability; `None` disables gating.
    pub gate_probability: Option<f64>,
    pub lidar_altitude_var: f64,
    pub lidar_heading_var: f64,
    pub init_position_sigma: f64,
    pub init_velocity_sigma: f64,
    pub init_tilt_sigma: f64,
    pub init_heading_sigma: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            earth: EarthModel::Wgs84,
            noise: ImuNoise::default(),
            gate_probability: Some(0.997),
            lidar_altitude_var: 0.04,
            lidar_heading_var: 0.5f64.to_radians().powi(2),
            init_position_sigma: 1.0,
            init_velocity_sigma: 0.5,
            init_tilt_sigma: 1.0f64.to_radians(),
            init_heading_sigma: 5.0f64.to_radians(),
        }
    }
}

/// Error dynamics `F` and noise input `G` at the nominal state.
///
/// The position rows use the exact Jacobian of `R_c v` with respect to
/// `(lambda, L, a)`, so that the mixed radian/metre error stays consistent.
pub fn build_f_g(model: EarthModel, nav: &NavState, sample: &ImuSample) -> Result<(Cov15, NoiseInput)> {
    let ep = model.params(&nav.pos, &nav.vel)?;
    let c = nav.dcm();
    let f_n = c * (sample.accel - nav.accel_bias);
    let mut f = Cov15::zeros();

    let (lat, alt) = (nav.pos.y, nav.pos.z);
    let (d_rn, d_rm) = model.radii_derivatives(lat);
    let (s, co) = lat.sin_cos();
    let rn = ep.r_n + alt;
    let rm = ep.r_m + alt;
    let (ve, vn) = (nav.vel.x, nav.vel.y);
    let mut f_rr = Matrix3::zeros();
    f_rr[(0, 1)] = ve * (rn * s - d_rn * co) / (rn * co).powi(2);
    f_rr[(0, 2)] = -ve / (rn * rn * co);
    f_rr[(1, 1)] = -vn * d_rm / (rm * rm);
    f_rr[(1, 2)] = -vn / (rm * rm);

    f.fixed_view_mut::<3, 3>(0, 0).copy_from(&f_rr);
    f.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&Matrix3::from_diagonal(&ep.rc));
    f.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(-skew(&(2.0 * ep.omega_ie_n + ep.omega_en_n))));
    f.fixed_view_mut::<3, 3>(3, 6).copy_from(&skew(&f_n));
    f.fixed_view_mut::<3, 3>(3, 9).copy_from(&c);
    f.fixed_view_mut::<3, 3>(6, 6).copy_from(&(-skew(&ep.omega_in_n())));
    f.fixed_view_mut::<3, 3>(6, 12).copy_from(&(-c));

    let mut g = NoiseInput::zeros();
    g.fixed_view_mut::<3, 3>(3, 0).copy_from(&c);
    g.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-c));
    g.fixed_view_mut::<6, 6>(9, 6)
        .copy_from(&SMatrix::<f64, 6, 6>::identity());
    Ok((f, g))
}

/// Heading row of the LiDAR observation matrix for attitude `c`.
pub fn heading_jacobian(c: &Matrix3<f64>) -> Vector3<f64> {
    let (c12, c22, c32) = (c[(0, 1)], c[(1, 1)], c[(2, 1)]);
    let d = c22 * c22 + c12 * c12;
    Vector3::new(-c12 * c32 / d, -c22 * c32 / d, 1.0)
}

/// Measurement kinds fed to the filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MeasurementKind {
    /// Geodetic position plus heading with a 4x4 covariance in
    /// (rad, rad, m, rad) units.
    LidarPose {
        pos: Vector3<f64>,
        heading: f64,
        r: SMatrix<f64, 4, 4>,
    },
    /// Geodetic position with a 3x3 covariance in (rad, rad, m) units.
    GnssPosition { pos: Vector3<f64>, r: Matrix3<f64> },
}

impl MeasurementKind {
    pub fn rank(&self) -> u8 {
        match self {
            MeasurementKind::LidarPose { .. } => 0,
            MeasurementKind::GnssPosition { .. } => 1,
        }
    }

    /// Values in a fixed order, used for canonical ordering.
    pub fn values(&self) -> Vec<f64> {
        match self {
            MeasurementKind::LidarPose { pos, heading, r } => {
                let mut v: Vec<f64> = pos.iter().copied().collect();
                v.push(*heading);
                v.extend(r.iter());
                v
            }
            MeasurementKind::GnssPosition { pos, r } => pos.iter().chain(r.iter()).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedMeasurement {
    pub t_occurred: f64,
    pub t_received: f64,
    pub kind: MeasurementKind,
    pub degraded: bool,
}

impl TimedMeasurement {
    /// Total order by occurrence time, kind, then value bits.
    pub fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.t_occurred
            .total_cmp(&other.t_occurred)
            .then(self.kind.rank().cmp(&other.kind.rank()))
            .then_with(|| {
                let (a, b) = (self.kind.values(), other.kind.values());
                a.iter()
                    .zip(&b)
                    .map(|(x, y)| x.to_bits().cmp(&y.to_bits()))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub accepted: bool,
    /// Normalized innovation squared.
    pub nis: f64,
    pub correction: ErrorState,
}

/// 15-state error covariance and process noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStateFilter {
    pub p: Cov15,
    pub q: SMatrix<f64, 12, 12>,
    pub config: FilterConfig,
}

fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

fn gate_threshold(prob: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64)
        .map(|d| d.inverse_cdf(prob))
        .unwrap_or(f64::INFINITY)
}

impl ErrorStateFilter {
    /// Filter with the configured initial uncertainty at `nav`.
    pub fn new(config: FilterConfig, nav: &NavState) -> Result<Self> {
        let ep = config.earth.params(&nav.pos, &nav.vel)?;
        let sp = config.init_position_sigma;
        let mut d = SVector::<f64, 15>::zeros();
        d[0] = (sp * ep.rc.x).powi(2);
        d[1] = (sp * ep.rc.y).powi(2);
        d[2] = sp * sp;
        for k in 3..6 {
            d[k] = config.init_velocity_sigma.powi(2);
        }
        d[6] = config.init_tilt_sigma.powi(2);
        d[7] = config.init_tilt_sigma.powi(2);
        d[8] = config.init_heading_sigma.powi(2);
        for k in 9..12 {
            d[k] = config.noise.accel_bias_sigma.powi(2);
        }
        for k in 12..15 {
            d[k] = config.noise.gyro_bias_sigma.powi(2);
        }
        Ok(Self {
            p: Cov15::from_diagonal(&d),
            q: Self::process_noise(&config.noise),
            config,
        })
    }

    pub fn process_noise(n: &ImuNoise) -> SMatrix<f64, 12, 12> {
        let mut d = SVector::<f64, 12>::zeros();
        for k in 0..3 {
            d[k] = n.accel_noise.powi(2);
            d[k + 3] = n.gyro_noise.powi(2);
            d[k + 6] = n.accel_bias_walk.powi(2);
            d[k + 9] = n.gyro_bias_walk.powi(2);
        }
        SMatrix::from_diagonal(&d)
    }

    /// `P <- Phi P Phi' + G Q G' dt` with `Phi = I + F dt`.
    pub fn propagate(&mut self, f: &Cov15, g: &NoiseInput, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt <= crate::sins::MAX_STEP) {
            return Err(Error::InvalidArgument(format!("step {dt}")));
        }
        let phi = Cov15::identity() + f * dt;
        let p = phi * self.p * phi.transpose() + g * self.q * g.transpose() * dt;
        let p = symmetrize(&p);
        if !p.iter().all(|v| v.is_finite()) || p.cholesky().is_none() {
            return Err(Error::IllConditioned);
        }
        self.p = p;
        Ok(())
    }

    /// Generic Joseph-form update with gating. On acceptance the correction
    /// is fed back into the returned state.
    pub fn update<const M: usize>(
        &mut self,
        nav: &NavState,
        z: &SVector<f64, M>,
        h: &SMatrix<f64, M, 15>,
        r: &SMatrix<f64, M, M>,
    ) -> Result<(NavState, UpdateOutcome)> {
        if !z.iter().chain(r.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("measurement"));
        }
        let s = symmetrize(&(h * self.p * h.transpose() + r));
        let s_chol = s.cholesky().ok_or(Error::IllConditioned)?;
        let nis = z.dot(&s_chol.solve(z));
        let gated = self.config.gate_probability.is_some_and(|p| nis > gate_threshold(p, M));
        if gated {
            log::debug!("measurement gated: nis {nis:.2}");
            return Ok((
                *nav,
                UpdateOutcome {
                    accepted: false,
                    nis,
                    correction: ErrorState::zeros(),
                },
            ));
        }
        // K = P H' S^-1
        let k = s_chol.solve(&(h * self.p)).transpose();
        let dx = k * z;
        let ikh = Cov15::identity() - k * h;
        let p = symmetrize(&(ikh * self.p * ikh.transpose() + k * r * k.transpose()));
        if p.cholesky().is_none() {
            return Err(Error::IllConditioned);
        }
        let corrected = apply_correction(nav, &dx)?;
        self.p = p;
        Ok((
            corrected,
            UpdateOutcome {
                accepted: true,
                nis,
                correction: dx,
            },
        ))
    }

    pub fn update_lidar(
        &mut self,
        nav: &NavState,
        pos: &Vector3<f64>,
        heading: f64,
        r: &SMatrix<f64, 4, 4>,
    ) -> Result<(NavState, UpdateOutcome)> {
        let mut z = SVector::<f64, 4>::zeros();
        z.fixed_rows_mut::<3>(0).copy_from(&(nav.pos - pos));
        z[0] = wrap_pi(z[0]);
        z[3] = wrap_pi(nav.heading() - heading);
        let mut h = SMatrix::<f64, 4, 15>::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        h.fixed_view_mut::<1, 3>(3, 6)
            .copy_from(&heading_jacobian(&nav.dcm()).transpose());
        self.update(nav, &z, &h, r)
    }

    pub fn update_gnss(
        &mut self,
        nav: &NavState,
        pos: &Vector3<f64>,
        r: &Matrix3<f64>,
    ) -> Result<(NavState, UpdateOutcome)> {
        let mut z = nav.pos - pos;
        z[0] = wrap_pi(z[0]);
        let mut h = SMatrix::<f64, 3, 15>::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        self.update(nav, &z, &h, r)
    }

    pub fn apply(&mut self, nav: &NavState, m: &MeasurementKind) -> Result<(NavState, UpdateOutcome)> {
        match m {
            MeasurementKind::LidarPose { pos, heading, r } => self.update_lidar(nav, pos, *heading, r),
            MeasurementKind::GnssPosition { pos, r } => self.update_gnss(nav, pos, r),
        }
    }
}

/// One nominal + covariance step over an IMU sample.
pub fn predict_step(filter: &mut ErrorStateFilter, nav: &NavState, sample: &ImuSample, dt: f64) -> Result<NavState> {
    let (f, g) = build_f_g(filter.config.earth, nav, sample)?;
    let next = crate::sins::mechanize_with(filter.config.earth, nav, sample, dt)?;
    filter.propagate(&f, &g, dt)?;
    Ok(next)
}
