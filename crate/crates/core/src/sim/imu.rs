//! IMU synthesis by inverting the navigation equations along the truth.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::trajectory::TruthSample;
use crate::error::Result;
use crate::eskf::ImuNoise;
use crate::sins::{EarthModel, ImuSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuSpec {
    pub rate: f64,
    pub noise: ImuNoise,
}

impl Default for ImuSpec {
    fn default() -> Self {
        Self {
            rate: 200.0,
            noise: ImuNoise::default(),
        }
    }
}

impl ImuSpec {
    pub fn noiseless(rate: f64) -> Self {
        Self {
            rate,
            noise: ImuNoise {
                accel_noise: 0.0,
                gyro_noise: 0.0,
                accel_bias_walk: 0.0,
                gyro_bias_walk: 0.0,
                accel_bias_sigma: 0.0,
                gyro_bias_sigma: 0.0,
            },
        }
    }
}

/// Error-free `(gyro, accel)` for the motion in `truth`.
pub fn ideal_imu(model: EarthModel, truth: &TruthSample) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let ep = model.params(&truth.pos, &truth.vel)?;
    let c = truth.att;
    let f_n = truth.acc + (2.0 * ep.omega_ie_n + ep.omega_en_n).cross(&truth.vel) - ep.g_n;
    let accel = c.inverse_transform_vector(&f_n);
    let gyro = truth.omega_nb + c.inverse_transform_vector(&ep.omega_in_n());
    Ok((gyro, accel))
}

/// Sensor errors evolving along the stream.
#[derive(Debug, Clone)]
pub struct ImuErrorModel<R> {
    spec: ImuSpec,
    rng: R,
    pub accel_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

fn gauss3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::from_fn(|_, _| StandardNormal.sample(rng))
}

impl<R: Rng> ImuErrorModel<R> {
    pub fn new(spec: ImuSpec, mut rng: R) -> Self {
        let accel_bias = gauss3(&mut rng) * spec.noise.accel_bias_sigma;
        let gyro_bias = gauss3(&mut rng) * spec.noise.gyro_bias_sigma;
        Self {
            spec,
            rng,
            accel_bias,
            gyro_bias,
        }
    }

    /// Corrupt one ideal sample and advance the bias walk by one period.
    pub fn corrupt(&mut self, t: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> ImuSample {
        let n = self.spec.noise;
        let dt = 1.0 / self.spec.rate;
        let sq = self.spec.rate.sqrt();
        let s = ImuSample::new(
            t,
            gyro + self.gyro_bias + gauss3(&mut self.rng) * (n.gyro_noise * sq),
            accel + self.accel_bias + gauss3(&mut self.rng) * (n.accel_noise * sq),
        );
        self.accel_bias += gauss3(&mut self.rng) * (n.accel_bias_walk * dt.sqrt());
        self.gyro_bias += gauss3(&mut self.rng) * (n.gyro_bias_walk * dt.sqrt());
        s
    }
}
