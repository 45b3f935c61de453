//! Deterministic scenario simulator: trajectory, world, survey map and the
//! IMU, LiDAR and GNSS streams of one drive.
//!
//! Every random draw comes from a ChaCha8 generator keyed by the scenario
//! seed and a stream id, so each stream can be regenerated independently
//! (LiDAR scans are produced lazily, one stream per scan).

pub mod gnss;
pub mod imu;
pub mod lidar;
pub mod trajectory;
pub mod world;

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{LidarMap, LidarPoint};
use crate::sins::earth::geodetic_to_ecef;
use crate::sins::{ImuSample, NavState};

pub use gnss::{GnssRecord, GnssSimulator, GnssSpec, MultipathSpec, SatelliteSpec, SlipSpec, Window};
pub use imu::{ideal_imu, ImuErrorModel, ImuSpec};
pub use lidar::{synthesize_scan, LidarSpec};
pub use trajectory::{Segment, Trajectory, TrajectorySpec, TruthSample};
pub use world::{gaussian_field, ChangeSpec, MarkingSpec, TextureSpec, WallSpec, World, WorldSpec};

const STREAM_IMU: u64 = 10;
const STREAM_GNSS: u64 = 11;
const STREAM_LATENCY: u64 = 12;
const STREAM_SCAN: u64 = 1 << 32;

/// Generator for stream `id` of `seed`.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencySpec {
    /// Uniform latency bounds, s.
    pub lidar: [f64; 2],
    pub gnss: [f64; 2],
}

impl Default for LatencySpec {
    fn default() -> Self {
        Self {
            lidar: [0.05, 0.15],
            gnss: [0.1, 0.3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveySpec {
    /// Noisy observations of every cell used to build the map.
    pub passes: usize,
    pub intensity_sigma: f64,
    pub altitude_sigma: f64,
    pub tile_dimension: u32,
}

impl Default for SurveySpec {
    fn default() -> Self {
        Self {
            passes: 4,
            intensity_sigma: 4.0,
            altitude_sigma: 0.03,
            tile_dimension: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Drive length in seconds; the whole trajectory when absent.
    pub duration: Option<f64>,
    pub trajectory: TrajectorySpec,
    pub world: WorldSpec,
    pub survey: SurveySpec,
    pub imu: ImuSpec,
    pub lidar: LidarSpec,
    pub gnss: GnssSpec,
    pub latency: LatencySpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 1,
            duration: None,
            trajectory: TrajectorySpec::default(),
            world: WorldSpec::default(),
            survey: SurveySpec::default(),
            imu: ImuSpec::default(),
            lidar: LidarSpec::default(),
            gnss: GnssSpec::default(),
            latency: LatencySpec::default(),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub const PRESETS: [&'static str; 4] = ["nominal", "short", "tunnel", "change"];

    /// Named scenarios: a 2 km drive, a 60 s drive, a 120 s drive with a
    /// 60 s GNSS outage, and a 40 s drive through a repainted, walled
    /// segment.
    pub fn preset(name: &str) -> Result<Self> {
        let mut s = Scenario {
            name: name.into(),
            ..Scenario::default()
        };
        s.trajectory.laps = 5.0;
        match name {
            "nominal" => s.duration = Some(200.0),
            "short" => s.duration = Some(60.0),
            "tunnel" => {
                s.duration = Some(120.0);
                s.gnss.outages.push(Window { start: 30.0, end: 90.0 });
            }
            "change" => {
                s.duration = Some(40.0);
                s.world.changes.push(ChangeSpec {
                    s_start: 60.0,
                    s_end: 330.0,
                    t_change: 0.0,
                    decorrelation: 0.4,
                    marking_shift: 0.5,
                    wall: Some(WallSpec {
                        s_start: 60.0,
                        s_end: 330.0,
                        offset: 9.0,
                        thickness: 0.3,
                        height: 2.0,
                    }),
                });
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown scenario {name:?}, expected a file or one of {}",
                    Self::PRESETS.join(", ")
                )))
            }
        }
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        let imu = self.imu.rate;
        let ratio = |r: f64| imu / r;
        if !(imu > 0.0) || !(self.lidar.rate > 0.0) || !(self.gnss.rate > 0.0) {
            return Err(Error::Config("sensor rates must be positive".into()));
        }
        for (name, r) in [("lidar", self.lidar.rate), ("gnss", self.gnss.rate)] {
            let k = ratio(r);
            if (k - k.round()).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "{name} rate {r} Hz does not divide the IMU rate"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.lidar.sparsity) {
            return Err(Error::Config(format!("lidar sparsity {}", self.lidar.sparsity)));
        }
        for l in [self.latency.lidar, self.latency.gnss] {
            if !(l[0] >= 0.0 && l[1] >= l[0]) {
                return Err(Error::Config(format!("latency bounds {l:?}")));
            }
        }
        Ok(())
    }
}

/// LiDAR frame bookkeeping; the points come from [`Dataset::scan`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarFrame {
    pub index: usize,
    pub t: f64,
    pub t_received: f64,
}

/// One simulated drive.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub scenario: Scenario,
    pub trajectory: Trajectory,
    pub world: World,
    /// Truth at every IMU epoch, starting at t = 0.
    pub truth: Vec<TruthSample>,
    /// `imu[k]` covers `(truth[k].t, truth[k + 1].t]`.
    pub imu: Vec<ImuSample>,
    /// True (accel, gyro) bias during each IMU sample.
    pub imu_bias: Vec<(Vector3<f64>, Vector3<f64>)>,
    pub lidar: Vec<LidarFrame>,
    pub gnss: Vec<GnssRecord>,
}

impl Dataset {
    pub fn generate(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let traj = Trajectory::new(&scenario.trajectory)?;
        let world = World::generate(&scenario.world, &traj, scenario.seed)?;
        let duration = scenario.duration.unwrap_or_else(|| traj.duration());
        if !(duration > 0.0) || duration > traj.duration() + 1e-9 {
            return Err(Error::Config(format!(
                "duration {duration} s outside the {:.1} s trajectory",
                traj.duration()
            )));
        }
        let rate = scenario.imu.rate;
        let dt = 1.0 / rate;
        let n = (duration * rate + 1e-9).floor() as usize;
        let earth = scenario.trajectory.earth;
        let mut truth = Vec::with_capacity(n + 1);
        let mut imu = Vec::with_capacity(n);
        let mut imu_bias = Vec::with_capacity(n);
        let mut errors = ImuErrorModel::new(scenario.imu, stream(scenario.seed, STREAM_IMU));
        truth.push(traj.sample(0.0)?);
        for k in 1..=n {
            let t = k as f64 * dt;
            let mid = traj.sample(t - 0.5 * dt)?;
            let (g, a) = ideal_imu(earth, &mid)?;
            imu_bias.push((errors.accel_bias, errors.gyro_bias));
            imu.push(errors.corrupt(t, g, a));
            truth.push(traj.sample(t)?);
        }

        let mut lat_rng = stream(scenario.seed, STREAM_LATENCY);
        let latency = |b: [f64; 2], rng: &mut ChaCha8Rng| {
            if b[1] > b[0] {
                rng.random_range(b[0]..b[1])
            } else {
                b[0]
            }
        };
        let lidar_every = (rate / scenario.lidar.rate).round() as usize;
        let mut lidar = Vec::new();
        let mut k = lidar_every;
        while k <= n {
            let t = truth[k].t;
            lidar.push(LidarFrame {
                index: k,
                t,
                t_received: t + latency(scenario.latency.lidar, &mut lat_rng),
            });
            k += lidar_every;
        }

        let gnss_every = (rate / scenario.gnss.rate).round() as usize;
        let origin = traj.projection.to_geodetic(0.0, 0.0, scenario.trajectory.origin[2]);
        let mut sim = GnssSimulator::new(scenario.gnss.clone(), &origin, stream(scenario.seed, STREAM_GNSS));
        let mut gnss = Vec::new();
        let mut k = gnss_every;
        while k <= n {
            let tr = &truth[k];
            if let Some((epoch, ambiguities)) = sim.observe(tr.t, &geodetic_to_ecef(&tr.pos)) {
                gnss.push(GnssRecord {
                    t_received: tr.t + latency(scenario.latency.gnss, &mut lat_rng),
                    epoch,
                    ambiguities,
                });
            }
            k += gnss_every;
        }
        Ok(Dataset {
            scenario: scenario.clone(),
            trajectory: traj,
            world,
            truth,
            imu,
            imu_bias,
            lidar,
            gnss,
        })
    }

    /// Points of LiDAR frame `k`, regenerated from its own stream.
    pub fn scan(&self, k: usize) -> Vec<LidarPoint> {
        let f = &self.lidar[k];
        let pose = self.truth[f.index].pose;
        let mut rng = stream(self.scenario.seed, STREAM_SCAN + k as u64);
        synthesize_scan(&self.world, &pose, f.t, &self.scenario.lidar, &mut rng)
    }

    /// Survey map of the world before any change.
    pub fn survey_map(&self) -> Result<LidarMap> {
        let s = &self.scenario.survey;
        self.world.build_map(
            false,
            s.passes,
            (s.intensity_sigma, s.altitude_sigma),
            s.tile_dimension,
            self.scenario.seed,
        )
    }

    /// True navigation state at t = 0 with zero bias estimates.
    pub fn initial_truth(&self) -> NavState {
        let t = &self.truth[0];
        NavState::new(t.t, t.pos, t.vel, t.att)
    }

    /// Truth at IMU epoch nearest to `t`.
    pub fn truth_near(&self, t: f64) -> &TruthSample {
        let rate = self.scenario.imu.rate;
        let k = ((t * rate).round().max(0.0) as usize).min(self.truth.len() - 1);
        &self.truth[k]
    }
}
