//! Sensor log replay through the localization stack in one of several modes.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eskf::{FilterConfig, FusionEngine, FusionStats, MeasurementKind, Snapshot, TimedMeasurement};
use crate::eval::TrajectoryPoint;
use crate::gnss::{detect_cycle_slips, rtk_solution, GnssEpoch, InsPrior, RtkConfig, RtkSolution, SlipReport};
use crate::lidar_loc::{CueWeighting, LidarFix, LidarLocalizer, LocalizerConfig};
use crate::map::{LidarMap, LidarPoint, LocalProjection, Pose6};
use crate::sim::{Dataset, LidarFrame};
use crate::sins::earth::geodetic_to_ecef;
use crate::sins::{euler_of, ImuSample, NavState};

/// Heading variance used when a fix carries no heading information, rad^2.
const HEADING_UNINFORMATIVE: f64 = 1.0e2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// LiDAR and IMU.
    TwoSys,
    /// LiDAR, GNSS and IMU.
    ThreeSys,
    LidarOnly,
    GnssOnly,
    /// LiDAR and IMU, intensity cue only.
    IntensityOnly,
    /// LiDAR and IMU, no heading registration.
    HeadingOff,
    /// LiDAR and IMU with a constant cue weight.
    FixedGamma,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::TwoSys,
        Mode::ThreeSys,
        Mode::LidarOnly,
        Mode::GnssOnly,
        Mode::IntensityOnly,
        Mode::HeadingOff,
        Mode::FixedGamma,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::TwoSys => "2sys",
            Mode::ThreeSys => "3sys",
            Mode::LidarOnly => "lidar-only",
            Mode::GnssOnly => "gnss-only",
            Mode::IntensityOnly => "intensity-only",
            Mode::HeadingOff => "heading-off",
            Mode::FixedGamma => "fixed-gamma",
        }
    }

    pub fn uses_lidar(&self) -> bool {
        !matches!(self, Mode::GnssOnly)
    }

    pub fn uses_gnss(&self) -> bool {
        matches!(self, Mode::ThreeSys | Mode::GnssOnly)
    }

    pub fn uses_imu(&self) -> bool {
        !matches!(self, Mode::LidarOnly | Mode::GnssOnly)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = s.to_ascii_lowercase().replace('_', "-");
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == k || (k == "fixed-γ" && *m == Mode::FixedGamma))
            .ok_or_else(|| {
                let names: Vec<_> = Mode::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidArgument(format!("unknown mode {s:?}, expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    pub localizer: LocalizerConfig,
    pub rtk: RtkConfig,
    /// Cue weight of the fixed-gamma mode.
    pub fixed_gamma: f64,
    /// Trajectory output rate, Hz.
    pub output_rate: f64,
    /// Replay horizon of the fusion buffer, s.
    pub horizon: f64,
    /// Only fixed RTK solutions reach the filter.
    pub gnss_fixed_only: bool,
    /// Floor added to the INS position covariance before aiding the
    /// ambiguity search, m^2.
    pub ins_prior_floor: f64,
    /// Std of the INS displacement between GNSS epochs for slip
    /// detection, m.
    pub slip_increment_sigma: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            localizer: LocalizerConfig::default(),
            rtk: RtkConfig::default(),
            fixed_gamma: 0.5,
            output_rate: 10.0,
            horizon: crate::eskf::DEFAULT_HORIZON,
            gnss_fixed_only: false,
            ins_prior_floor: 1.0e-4,
            slip_increment_sigma: 0.05,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Localizer settings with the mode's ablation applied.
    pub fn localizer_for(&self, mode: Mode) -> LocalizerConfig {
        let mut c = self.localizer;
        match mode {
            Mode::IntensityOnly => c.likelihood.weighting = CueWeighting::IntensityOnly,
            Mode::HeadingOff => c.use_heading = false,
            Mode::FixedGamma => c.likelihood.weighting = CueWeighting::Fixed(self.fixed_gamma),
            _ => {}
        }
        c
    }
}

/// GNSS epoch with its arrival time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnssArrival {
    pub t_received: f64,
    pub epoch: GnssEpoch,
}

/// Everything recorded on a drive except the LiDAR points themselves.
#[derive(Debug, Clone)]
pub struct SensorLog {
    pub initial: NavState,
    pub projection: LocalProjection,
    pub imu: Vec<ImuSample>,
    pub lidar: Vec<LidarFrame>,
    pub gnss: Vec<GnssArrival>,
}

impl SensorLog {
    pub fn from_dataset(d: &Dataset) -> Self {
        Self {
            initial: d.initial_truth(),
            projection: d.trajectory.projection,
            imu: d.imu.clone(),
            lidar: d.lidar.clone(),
            gnss: d
                .gnss
                .iter()
                .map(|g| GnssArrival {
                    t_received: g.t_received,
                    epoch: g.epoch.clone(),
                })
                .collect(),
        }
    }
}

/// Source of LiDAR points by frame position in [`SensorLog::lidar`].
pub trait ScanSource {
    fn scan(&self, k: usize) -> Result<Vec<LidarPoint>>;
}

impl ScanSource for Dataset {
    fn scan(&self, k: usize) -> Result<Vec<LidarPoint>> {
        Ok(Dataset::scan(self, k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixRecord {
    pub t: f64,
    pub fix: LidarFix,
    pub prior: Pose6,
}

/// One output epoch: geodetic position (rad, rad, m), ENU velocity,
/// attitude (rad) and ENU position std (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavRecord {
    pub t: f64,
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub sigma: Vector3<f64>,
}

impl NavRecord {
    pub fn point(&self, proj: &LocalProjection) -> TrajectoryPoint {
        let (x, y) = proj.forward(self.pos.x, self.pos.y);
        TrajectoryPoint {
            t: self.t,
            x,
            y,
            a: self.pos.z,
            heading: self.yaw,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub records: Vec<NavRecord>,
    /// Records in the map frame.
    pub trajectory: Vec<TrajectoryPoint>,
    pub fixes: Vec<FixRecord>,
    pub gnss: Vec<RtkSolution>,
    pub slips: Vec<SlipReport>,
    pub stats: FusionStats,
    pub skipped_frames: usize,
    pub skipped_epochs: usize,
}

fn pose_of(nav: &NavState, proj: &LocalProjection) -> Pose6 {
    let (x, y) = proj.forward(nav.pos.x, nav.pos.y);
    let (roll, pitch, heading) = euler_of(&nav.dcm());
    Pose6 {
        x,
        y,
        a: nav.pos.z,
        roll,
        pitch,
        heading,
    }
}

impl RunOutput {
    fn push(&mut self, r: NavRecord, proj: &LocalProjection) {
        self.trajectory.push(r.point(proj));
        self.records.push(r);
    }
}

/// Position covariance of a snapshot in ENU metres.
fn enu_covariance(s: &Snapshot, cfg: &FilterConfig) -> Result<Matrix3<f64>> {
    let ep = cfg.earth.params(&s.nav.pos, &s.nav.vel)?;
    let d = Matrix3::from_diagonal(&ep.rc.map(|r| 1.0 / r));
    Ok(d * s.p.fixed_view::<3, 3>(0, 0) * d)
}

/// Localization errors that only cost the current frame or epoch.
fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::EmptyScan
            | Error::InsufficientOverlap(_)
            | Error::GeometryDeficient(_)
            | Error::IllConditioned
            | Error::SlipDetectionUnavailable(_)
            | Error::Infeasible(_)
            | Error::AltitudeUnavailable { .. }
    )
}

fn lidar_measurement(
    t: f64,
    t_received: f64,
    fix: &LidarFix,
    proj: &LocalProjection,
    cfg: &FilterConfig,
) -> TimedMeasurement {
    let j = proj.inverse_jacobian();
    let c: Matrix2<f64> = j * fix.covariance_xy * j.transpose();
    let mut r = SMatrix::<f64, 4, 4>::zeros();
    r.fixed_view_mut::<2, 2>(0, 0).copy_from(&c);
    r[(2, 2)] = cfg.lidar_altitude_var;
    r[(3, 3)] = if fix.heading_degraded {
        HEADING_UNINFORMATIVE
    } else {
        cfg.lidar_heading_var
    };
    TimedMeasurement {
        t_occurred: t,
        t_received,
        kind: MeasurementKind::LidarPose {
            pos: proj.to_geodetic(fix.x, fix.y, fix.a),
            heading: fix.heading,
            r,
        },
        degraded: fix.degraded,
    }
}

fn gnss_measurement(sol: &RtkSolution, t_received: f64, cfg: &FilterConfig) -> Result<TimedMeasurement> {
    let ep = cfg.earth.params(&sol.position, &Vector3::zeros())?;
    let d = Matrix3::from_diagonal(&ep.rc);
    let r = d * sol.covariance_enu() * d;
    Ok(TimedMeasurement {
        t_occurred: sol.t,
        t_received,
        kind: MeasurementKind::GnssPosition {
            pos: sol.position,
            r: (r + r.transpose()) * 0.5,
        },
        degraded: !sol.fixed,
    })
}

/// Replay `log` in `mode` and return the estimated trajectory.
pub fn run(
    log: &SensorLog,
    scans: &dyn ScanSource,
    map: Option<&LidarMap>,
    mode: Mode,
    cfg: &PipelineConfig,
) -> Result<RunOutput> {
    if mode.uses_lidar() && map.is_none() {
        return Err(Error::InvalidArgument(format!("mode {mode} needs a map")));
    }
    if !(cfg.output_rate > 0.0) {
        return Err(Error::Config("output_rate must be positive".into()));
    }
    if let Some(m) = map.filter(|_| mode.uses_lidar()) {
        // the drive has to start on the map
        let p = pose_of(&log.initial, &log.projection);
        m.altitude_at(p.x, p.y)?;
    }
    match mode {
        Mode::LidarOnly => run_lidar_only(log, scans, map.expect("checked"), cfg),
        Mode::GnssOnly => run_gnss_only(log, cfg),
        _ => run_fused(log, scans, map.expect("checked"), mode, cfg),
    }
}

struct GnssState {
    prev: Option<(GnssEpoch, Vector3<f64>, Vector3<f64>)>,
}

impl GnssState {
    /// Slip check against the previous epoch, then the INS-aided solution.
    fn process(
        &mut self,
        arrival: &GnssArrival,
        ins: &InsPrior,
        cfg: &PipelineConfig,
        out: &mut RunOutput,
    ) -> Result<Option<RtkSolution>> {
        let epoch = &arrival.epoch;
        epoch.validate()?;
        if let Some((prev, x_prev, ins_prev)) = &self.prev {
            let inc = ins.position - ins_prev;
            let q = Matrix3::identity() * cfg.slip_increment_sigma.powi(2);
            match detect_cycle_slips(prev, epoch, x_prev, Some((&inc, &q)), &cfg.rtk) {
                Ok(r) => {
                    if !r.slips.is_empty() {
                        log::info!("cycle slips at t={:.2}: {:?}", epoch.t, r.slips);
                    }
                    out.slips.push(r);
                }
                Err(e) if recoverable(&e) => {
                    log::debug!("slip check skipped at t={:.2}: {e}", epoch.t)
                }
                Err(e) => return Err(e),
            }
        }
        match rtk_solution(epoch, &ins.position, Some(ins), &cfg.rtk) {
            Ok(sol) => {
                self.prev = Some((epoch.clone(), sol.position_ecef, ins.position));
                Ok(Some(sol))
            }
            Err(e) if recoverable(&e) => {
                log::debug!("no RTK solution at t={:.2}: {e}", epoch.t);
                self.prev = None;
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

fn run_fused(
    log: &SensorLog,
    scans: &dyn ScanSource,
    map: &LidarMap,
    mode: Mode,
    cfg: &PipelineConfig,
) -> Result<RunOutput> {
    let proj = &log.projection;
    let mut engine = FusionEngine::new(cfg.filter, log.initial)?;
    engine.set_horizon(cfg.horizon);
    engine.discard_history();
    let mut localizer = LidarLocalizer::new(cfg.localizer_for(mode));
    let mut gnss = GnssState { prev: None };
    let mut out = RunOutput::default();

    let mut lidar: Vec<usize> = (0..log.lidar.len()).collect();
    lidar.sort_by(|&a, &b| log.lidar[a].t_received.total_cmp(&log.lidar[b].t_received));
    let mut arrivals: Vec<&GnssArrival> = if mode.uses_gnss() {
        log.gnss.iter().collect()
    } else {
        Vec::new()
    };
    arrivals.sort_by(|a, b| a.t_received.total_cmp(&b.t_received));
    let (mut li, mut gi) = (0, 0);

    let period = 1.0 / cfg.output_rate;
    let mut next_out = log.initial.t;
    let record = |s: &Snapshot, out: &mut RunOutput| -> Result<()> {
        let c = enu_covariance(s, &cfg.filter)?;
        let (roll, pitch, yaw) = euler_of(&s.nav.dcm());
        let r = NavRecord {
            t: s.nav.t,
            pos: s.nav.pos,
            vel: s.nav.vel,
            roll,
            pitch,
            yaw,
            sigma: c.diagonal().map(f64::sqrt),
        };
        out.push(r, proj);
        Ok(())
    };
    record(&engine.snapshot(), &mut out)?;
    next_out += period;

    for sample in &log.imu {
        let snap = engine.push_imu(sample)?;
        if snap.nav.pos.iter().chain(snap.nav.vel.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("navigation state"));
        }
        let now = sample.t;
        while li < lidar.len() && log.lidar[lidar[li]].t_received <= now + 1e-9 {
            let k = lidar[li];
            li += 1;
            let frame = &log.lidar[k];
            let Some(at) = engine.state_at(frame.t) else {
                out.skipped_frames += 1;
                continue;
            };
            let prior = pose_of(&at.nav, proj);
            let points = scans.scan(k)?;
            match localizer.step(map, &points, &prior) {
                Ok(fix) => {
                    out.fixes.push(FixRecord { t: frame.t, fix, prior });
                    if fix.degraded {
                        out.skipped_frames += 1;
                        continue;
                    }
                    engine.push_measurement(lidar_measurement(frame.t, frame.t_received, &fix, proj, &cfg.filter))?;
                }
                Err(e) if recoverable(&e) => {
                    log::debug!("frame at t={:.2} skipped: {e}", frame.t);
                    out.skipped_frames += 1;
                }
                Err(e) => return Err(e),
            }
        }
        while gi < arrivals.len() && arrivals[gi].t_received <= now + 1e-9 {
            let a = arrivals[gi];
            gi += 1;
            let Some(at) = engine.state_at(a.epoch.t) else {
                out.skipped_epochs += 1;
                continue;
            };
            let cov = enu_covariance(&at, &cfg.filter)? + Matrix3::identity() * cfg.ins_prior_floor;
            let ins = InsPrior::from_enu(geodetic_to_ecef(&at.nav.pos), &cov);
            let Some(sol) = gnss.process(a, &ins, cfg, &mut out)? else {
                out.skipped_epochs += 1;
                continue;
            };
            if sol.fixed || !cfg.gnss_fixed_only {
                engine.push_measurement(gnss_measurement(&sol, a.t_received, &cfg.filter)?)?;
            }
            out.gnss.push(sol);
        }
        if now + 1e-9 >= next_out {
            record(&engine.snapshot(), &mut out)?;
            next_out += period;
        }
    }
    let (_, stats) = engine.finish();
    out.stats = stats;
    Ok(out)
}

fn run_lidar_only(log: &SensorLog, scans: &dyn ScanSource, map: &LidarMap, cfg: &PipelineConfig) -> Result<RunOutput> {
    let proj = &log.projection;
    let mut localizer = LidarLocalizer::new(cfg.localizer_for(Mode::LidarOnly));
    let mut out = RunOutput::default();
    let mut order: Vec<usize> = (0..log.lidar.len()).collect();
    order.sort_by(|&a, &b| log.lidar[a].t.total_cmp(&log.lidar[b].t));

    let mut pose = pose_of(&log.initial, proj);
    let (mut vx, mut vy) = {
        let v = log.initial.vel;
        (v.x, v.y)
    };
    let mut t_last = log.initial.t;
    for k in order {
        let frame = &log.lidar[k];
        let dt = frame.t - t_last;
        let prior = Pose6 {
            x: pose.x + vx * dt,
            y: pose.y + vy * dt,
            ..pose
        };
        let points = scans.scan(k)?;
        match localizer.step(map, &points, &prior) {
            Ok(fix) => {
                out.fixes.push(FixRecord { t: frame.t, fix, prior });
                let vz = if dt > 0.0 {
                    vx = (fix.x - pose.x) / dt;
                    vy = (fix.y - pose.y) / dt;
                    (fix.a - pose.a) / dt
                } else {
                    0.0
                };
                pose = Pose6 {
                    x: fix.x,
                    y: fix.y,
                    a: fix.a,
                    heading: fix.heading,
                    ..pose
                };
                t_last = frame.t;
                let r = NavRecord {
                    t: frame.t,
                    pos: proj.to_geodetic(fix.x, fix.y, fix.a),
                    vel: Vector3::new(vx, vy, vz),
                    roll: pose.roll,
                    pitch: pose.pitch,
                    yaw: fix.heading,
                    sigma: Vector3::new(
                        fix.covariance_xy[(0, 0)].sqrt(),
                        fix.covariance_xy[(1, 1)].sqrt(),
                        cfg.filter.lidar_altitude_var.sqrt(),
                    ),
                };
                out.push(r, proj);
            }
            Err(e) if recoverable(&e) => {
                log::debug!("frame at t={:.2} skipped: {e}", frame.t);
                out.skipped_frames += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn run_gnss_only(log: &SensorLog, cfg: &PipelineConfig) -> Result<RunOutput> {
    let proj = &log.projection;
    let mut out = RunOutput::default();
    let mut epochs: Vec<&GnssArrival> = log.gnss.iter().collect();
    epochs.sort_by(|a, b| a.epoch.t.total_cmp(&b.epoch.t));
    let mut guess = geodetic_to_ecef(&log.initial.pos);
    let mut last: Option<TrajectoryPoint> = None;
    let mut heading = pose_of(&log.initial, proj).heading;
    for a in epochs {
        a.epoch.validate()?;
        let sol = match rtk_solution(&a.epoch, &guess, None, &cfg.rtk) {
            Ok(s) => s,
            Err(e) if recoverable(&e) => {
                out.skipped_epochs += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        guess = sol.position_ecef;
        let (x, y) = proj.forward(sol.position.x, sol.position.y);
        let mut vel = Vector3::zeros();
        if let Some(p) = last {
            let dt = sol.t - p.t;
            if dt > 0.0 {
                vel = Vector3::new(x - p.x, y - p.y, sol.position.z - p.a) / dt;
            }
            if (x - p.x).hypot(y - p.y) > 0.5 {
                heading = (x - p.x).atan2(y - p.y);
            }
        }
        let r = NavRecord {
            t: sol.t,
            pos: sol.position,
            vel,
            roll: 0.0,
            pitch: 0.0,
            yaw: heading,
            sigma: sol.covariance_enu().diagonal().map(f64::sqrt),
        };
        out.push(r, proj);
        last = Some(r.point(proj));
        out.gnss.push(sol);
    }
    Ok(out)
}

/// Truth at IMU epochs decimated to `rate`, in the map frame.
pub fn truth_trajectory(d: &Dataset, rate: f64) -> Vec<TrajectoryPoint> {
    let every = ((d.scenario.imu.rate / rate).round() as usize).max(1);
    d.truth
        .iter()
        .step_by(every)
        .map(|s| TrajectoryPoint {
            t: s.t,
            x: s.pose.x,
            y: s.pose.y,
            a: s.pose.a,
            heading: s.pose.heading,
        })
        .collect()
}
