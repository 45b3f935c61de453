//! LiDAR map-matching localization: heading by image registration, then a
//! histogram filter over horizontal offsets with adaptive intensity/altitude
//! likelihoods.

mod heading;
mod histogram;
mod likelihood;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{rasterize_online, GroundBand, LidarMap, LidarPoint, Pose6};

pub use heading::{estimate_heading, overlap_fraction, HeadingEstimate, HeadingParams, Raster};
pub use histogram::{axis_variances, kl_divergence, EstimateParams, HistogramPosterior, OffsetEstimate};
pub use likelihood::{
    adaptive_gamma, combine, measurement_likelihood, ssd_sweep, ssd_to_likelihood, CueLikelihoods, CueWeighting,
    LikelihoodParams, SsdSweep,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizerConfig {
    pub half_width: usize,
    /// Std of the random-walk blur applied between frames, m.
    pub drift_sigma: f64,
    pub kappa_max: f64,
    pub peak_ratio: f64,
    pub area: usize,
    pub likelihood: LikelihoodParams,
    pub use_heading: bool,
    pub heading: HeadingParams,
    /// Half extent of the heading rasters, m.
    pub raster_radius: f64,
    pub band: GroundBand,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            half_width: 20,
            drift_sigma: 0.05,
            kappa_max: 100.0,
            peak_ratio: 0.95,
            area: 5,
            likelihood: LikelihoodParams::default(),
            use_heading: true,
            heading: HeadingParams::default(),
            raster_radius: 14.0,
            band: GroundBand::default(),
        }
    }
}

impl LocalizerConfig {
    pub fn estimate_params(&self) -> EstimateParams {
        EstimateParams {
            beta: self.likelihood.beta,
            peak_ratio: self.peak_ratio,
            area: self.area,
        }
    }
}

/// Result of one map-matching step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarFix {
    pub x: f64,
    pub y: f64,
    pub a: f64,
    pub heading: f64,
    pub covariance_xy: Matrix2<f64>,
    pub gamma: f64,
    pub kappa: f64,
    pub n_z: usize,
    pub degraded: bool,
    pub heading_degraded: bool,
}

/// One pass of the matching algorithm against a posterior that has already
/// been predicted to the current frame. The scan is rasterized at the
/// posterior center with the prior's attitude.
pub fn localize(
    map: &LidarMap,
    scan: &[LidarPoint],
    prior: &Pose6,
    posterior: &mut HistogramPosterior,
    cfg: &LocalizerConfig,
) -> Result<LidarFix> {
    if (posterior.resolution - map.resolution()).abs() > 1e-12 {
        return Err(Error::ResolutionMismatch {
            expected: map.resolution(),
            got: posterior.resolution,
        });
    }
    let (x0, y0) = posterior.center;
    let a0 = map.altitude_at(x0, y0)?;
    let mut pose = Pose6 {
        x: x0,
        y: y0,
        a: a0,
        ..*prior
    };

    let mut heading_degraded = !cfg.use_heading;
    if cfg.use_heading {
        let grid = rasterize_online(scan, &pose, map.resolution(), &cfg.band)?;
        let half = (cfg.raster_radius / map.resolution()).ceil() as usize;
        let template = Raster::from_online(&grid, (x0, y0), half);
        let image = Raster::from_map(map, (x0, y0), half);
        match estimate_heading(&template, &image, prior.heading, &cfg.heading) {
            Ok(h) => {
                pose.heading = h.heading;
                heading_degraded = h.degraded;
            }
            Err(Error::InsufficientOverlap(msg)) => {
                log::debug!("heading skipped: {msg}");
                heading_degraded = true;
            }
            Err(e) => return Err(e),
        }
    }

    let online = rasterize_online(scan, &pose, map.resolution(), &cfg.band)?;
    let lik = measurement_likelihood(&online, map, posterior.half_width, &cfg.likelihood)?;
    let kappa = posterior.update(&lik.combined, cfg.kappa_max)?;
    let est = posterior.estimate(&cfg.estimate_params());
    let (x, y) = (x0 + est.offset.x, y0 + est.offset.y);
    let a = map.altitude_at(x, y)?;
    Ok(LidarFix {
        x,
        y,
        a,
        heading: pose.heading,
        covariance_xy: est.covariance,
        gamma: lik.gamma,
        kappa,
        n_z: lik.n_z,
        degraded: est.degraded || posterior.degraded,
        heading_degraded,
    })
}

/// Histogram-filter localizer that carries its belief between frames.
#[derive(Debug, Clone)]
pub struct LidarLocalizer {
    pub config: LocalizerConfig,
    posterior: Option<HistogramPosterior>,
}

impl LidarLocalizer {
    pub fn new(config: LocalizerConfig) -> Self {
        Self {
            config,
            posterior: None,
        }
    }

    pub fn posterior(&self) -> Option<&HistogramPosterior> {
        self.posterior.as_ref()
    }

    pub fn reset(&mut self) {
        self.posterior = None;
    }

    /// Move the belief with the dead-reckoned prior, then match `scan`.
    pub fn step(&mut self, map: &LidarMap, scan: &[LidarPoint], prior: &Pose6) -> Result<LidarFix> {
        let cfg = self.config;
        let post = match self.posterior.as_mut() {
            Some(p) => {
                let d = (prior.x - p.center.0, prior.y - p.center.1);
                p.predict(d, cfg.drift_sigma)?;
                p
            }
            None => self.posterior.insert(HistogramPosterior::uniform(
                (prior.x, prior.y),
                cfg.half_width,
                map.resolution(),
            )?),
        };
        let fix = localize(map, scan, prior, post, &cfg);
        if fix.is_err() {
            // keep the prior belief but make it broad again
            post.degraded = true;
        }
        fix
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{stream, synthesize_scan, LidarSpec, Segment, Trajectory, TrajectorySpec, World, WorldSpec};

    fn noiseless_setup() -> (LidarMap, Pose6, Vec<LidarPoint>) {
        let traj = Trajectory::new(&TrajectorySpec {
            segments: vec![Segment::Straight { length: 80.0 }],
            transition: 0.0,
            ..TrajectorySpec::default()
        })
        .unwrap();
        let world = World::generate(&WorldSpec::default(), &traj, 21).unwrap();
        let map = world.build_map(false, 1, (0.0, 0.0), 512, 21).unwrap();
        let truth = traj.sample(4.0).unwrap().pose;
        let spec = LidarSpec {
            intensity_sigma: 0.0,
            altitude_sigma: 0.0,
            ..LidarSpec::default()
        };
        let scan = synthesize_scan(&world, &truth, 0.0, &spec, &mut stream(21, 5));
        (map, truth, scan)
    }

    fn run(map: &LidarMap, truth: &Pose6, scan: &[LidarPoint], dx: f64, dy: f64, dh: f64) -> LidarFix {
        let cfg = LocalizerConfig::default();
        let prior = Pose6 {
            x: truth.x + dx,
            y: truth.y + dy,
            heading: truth.heading + dh,
            ..*truth
        };
        let mut post = HistogramPosterior::uniform((prior.x, prior.y), cfg.half_width, map.resolution()).unwrap();
        localize(map, scan, &prior, &mut post, &cfg).unwrap()
    }

    #[test]
    fn known_offset_and_heading_recovered() {
        let (map, truth, scan) = noiseless_setup();
        let fix = run(&map, &truth, &scan, 0.5, -0.25, 1f64.to_radians());
        assert!((fix.x - truth.x).abs() <= map.resolution(), "x {}", fix.x - truth.x);
        assert!((fix.y - truth.y).abs() <= map.resolution(), "y {}", fix.y - truth.y);
        let dh = crate::sins::wrap_pi(fix.heading - truth.heading).to_degrees();
        assert!(dh.abs() < 0.1, "heading {dh} deg");
        assert!(!fix.degraded);
    }

    #[test]
    fn self_scan_without_offset() {
        let (map, truth, scan) = noiseless_setup();
        let fix = run(&map, &truth, &scan, 0.0, 0.0, 0.0);
        let e = (fix.x - truth.x).hypot(fix.y - truth.y);
        assert!(e < 0.02, "{e} m");
    }

    #[test]
    fn localizer_tracks_across_frames() {
        let (map, truth, scan) = noiseless_setup();
        let mut loc = LidarLocalizer::new(LocalizerConfig::default());
        let prior = Pose6 {
            x: truth.x + 0.3,
            ..truth
        };
        let first = loc.step(&map, &scan, &prior).unwrap();
        let second = loc.step(&map, &scan, &prior).unwrap();
        for f in [first, second] {
            assert!((f.x - truth.x).abs() <= map.resolution());
        }
        assert!(second.kappa >= 1.0);
        loc.reset();
        assert!(loc.posterior().is_none());
    }
}
