//! Trajectory accuracy against ground truth.
//!
//! Errors are split along the true heading: longitudinal is along the
//! direction of travel, lateral is positive to the right.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum timestamp mismatch when pairing estimate and truth, s.
pub const ALIGN_TOLERANCE: f64 = 0.01;

/// Horizontal error threshold used for the success fraction, m.
pub const SUCCESS_THRESHOLD: f64 = 0.3;

/// Pose in the map frame; heading is clockwise from north.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub a: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochError {
    pub t: f64,
    pub longitudinal: f64,
    pub lateral: f64,
    pub horizontal: f64,
}

impl EpochError {
    pub fn between(est: &TrajectoryPoint, truth: &TrajectoryPoint) -> Self {
        let (dx, dy) = (est.x - truth.x, est.y - truth.y);
        let (s, c) = truth.heading.sin_cos();
        let longitudinal = dx * s + dy * c;
        let lateral = dx * c - dy * s;
        Self {
            t: truth.t,
            longitudinal,
            lateral,
            horizontal: longitudinal.hypot(lateral),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub epochs: Vec<EpochError>,
    pub horiz_rms: f64,
    pub horiz_max: f64,
    pub long_rms: f64,
    pub lat_rms: f64,
    /// Fraction of epochs with horizontal error below 0.3 m.
    pub fraction_below: f64,
    /// Estimates without a truth sample within the alignment tolerance.
    pub skipped: usize,
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x * x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

impl EvaluationReport {
    pub fn from_errors(epochs: Vec<EpochError>, skipped: usize) -> Result<Self> {
        if epochs.is_empty() {
            return Err(Error::NoData);
        }
        let below = epochs.iter().filter(|e| e.horizontal < SUCCESS_THRESHOLD).count();
        Ok(Self {
            horiz_rms: rms(epochs.iter().map(|e| e.horizontal)),
            horiz_max: epochs.iter().map(|e| e.horizontal).fold(0.0, f64::max),
            long_rms: rms(epochs.iter().map(|e| e.longitudinal)),
            lat_rms: rms(epochs.iter().map(|e| e.lateral)),
            fraction_below: below as f64 / epochs.len() as f64,
            skipped,
            epochs,
        })
    }

    /// Report restricted to epochs with `t` in `[t0, t1]`.
    pub fn window(&self, t0: f64, t1: f64) -> Result<Self> {
        let e = self.epochs.iter().filter(|e| e.t >= t0 && e.t <= t1).copied().collect();
        Self::from_errors(e, 0)
    }

    /// Metric table in the usual column order.
    pub fn table(&self) -> String {
        format!(
            "{:>10} {:>10} {:>10} {:>10} {:>10} {:>8}\n{:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>9.2}% {:>8}\n",
            "HorizRMS",
            "HorizMax",
            "LongRMS",
            "LatRMS",
            "<0.3m",
            "epochs",
            self.horiz_rms,
            self.horiz_max,
            self.long_rms,
            self.lat_rms,
            100.0 * self.fraction_below,
            self.epochs.len()
        )
    }
}

/// Pair every estimate with the nearest truth sample and summarize.
///
/// `truth` must be sorted by time. Estimates farther than
/// [`ALIGN_TOLERANCE`] from any truth sample are skipped with a warning.
pub fn evaluate(estimate: &[TrajectoryPoint], truth: &[TrajectoryPoint]) -> Result<EvaluationReport> {
    if truth.is_empty() || estimate.is_empty() {
        return Err(Error::NoData);
    }
    if truth.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::InvalidArgument("truth is not sorted by time".into()));
    }
    let mut errors = Vec::with_capacity(estimate.len());
    let mut skipped = 0;
    for e in estimate {
        let k = truth.partition_point(|p| p.t < e.t);
        let nearest = [k.saturating_sub(1), k.min(truth.len() - 1)]
            .into_iter()
            .map(|i| &truth[i])
            .min_by(|a, b| (a.t - e.t).abs().total_cmp(&(b.t - e.t).abs()))
            .expect("non-empty");
        if (nearest.t - e.t).abs() > ALIGN_TOLERANCE {
            log::warn!("no truth within {ALIGN_TOLERANCE} s of t={:.3}, epoch skipped", e.t);
            skipped += 1;
            continue;
        }
        errors.push(EpochError::between(e, nearest));
    }
    EvaluationReport::from_errors(errors, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn path(n: usize) -> Vec<TrajectoryPoint> {
        (0..n)
            .map(|k| {
                let t = k as f64 * 0.1;
                TrajectoryPoint {
                    t,
                    x: 30.0 * (0.05 * t).sin(),
                    y: 2.0 * t,
                    a: 1.0,
                    heading: 0.3 * (0.07 * t).cos(),
                }
            })
            .collect()
    }

    #[test]
    fn self_evaluation_is_perfect() {
        let p = path(200);
        let r = evaluate(&p, &p).unwrap();
        assert_eq!(r.horiz_rms, 0.0);
        assert_eq!(r.horiz_max, 0.0);
        assert_eq!(r.fraction_below, 1.0);
        assert_eq!(r.epochs.len(), 200);
    }

    #[test]
    fn constant_lateral_offset() {
        let truth = path(300);
        let est: Vec<_> = truth
            .iter()
            .map(|p| {
                let (s, c) = p.heading.sin_cos();
                TrajectoryPoint {
                    x: p.x + 0.1 * c,
                    y: p.y - 0.1 * s,
                    ..*p
                }
            })
            .collect();
        let r = evaluate(&est, &truth).unwrap();
        assert!((r.lat_rms - 0.1).abs() < 1e-12);
        assert!(r.long_rms < 1e-12);
        assert!(r.epochs.iter().all(|e| (e.lateral - 0.1).abs() < 1e-12));
    }

    #[test]
    fn aggregates_match_recomputation() {
        let truth = path(100);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let est: Vec<_> = truth
            .iter()
            .map(|p| TrajectoryPoint {
                x: p.x + rng.random_range(-0.4..0.4),
                y: p.y + rng.random_range(-0.4..0.4),
                ..*p
            })
            .collect();
        let r = evaluate(&est, &truth).unwrap();
        // column-wise recomputation, as one would do by hand
        let mut sq_h = 0.0;
        let mut sq_lo = 0.0;
        let mut sq_la = 0.0;
        let mut max = 0.0f64;
        let mut below = 0;
        for (e, t) in est.iter().zip(&truth) {
            let dn = e.y - t.y;
            let de = e.x - t.x;
            let h2 = dn * dn + de * de;
            let fwd = (t.heading.sin(), t.heading.cos());
            let lo = de * fwd.0 + dn * fwd.1;
            sq_h += h2;
            sq_lo += lo * lo;
            sq_la += h2 - lo * lo;
            max = max.max(h2.sqrt());
            if h2.sqrt() < 0.3 {
                below += 1;
            }
        }
        assert!((r.horiz_rms - (sq_h / 100.0).sqrt()).abs() < 1e-12);
        assert!((r.long_rms - (sq_lo / 100.0).sqrt()).abs() < 1e-12);
        assert!((r.lat_rms - (sq_la / 100.0).sqrt()).abs() < 1e-12);
        assert!((r.horiz_max - max).abs() < 1e-12);
        assert_eq!(r.fraction_below, below as f64 / 100.0);
        for e in &r.epochs {
            let d = e.longitudinal.powi(2) + e.lateral.powi(2) - e.horizontal.powi(2);
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn misaligned_epochs_skipped() {
        let truth = path(50);
        let mut est = truth.clone();
        est[10].t += 0.03;
        est[20].t += 0.005;
        let r = evaluate(&est, &truth).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.epochs.len(), 49);
    }

    #[test]
    fn empty_input() {
        assert!(matches!(evaluate(&[], &path(3)), Err(Error::NoData)));
    }
}
