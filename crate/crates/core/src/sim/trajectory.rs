//! Planar paths built from straights and arcs joined by clothoids, driven
//! with an analytic speed profile. Curvature is continuous in arc length, so
//! the path is C2 and every derivative needed by the IMU synthesizer is
//! available in closed form.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{LocalProjection, Pose6};
use crate::sins::{attitude_from_euler, EarthModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Straight {
        length: f64,
    },
    /// Positive angle turns right (clockwise seen from above).
    Arc {
        radius: f64,
        angle_deg: f64,
    },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } => length,
            Segment::Arc { radius, angle_deg } => radius * angle_deg.to_radians().abs(),
        }
    }

    fn curvature(&self) -> f64 {
        match *self {
            Segment::Straight { .. } => 0.0,
            Segment::Arc { radius, angle_deg } => angle_deg.signum() / radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    /// Geodetic origin of the map frame: longitude, latitude (deg), altitude (m).
    pub origin: [f64; 3],
    /// Start point in the map frame, m.
    pub start: [f64; 2],
    pub start_heading_deg: f64,
    /// One lap of the path; repeated `laps` times.
    pub segments: Vec<Segment>,
    /// Length of each clothoid blending two curvatures, m.
    pub transition: f64,
    pub laps: f64,
    /// Mean speed, m/s.
    pub speed: f64,
    /// Relative amplitude and period (s) of the sinusoidal speed variation.
    pub speed_variation: f64,
    pub speed_period: f64,
    /// Road altitude variation: amplitude (m) and wavelength along the path (m).
    pub grade_amplitude: f64,
    pub grade_wavelength: f64,
    pub max_lateral_accel: f64,
    pub earth: EarthModel,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            origin: [116.3, 39.9, 50.0],
            start: [0.0, 0.0],
            start_heading_deg: 90.0,
            segments: vec![
                Segment::Straight { length: 100.0 },
                Segment::Arc {
                    radius: 40.0,
                    angle_deg: -180.0,
                },
                Segment::Straight { length: 100.0 },
                Segment::Arc {
                    radius: 40.0,
                    angle_deg: -180.0,
                },
            ],
            transition: 12.0,
            laps: 1.0,
            speed: 10.0,
            speed_variation: 0.1,
            speed_period: 30.0,
            grade_amplitude: 0.5,
            grade_wavelength: 0.0,
            max_lateral_accel: 6.0,
            earth: EarthModel::Wgs84,
        }
    }
}

/// Piece of the lap with linear curvature.
#[derive(Debug, Clone, Copy)]
struct Piece {
    s0: f64,
    len: f64,
    k0: f64,
    dk: f64,
    h0: f64,
}

impl Piece {
    fn heading(&self, u: f64) -> f64 {
        self.h0 + self.k0 * u + 0.5 * self.dk * u * u
    }
}

const GL_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_W: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];
const KNOT: f64 = 0.5;

/// Truth at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: f64,
    /// Arc length along the path, m.
    pub s: f64,
    /// (lambda, L, a).
    pub pos: Vector3<f64>,
    /// ENU velocity and its time derivative.
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub att: UnitQuaternion<f64>,
    /// Body rate relative to the navigation frame, body axes.
    pub omega_nb: Vector3<f64>,
    pub pose: Pose6,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub spec: TrajectorySpec,
    pub projection: LocalProjection,
    pieces: Vec<Piece>,
    lap_length: f64,
    lap_turn: f64,
    /// Map-frame position at each knot of one lap (incl. both ends).
    knots: Vec<(f64, f64, f64)>,
    lap_shift: (f64, f64),
}

impl Trajectory {
    pub fn new(spec: &TrajectorySpec) -> Result<Self> {
        let bad = |m: String| Err(Error::Infeasible(m));
        if spec.segments.is_empty() {
            return bad("no segments".into());
        }
        if !(spec.speed > 0.0) || !(spec.speed_variation >= 0.0 && spec.speed_variation < 1.0) {
            return bad(format!("speed {} variation {}", spec.speed, spec.speed_variation));
        }
        if spec.speed_variation > 0.0 && !(spec.speed_period > 0.0) {
            return bad("speed period must be positive".into());
        }
        if !(spec.laps > 0.0) || !(spec.transition >= 0.0) {
            return bad("laps and transition must be positive".into());
        }
        let vmax = spec.speed * (1.0 + spec.speed_variation);
        for s in &spec.segments {
            let l = s.length();
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("segment length {l}"));
            }
            if l < spec.transition {
                return bad(format!(
                    "segment of {l} m shorter than the {} m transition",
                    spec.transition
                ));
            }
            let a = vmax * vmax * s.curvature().abs();
            if a > spec.max_lateral_accel {
                return bad(format!(
                    "lateral acceleration {a:.2} m/s^2 exceeds {}",
                    spec.max_lateral_accel
                ));
            }
        }
        // Curvature breakpoints: constant inside each segment, linear ramps of
        // `transition` centered on every junction (wrapping around the lap).
        let n = spec.segments.len();
        let tr = spec.transition;
        let mut pieces = Vec::new();
        let mut s = 0.0;
        let mut h = spec.start_heading_deg.to_radians();
        let push = |len: f64, k0: f64, k1: f64, pieces: &mut Vec<Piece>, s: &mut f64, h: &mut f64| {
            if len <= 0.0 {
                return;
            }
            let p = Piece {
                s0: *s,
                len,
                k0,
                dk: (k1 - k0) / len,
                h0: *h,
            };
            *h = p.heading(len);
            *s += len;
            pieces.push(p);
        };
        for i in 0..n {
            let seg = spec.segments[i];
            let k = seg.curvature();
            let kp = spec.segments[(i + n - 1) % n].curvature();
            let kn = spec.segments[(i + 1) % n].curvature();
            let half = 0.5 * tr;
            push(half, 0.5 * (kp + k), k, &mut pieces, &mut s, &mut h);
            push(seg.length() - tr, k, k, &mut pieces, &mut s, &mut h);
            push(half, k, 0.5 * (k + kn), &mut pieces, &mut s, &mut h);
        }
        let lap_length = s;
        let lap_turn = h - spec.start_heading_deg.to_radians();
        let earth = spec.earth;
        let projection = LocalProjection::new(
            earth,
            spec.origin[0].to_radians(),
            spec.origin[1].to_radians(),
            spec.origin[2],
        );
        let mut t = Trajectory {
            spec: spec.clone(),
            projection,
            pieces,
            lap_length,
            lap_turn,
            knots: Vec::new(),
            lap_shift: (0.0, 0.0),
        };
        let nk = (lap_length / KNOT).ceil() as usize;
        let mut knots = Vec::with_capacity(nk + 1);
        let (mut x, mut y) = (spec.start[0], spec.start[1]);
        knots.push((0.0, x, y));
        for k in 1..=nk {
            let (sa, sb) = (knots[k - 1].0, (k as f64 * KNOT).min(lap_length));
            let (dx, dy) = t.integrate(sa, sb);
            x += dx;
            y += dy;
            knots.push((sb, x, y));
        }
        t.lap_shift = (x - spec.start[0], y - spec.start[1]);
        t.knots = knots;
        if spec.laps > 1.0
            && (t.lap_shift.0.hypot(t.lap_shift.1) > 1.0
                || lap_turn.abs() > 1e-6 && (lap_turn.abs() - std::f64::consts::TAU).abs() > 1e-6)
        {
            log::warn!(
                "lap does not close: shift ({:.3}, {:.3}) m, turn {:.4} rad",
                t.lap_shift.0,
                t.lap_shift.1,
                lap_turn
            );
        }
        Ok(t)
    }

    pub fn lap_length(&self) -> f64 {
        self.lap_length
    }

    pub fn total_length(&self) -> f64 {
        self.lap_length * self.spec.laps
    }

    /// Time needed to cover the whole path.
    pub fn duration(&self) -> f64 {
        let target = self.total_length();
        let (mut lo, mut hi) = (
            0.0,
            target / (self.spec.speed * (1.0 - self.spec.speed_variation)) + 1.0,
        );
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.distance(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Speed, its derivative, and arc length at time `t`.
    fn speed_at(&self, t: f64) -> (f64, f64, f64) {
        let (v0, e) = (self.spec.speed, self.spec.speed_variation);
        if e == 0.0 {
            return (v0, 0.0, v0 * t);
        }
        let w = std::f64::consts::TAU / self.spec.speed_period;
        let (sn, cs) = (w * t).sin_cos();
        (v0 * (1.0 + e * sn), v0 * e * w * cs, v0 * (t + e * (1.0 - cs) / w))
    }

    fn distance(&self, t: f64) -> f64 {
        self.speed_at(t).2
    }

    /// Lap number, piece and local abscissa of arc length `s`.
    fn locate(&self, s: f64) -> (f64, &Piece, f64) {
        let lap = (s / self.lap_length).floor();
        let r = (s - lap * self.lap_length).clamp(0.0, self.lap_length);
        let idx = match self.pieces.binary_search_by(|p| p.s0.total_cmp(&r)) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        let p = &self.pieces[idx];
        (lap, p, (r - p.s0).min(p.len))
    }

    /// Heading, curvature and its derivative at arc length `s`.
    pub fn heading_at(&self, s: f64) -> (f64, f64, f64) {
        let (lap, p, u) = self.locate(s);
        (p.heading(u) + lap * self.lap_turn, p.k0 + p.dk * u, p.dk)
    }

    /// Displacement over `[sa, sb]` within one lap, by Gauss-Legendre on
    /// every piece the interval touches.
    fn integrate(&self, sa: f64, sb: f64) -> (f64, f64) {
        let (mut dx, mut dy) = (0.0, 0.0);
        for p in &self.pieces {
            let a = sa.max(p.s0);
            let b = sb.min(p.s0 + p.len);
            if b <= a {
                continue;
            }
            let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
            for (x, w) in GL_X.iter().zip(GL_W) {
                let h = p.heading(m + r * x - p.s0);
                dx += w * r * h.sin();
                dy += w * r * h.cos();
            }
        }
        (dx, dy)
    }

    /// Map-frame horizontal position at arc length `s`.
    pub fn xy_at(&self, s: f64) -> (f64, f64) {
        let lap = (s / self.lap_length).floor();
        let r = (s - lap * self.lap_length).clamp(0.0, self.lap_length);
        let k = ((r / KNOT).floor() as usize).min(self.knots.len() - 2);
        let (s0, x0, y0) = self.knots[k];
        let (dx, dy) = self.integrate(s0, r);
        (x0 + dx + lap * self.lap_shift.0, y0 + dy + lap * self.lap_shift.1)
    }

    fn grade(&self, s: f64) -> (f64, f64, f64) {
        let amp = self.spec.grade_amplitude;
        if amp == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let wl = if self.spec.grade_wavelength > 0.0 {
            self.spec.grade_wavelength
        } else {
            self.lap_length
        };
        let w = std::f64::consts::TAU / wl;
        let (sn, cs) = (w * s).sin_cos();
        (amp * sn, amp * w * cs, -amp * w * w * sn)
    }

    /// Road-surface altitude above the origin altitude at arc length `s`.
    pub fn altitude_offset(&self, s: f64) -> f64 {
        self.grade(s).0
    }

    pub fn sample(&self, t: f64) -> Result<TruthSample> {
        let (v, vd, s) = self.speed_at(t);
        let (h, k, _) = self.heading_at(s);
        let (x, y) = self.xy_at(s);
        let (g0, g1, g2) = self.grade(s);
        let a = self.spec.origin[2] + g0;
        let (sh, ch) = h.sin_cos();
        let hd = k * v;
        let (xd, yd) = (v * sh, v * ch);
        let (xdd, ydd) = (vd * sh + v * hd * ch, vd * ch - v * hd * sh);
        let ad = g1 * v;
        let add = g2 * v * v + g1 * vd;

        let proj = &self.projection;
        let pos = proj.to_geodetic(x, y, a);
        let lat = pos.y;
        let earth = self.spec.earth;
        let (rn, rm) = earth.radii(lat);
        let (drn, drm) = earth.radii_derivatives(lat);
        let (sl, cl) = lat.sin_cos();
        let latd = yd / proj.k_north;
        let ve = (rn + a) * cl * xd / proj.k_east;
        let vn = (rm + a) * yd / proj.k_north;
        let ved =
            ((drn * latd + ad) * cl - (rn + a) * sl * latd) * xd / proj.k_east + (rn + a) * cl * xdd / proj.k_east;
        let vnd = (drm * latd + ad) * yd / proj.k_north + (rm + a) * ydd / proj.k_north;

        let pitch = g1.atan();
        let pd = g2 * v / (1.0 + g1 * g1);
        let att = attitude_from_euler(0.0, pitch, h);
        let (sp, cp) = pitch.sin_cos();
        // w_nb^b = pd x + Rx(p)' (-hd z)
        let omega_nb = Vector3::new(pd, -hd * sp, -hd * cp);
        Ok(TruthSample {
            t,
            s,
            pos,
            vel: Vector3::new(ve, vn, ad),
            acc: Vector3::new(ved, vnd, add),
            att,
            omega_nb,
            pose: Pose6 {
                x,
                y,
                a,
                roll: 0.0,
                pitch,
                heading: crate::sins::wrap_pi(h),
            },
        })
    }

    /// Dense polyline of one lap, used for world generation.
    pub fn centerline(&self, step: f64) -> Vec<(f64, f64, f64, f64)> {
        let n = (self.lap_length / step).ceil() as usize;
        (0..=n)
            .map(|k| {
                let s = (k as f64 * step).min(self.lap_length);
                let (x, y) = self.xy_at(s);
                (s, x, y, self.heading_at(s).0)
            })
            .collect()
    }
}
