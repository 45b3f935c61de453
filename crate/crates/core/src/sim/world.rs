//! Synthetic ground world: intensity texture and altitude relief laid out
//! relative to the road centerline, with optional post-change layers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::stream;
use super::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::map::{cell_center, cell_index, LidarMap, MapAccumulator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub mean: f64,
    pub std: f64,
    /// Lag at which the autocorrelation falls to exp(-1/2), m.
    pub correlation_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkingSpec {
    /// Lateral offset from the centerline, positive to the right, m.
    pub offset: f64,
    pub width: f64,
    /// Dash and gap lengths; a zero dash draws a solid line.
    #[serde(default)]
    pub dash: f64,
    #[serde(default)]
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub s_start: f64,
    pub s_end: f64,
    pub offset: f64,
    pub thickness: f64,
    pub height: f64,
}

/// Region of the lap that changes at `t_change`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChangeSpec {
    pub s_start: f64,
    pub s_end: f64,
    pub t_change: f64,
    /// One minus the correlation between old and new road texture.
    pub decorrelation: f64,
    /// Lateral shift of repainted markings, m.
    pub marking_shift: f64,
    pub wall: Option<WallSpec>,
}

impl Default for ChangeSpec {
    fn default() -> Self {
        Self {
            s_start: 0.0,
            s_end: 0.0,
            t_change: 0.0,
            decorrelation: 0.0,
            marking_shift: 0.0,
            wall: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub resolution: f64,
    /// Cells farther than this from the centerline are left empty, m.
    pub margin: f64,
    pub road_half_width: f64,
    pub sidewalk_width: f64,
    pub curb_height: f64,
    pub asphalt: TextureSpec,
    pub sidewalk: TextureSpec,
    pub grass: TextureSpec,
    pub markings: Vec<MarkingSpec>,
    pub marking_intensity: f64,
    pub bump_amplitude: f64,
    pub bump_correlation: f64,
    /// Spacing of planter boxes along each side; zero disables them.
    pub planter_spacing: f64,
    pub planter_size: f64,
    pub planter_height: f64,
    pub planter_offset: f64,
    pub walls: Vec<WallSpec>,
    pub changes: Vec<ChangeSpec>,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            resolution: 0.125,
            margin: 20.0,
            road_half_width: 5.0,
            sidewalk_width: 3.0,
            curb_height: 0.15,
            asphalt: TextureSpec {
                mean: 40.0,
                std: 12.0,
                correlation_length: 0.4,
            },
            sidewalk: TextureSpec {
                mean: 90.0,
                std: 10.0,
                correlation_length: 0.6,
            },
            grass: TextureSpec {
                mean: 60.0,
                std: 6.0,
                correlation_length: 1.0,
            },
            markings: vec![
                MarkingSpec {
                    offset: 0.0,
                    width: 0.15,
                    dash: 3.0,
                    gap: 6.0,
                },
                MarkingSpec {
                    offset: -4.6,
                    width: 0.15,
                    dash: 0.0,
                    gap: 0.0,
                },
                MarkingSpec {
                    offset: 4.6,
                    width: 0.15,
                    dash: 0.0,
                    gap: 0.0,
                },
            ],
            marking_intensity: 180.0,
            bump_amplitude: 0.05,
            bump_correlation: 2.0,
            planter_spacing: 15.0,
            planter_size: 1.5,
            planter_height: 0.4,
            planter_offset: 10.0,
            walls: Vec::new(),
            changes: Vec::new(),
        }
    }
}

/// Rasterized world aligned with the global map grid.
#[derive(Debug, Clone)]
pub struct World {
    pub resolution: f64,
    pub i0: i64,
    pub j0: i64,
    pub width: usize,
    pub height: usize,
    intensity: Vec<f32>,
    altitude: Vec<f32>,
    post_intensity: Vec<f32>,
    post_altitude: Vec<f32>,
    /// 1 + index of the change region owning the cell, 0 otherwise.
    region: Vec<u8>,
    change_times: Vec<f64>,
}

const VOID: f32 = f32::NAN;

/// Unit-variance Gaussian random field with Gaussian autocorrelation of
/// length `corr` (cells); white noise blurred separably on a padded domain.
pub fn gaussian_field<R: Rng>(w: usize, h: usize, corr: f64, rng: &mut R) -> Vec<f32> {
    let sigma = (corr / std::f64::consts::SQRT_2).max(1e-6);
    let r = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k.iter_mut().for_each(|v| *v /= norm);
    let (pw, ph) = (w + 2 * r, h + 2 * r);
    let noise: Vec<f32> = (0..pw * ph)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z as f32
        })
        .collect();
    let mut rows = vec![0f32; w * ph];
    for y in 0..ph {
        let src = &noise[y * pw..(y + 1) * pw];
        for x in 0..w {
            let mut acc = 0.0f64;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * src[x + t] as f64;
            }
            rows[y * w + x] = acc as f32;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f64;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * rows[(y + t) * w + x] as f64;
            }
            out[y * w + x] = acc as f32;
        }
    }
    out
}

/// Nearest-centerline lookup over a bucket grid.
struct Centerline {
    pts: Vec<(f64, f64, f64, f64)>,
    bucket: f64,
    bx0: f64,
    by0: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
    lap: f64,
}

impl Centerline {
    fn new(traj: &Trajectory) -> Self {
        let pts = traj.centerline(0.25);
        let bucket = 4.0;
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in &pts {
            x0 = x0.min(p.1);
            y0 = y0.min(p.2);
            x1 = x1.max(p.1);
            y1 = y1.max(p.2);
        }
        let nx = ((x1 - x0) / bucket).floor() as usize + 1;
        let ny = ((y1 - y0) / bucket).floor() as usize + 1;
        let mut cells = vec![Vec::new(); nx * ny];
        for (k, p) in pts.iter().enumerate() {
            let bx = ((p.1 - x0) / bucket).floor() as usize;
            let by = ((p.2 - y0) / bucket).floor() as usize;
            cells[by * nx + bx].push(k as u32);
        }
        Self {
            pts,
            bucket,
            bx0: x0,
            by0: y0,
            nx,
            ny,
            cells,
            lap: traj.lap_length(),
        }
    }

    /// `(s, lateral, distance)` of the nearest centerline point, or `None`
    /// beyond `max_dist`.
    fn project(&self, x: f64, y: f64, max_dist: f64) -> Option<(f64, f64, f64)> {
        let bx = ((x - self.bx0) / self.bucket).floor() as i64;
        let by = ((y - self.by0) / self.bucket).floor() as i64;
        let reach = (max_dist / self.bucket).ceil() as i64 + 1;
        let mut best = (f64::INFINITY, usize::MAX);
        for ring in 0..=reach {
            if best.0.sqrt() < (ring - 1) as f64 * self.bucket {
                break;
            }
            for j in by - ring..=by + ring {
                for i in bx - ring..=bx + ring {
                    if (j - by).abs() != ring && (i - bx).abs() != ring {
                        continue;
                    }
                    if i < 0 || j < 0 || i >= self.nx as i64 || j >= self.ny as i64 {
                        continue;
                    }
                    for &k in &self.cells[j as usize * self.nx + i as usize] {
                        let p = self.pts[k as usize];
                        let d = (p.1 - x).powi(2) + (p.2 - y).powi(2);
                        if d < best.0 {
                            best = (d, k as usize);
                        }
                    }
                }
            }
        }
        if best.1 == usize::MAX || best.0.sqrt() > max_dist {
            return None;
        }
        let (s, cx, cy, h) = self.pts[best.1];
        let (sh, ch) = h.sin_cos();
        let (dx, dy) = (x - cx, y - cy);
        let along = dx * sh + dy * ch;
        let lat = dx * ch - dy * sh;
        Some(((s + along).rem_euclid(self.lap), lat, best.0.sqrt()))
    }
}

fn on_marking(m: &MarkingSpec, s: f64, l: f64, shift: f64) -> bool {
    if (l - m.offset - shift).abs() >= 0.5 * m.width {
        return false;
    }
    m.dash <= 0.0 || s.rem_euclid(m.dash + m.gap) < m.dash
}

fn in_wall(w: &WallSpec, s: f64, l: f64) -> bool {
    s >= w.s_start && s <= w.s_end && (l - w.offset).abs() < 0.5 * w.thickness
}

impl World {
    pub fn generate(spec: &WorldSpec, traj: &Trajectory, seed: u64) -> Result<World> {
        let res = spec.resolution;
        if !(res > 0.0) || !(spec.margin > 0.0) {
            return Err(Error::Config(format!("world resolution {res} margin {}", spec.margin)));
        }
        if spec.changes.len() > 250 {
            return Err(Error::Config("too many change regions".into()));
        }
        let line = Centerline::new(traj);
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in &line.pts {
            x0 = x0.min(p.1);
            y0 = y0.min(p.2);
            x1 = x1.max(p.1);
            y1 = y1.max(p.2);
        }
        let (i0, j0) = cell_index(res, x0 - spec.margin, y0 - spec.margin);
        let (i1, j1) = cell_index(res, x1 + spec.margin, y1 + spec.margin);
        let (width, height) = ((i1 - i0 + 1) as usize, (j1 - j0 + 1) as usize);
        let n = width * height;

        let field = |id: u64, corr_m: f64| gaussian_field(width, height, corr_m / res, &mut stream(seed, id));
        let asphalt = field(1, spec.asphalt.correlation_length);
        let sidewalk = field(2, spec.sidewalk.correlation_length);
        let grass = field(3, spec.grass.correlation_length);
        let bumps = field(4, spec.bump_correlation);
        let fresh = if spec.changes.iter().any(|c| c.decorrelation > 0.0) {
            field(5, spec.asphalt.correlation_length)
        } else {
            vec![0.0; n]
        };
        let mut planters = Vec::new();
        if spec.planter_spacing > 0.0 {
            let mut rng = stream(seed, 6);
            let count = (traj.lap_length() / spec.planter_spacing).floor() as usize;
            for k in 0..count {
                for side in [-1.0, 1.0] {
                    let s = (k as f64 + rng.random_range(0.2..0.8)) * spec.planter_spacing;
                    let l = side * (spec.planter_offset + rng.random_range(0.0..2.0));
                    planters.push((s, l));
                }
            }
        }

        let mut w = World {
            resolution: res,
            i0,
            j0,
            width,
            height,
            intensity: vec![VOID; n],
            altitude: vec![VOID; n],
            post_intensity: vec![VOID; n],
            post_altitude: vec![VOID; n],
            region: vec![0; n],
            change_times: spec.changes.iter().map(|c| c.t_change).collect(),
        };
        let clamp = |v: f64| v.clamp(0.0, 255.0) as f32;
        let (rw, sw) = (spec.road_half_width, spec.road_half_width + spec.sidewalk_width);
        let half_p = 0.5 * spec.planter_size;
        for jj in 0..height {
            for ii in 0..width {
                let k = jj * width + ii;
                let (x, y) = cell_center(res, i0 + ii as i64, j0 + jj as i64);
                let Some((s, l, _)) = line.project(x, y, spec.margin) else {
                    continue;
                };
                let base = traj.spec.origin[2] + traj.altitude_offset(s);
                let al = l.abs();
                let surface = |tex: &TextureSpec, z: f32| tex.mean + tex.std * z as f64;
                let (mut inten, mut alt) = if al < rw {
                    (surface(&spec.asphalt, asphalt[k]), 0.0)
                } else if al < sw {
                    (surface(&spec.sidewalk, sidewalk[k]), spec.curb_height)
                } else {
                    (
                        surface(&spec.grass, grass[k]),
                        spec.curb_height + spec.bump_amplitude * bumps[k] as f64,
                    )
                };
                if al < rw && spec.markings.iter().any(|m| on_marking(m, s, l, 0.0)) {
                    inten = spec.marking_intensity;
                }
                for &(ps, pl) in &planters {
                    let ds = (s - ps + 0.5 * line.lap).rem_euclid(line.lap) - 0.5 * line.lap;
                    if ds.abs() < half_p && (l - pl).abs() < half_p {
                        alt = spec.curb_height + spec.planter_height;
                    }
                }
                for wl in &spec.walls {
                    if in_wall(wl, s, l) {
                        alt = spec.curb_height + wl.height;
                    }
                }
                w.intensity[k] = clamp(inten);
                w.altitude[k] = (base + alt) as f32;
                w.post_intensity[k] = w.intensity[k];
                w.post_altitude[k] = w.altitude[k];

                for (r, c) in spec.changes.iter().enumerate() {
                    if s < c.s_start || s > c.s_end {
                        continue;
                    }
                    w.region[k] = r as u8 + 1;
                    if al < rw {
                        let rho = 1.0 - c.decorrelation;
                        let z = rho * asphalt[k] as f64 + (1.0 - rho * rho).max(0.0).sqrt() * fresh[k] as f64;
                        let mut pi = spec.asphalt.mean + spec.asphalt.std * z;
                        if spec.markings.iter().any(|m| on_marking(m, s, l, c.marking_shift)) {
                            pi = spec.marking_intensity;
                        }
                        w.post_intensity[k] = clamp(pi);
                    }
                    if let Some(wl) = &c.wall {
                        if in_wall(wl, s, l) {
                            w.post_altitude[k] = (base + spec.curb_height + wl.height) as f32;
                        }
                    }
                    break;
                }
            }
        }
        Ok(w)
    }

    fn index(&self, i: i64, j: i64) -> Option<usize> {
        let (a, b) = (i - self.i0, j - self.j0);
        if a < 0 || b < 0 || a >= self.width as i64 || b >= self.height as i64 {
            return None;
        }
        let k = b as usize * self.width + a as usize;
        if self.intensity[k].is_nan() {
            None
        } else {
            Some(k)
        }
    }

    /// `(intensity, altitude)` of cell `(i, j)` before any change.
    pub fn pre(&self, i: i64, j: i64) -> Option<(f64, f64)> {
        self.index(i, j)
            .map(|k| (self.intensity[k] as f64, self.altitude[k] as f64))
    }

    /// `(intensity, altitude)` after every change has happened.
    pub fn post(&self, i: i64, j: i64) -> Option<(f64, f64)> {
        self.index(i, j)
            .map(|k| (self.post_intensity[k] as f64, self.post_altitude[k] as f64))
    }

    /// Cell content seen at time `t`.
    pub fn at(&self, i: i64, j: i64, t: f64) -> Option<(f64, f64)> {
        let k = self.index(i, j)?;
        let r = self.region[k];
        if r > 0 && t >= self.change_times[r as usize - 1] {
            Some((self.post_intensity[k] as f64, self.post_altitude[k] as f64))
        } else {
            Some((self.intensity[k] as f64, self.altitude[k] as f64))
        }
    }

    /// Change region (0-based) that owns the cell.
    pub fn region(&self, i: i64, j: i64) -> Option<usize> {
        self.index(i, j)
            .and_then(|k| (self.region[k] > 0).then(|| self.region[k] as usize - 1))
    }

    pub fn valid_cells(&self) -> usize {
        self.intensity.iter().filter(|v| !v.is_nan()).count()
    }

    /// Survey map: every cell observed `passes` times with the given noise.
    pub fn build_map(
        &self,
        post: bool,
        passes: usize,
        sigma: (f64, f64),
        dimension: u32,
        seed: u64,
    ) -> Result<LidarMap> {
        let mut acc = MapAccumulator::new(self.resolution, dimension)?;
        let mut rng = stream(seed, 7);
        for jj in 0..self.height {
            for ii in 0..self.width {
                let (i, j) = (self.i0 + ii as i64, self.j0 + jj as i64);
                let v = if post { self.post(i, j) } else { self.pre(i, j) };
                let Some((inten, alt)) = v else { continue };
                let (x, y) = cell_center(self.resolution, i, j);
                for _ in 0..passes.max(1) {
                    let (e1, e2): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                    acc.add_sample(x, y, (inten + sigma.0 * e1).clamp(0.0, 255.0), alt + sigma.1 * e2);
                }
            }
        }
        acc.finalize()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trajectory::{Segment, TrajectorySpec};

    fn short_track() -> Trajectory {
        Trajectory::new(&TrajectorySpec {
            segments: vec![Segment::Straight { length: 60.0 }],
            transition: 0.0,
            grade_amplitude: 0.0,
            ..TrajectorySpec::default()
        })
        .unwrap()
    }

    #[test]
    fn field_autocorrelation_length() {
        let mut rng = stream(3, 99);
        let corr = 8.0;
        let (w, h) = (512, 512);
        let f = gaussian_field(w, h, corr, &mut rng);
        let mean = f.iter().map(|v| *v as f64).sum::<f64>() / f.len() as f64;
        let var = f.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / f.len() as f64;
        let rho = |lag: usize| {
            let mut acc = 0.0;
            let mut n = 0;
            for y in 0..h {
                for x in 0..w - lag {
                    acc += (f[y * w + x] as f64 - mean) * (f[y * w + x + lag] as f64 - mean);
                    n += 1;
                }
            }
            acc / n as f64 / var
        };
        let target = (-0.5f64).exp();
        let mut prev = 1.0;
        let mut est = None;
        for lag in 1..40 {
            let r = rho(lag);
            if r < target {
                est = Some(lag as f64 - 1.0 + (prev - target) / (prev - r));
                break;
            }
            prev = r;
        }
        let est = est.unwrap();
        assert!((est - corr).abs() <= 0.2 * corr, "{est} vs {corr}");
        assert!((var - 1.0).abs() < 0.2, "variance {var}");
    }

    #[test]
    fn zero_relief_is_flat() {
        let spec = WorldSpec {
            curb_height: 0.0,
            bump_amplitude: 0.0,
            planter_spacing: 0.0,
            ..WorldSpec::default()
        };
        let traj = short_track();
        let w = World::generate(&spec, &traj, 1).unwrap();
        let map = w.build_map(false, 1, (0.0, 0.0), 512, 1).unwrap();
        let mut first = None;
        for t in map.tiles() {
            for c in t.cells.iter().filter(|c| !c.is_empty()) {
                let f = *first.get_or_insert(c.altitude_mean);
                assert_eq!(c.altitude_mean, f);
            }
        }
        assert!(first.is_some());
    }

    #[test]
    fn no_change_maps_identical() {
        let traj = short_track();
        let spec = WorldSpec {
            changes: vec![ChangeSpec {
                s_start: 10.0,
                s_end: 40.0,
                ..ChangeSpec::default()
            }],
            ..WorldSpec::default()
        };
        let w = World::generate(&spec, &traj, 5).unwrap();
        let a = w.build_map(false, 2, (4.0, 0.03), 512, 9).unwrap();
        let b = w.build_map(true, 2, (4.0, 0.03), 512, 9).unwrap();
        assert_eq!(a.occupied_cells(), b.occupied_cells());
        for t in a.tiles() {
            assert!(Some(t) == b.tile(t.index));
        }
    }

    #[test]
    fn change_region_switches_after_epoch() {
        let traj = short_track();
        let spec = WorldSpec {
            changes: vec![ChangeSpec {
                s_start: 20.0,
                s_end: 40.0,
                t_change: 5.0,
                decorrelation: 1.0,
                marking_shift: 0.5,
                wall: None,
            }],
            ..WorldSpec::default()
        };
        let w = World::generate(&spec, &traj, 5).unwrap();
        let (i, j) = cell_index(w.resolution, 30.0, 2.0);
        assert_eq!(w.region(i, j), Some(0));
        assert_eq!(w.at(i, j, 4.9), w.pre(i, j));
        assert_eq!(w.at(i, j, 5.0), w.post(i, j));
        assert_ne!(w.pre(i, j), w.post(i, j));
        let (i, j) = cell_index(w.resolution, 5.0, 2.0);
        assert_eq!(w.region(i, j), None);
        assert_eq!(w.at(i, j, 100.0), w.pre(i, j));
    }
}
