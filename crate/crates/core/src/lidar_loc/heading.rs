use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{cell_index, LidarMap, OnlineGrid};

/// Square intensity raster on the map grid. Pixel `(c, r)` is global cell
/// `(i0 + c, j0 + r)`; `pivot` is the rotation center in pixel units, with
/// pixel centers at half-integers.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub i0: i64,
    pub j0: i64,
    pub size: usize,
    pub resolution: f64,
    pub pivot: (f64, f64),
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Raster {
    fn blank(center: (f64, f64), half_cells: usize, resolution: f64) -> Self {
        let (ci, cj) = cell_index(resolution, center.0, center.1);
        let h = half_cells as i64;
        let (i0, j0) = (ci - h, cj - h);
        let size = 2 * half_cells + 1;
        Raster {
            i0,
            j0,
            size,
            resolution,
            pivot: (center.0 / resolution - i0 as f64, center.1 / resolution - j0 as f64),
            values: vec![0.0; size * size],
            mask: vec![false; size * size],
        }
    }

    pub fn from_online(grid: &OnlineGrid, center: (f64, f64), half_cells: usize) -> Self {
        let mut r = Self::blank(center, half_cells, grid.resolution);
        for c in &grid.cells {
            let (x, y) = (c.i - r.i0, c.j - r.j0);
            if (0..r.size as i64).contains(&x) && (0..r.size as i64).contains(&y) {
                let k = y as usize * r.size + x as usize;
                r.values[k] = c.stats.intensity_mean as f64;
                r.mask[k] = true;
            }
        }
        r
    }

    pub fn from_map(map: &LidarMap, center: (f64, f64), half_cells: usize) -> Self {
        let mut r = Self::blank(center, half_cells, map.resolution());
        for y in 0..r.size {
            for x in 0..r.size {
                if let Some(c) = map.cell(r.i0 + x as i64, r.j0 + y as i64).filter(|c| !c.is_empty()) {
                    r.values[y * r.size + x] = c.intensity_mean as f64;
                    r.mask[y * r.size + x] = true;
                }
            }
        }
        r
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadingParams {
    pub levels: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub min_overlap: f64,
    /// Rotations beyond this are treated as divergence (rad).
    pub max_rotation: f64,
}

impl Default for HeadingParams {
    fn default() -> Self {
        Self {
            levels: 3,
            max_iterations: 30,
            tolerance: 1e-4,
            min_overlap: 0.25,
            max_rotation: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadingEstimate {
    pub heading: f64,
    /// Counter-clockwise rotation of the online image onto the map image.
    pub rotation: f64,
    /// Translation nuisance, metres.
    pub translation: (f64, f64),
    pub iterations: usize,
    pub degraded: bool,
}

struct Level {
    size: usize,
    pivot: (f64, f64),
    t_val: Vec<f64>,
    t_mask: Vec<bool>,
    i_val: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
    /// Image and gradient both valid.
    s_mask: Vec<bool>,
}

fn downsample(size: usize, val: &[f64], mask: &[bool]) -> (usize, Vec<f64>, Vec<bool>) {
    let n = size / 2;
    let mut v = vec![0.0; n * n];
    let mut m = vec![false; n * n];
    for y in 0..n {
        for x in 0..n {
            let (mut s, mut c) = (0.0, 0usize);
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let k = (2 * y + dy) * size + 2 * x + dx;
                if mask[k] {
                    s += val[k];
                    c += 1;
                }
            }
            if c > 0 {
                v[y * n + x] = s / c as f64;
                m[y * n + x] = true;
            }
        }
    }
    (n, v, m)
}

fn gradients(size: usize, val: &[f64], mask: &[bool]) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let mut gx = vec![0.0; size * size];
    let mut gy = vec![0.0; size * size];
    let mut gm = vec![false; size * size];
    for y in 1..size.saturating_sub(1) {
        for x in 1..size - 1 {
            let k = y * size + x;
            if mask[k - 1] && mask[k + 1] && mask[k - size] && mask[k + size] {
                gx[k] = 0.5 * (val[k + 1] - val[k - 1]);
                gy[k] = 0.5 * (val[k + size] - val[k - size]);
                gm[k] = true;
            }
        }
    }
    (gx, gy, gm)
}

/// Bilinear sample at continuous pixel coordinate `(x, y)`; pixel centers at
/// half-integers. `None` if any contributing pixel is invalid.
fn bilinear(size: usize, vals: &[&[f64]], mask: &[bool], x: f64, y: f64, out: &mut [f64]) -> bool {
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    if x0 < 0.0 || y0 < 0.0 || x0 + 1.0 >= size as f64 || y0 + 1.0 >= size as f64 {
        return false;
    }
    let (ax, ay) = (fx - x0, fy - y0);
    let k = y0 as usize * size + x0 as usize;
    if !(mask[k] && mask[k + 1] && mask[k + size] && mask[k + size + 1]) {
        return false;
    }
    for (o, v) in out.iter_mut().zip(vals) {
        *o = (1.0 - ay) * ((1.0 - ax) * v[k] + ax * v[k + 1]) + ay * ((1.0 - ax) * v[k + size] + ax * v[k + size + 1]);
    }
    true
}

/// Fraction of online pixels that land on valid map pixels.
pub fn overlap_fraction(template: &Raster, image: &Raster) -> f64 {
    let total = template.valid_count();
    if total == 0 {
        return 0.0;
    }
    let hits = template
        .mask
        .iter()
        .zip(&image.mask)
        .filter(|(t, i)| **t && **i)
        .count();
    hits as f64 / total as f64
}

/// Register the sparse online intensity raster (template) onto the dense map
/// raster (image) with a forwards-additive Gauss-Newton over a rotation plus
/// translation warp, coarse to fine. Only the rotation feeds the heading:
/// `heading = h0 - rotation`.
pub fn estimate_heading(template: &Raster, image: &Raster, h0: f64, params: &HeadingParams) -> Result<HeadingEstimate> {
    if template.resolution != image.resolution {
        return Err(Error::ResolutionMismatch {
            expected: image.resolution,
            got: template.resolution,
        });
    }
    if template.size != image.size || template.i0 != image.i0 || template.j0 != image.j0 {
        return Err(Error::InvalidArgument("rasters must share their grid".into()));
    }
    let overlap = overlap_fraction(template, image);
    if overlap < params.min_overlap {
        return Err(Error::InsufficientOverlap(format!("heading overlap {overlap:.3}")));
    }

    let mut levels = Vec::with_capacity(params.levels);
    let (mut size, mut tv, mut tm, mut iv, mut im) = (
        template.size,
        template.values.clone(),
        template.mask.clone(),
        image.values.clone(),
        image.mask.clone(),
    );
    let mut pivot = template.pivot;
    for l in 0..params.levels.max(1) {
        if l > 0 {
            let (n, v, m) = downsample(size, &tv, &tm);
            tv = v;
            tm = m;
            let (_, v, m) = downsample(size, &iv, &im);
            iv = v;
            im = m;
            size = n;
            pivot = (pivot.0 / 2.0, pivot.1 / 2.0);
        }
        let (gx, gy, g_mask) = gradients(size, &iv, &im);
        let s_mask = im.iter().zip(&g_mask).map(|(a, g)| *a && *g).collect();
        levels.push(Level {
            size,
            pivot,
            t_val: tv.clone(),
            t_mask: tm.clone(),
            i_val: iv.clone(),
            gx,
            gy,
            s_mask,
        });
    }

    // p = (theta, tx, ty) with translation in level-0 pixels
    let mut p: Vector3<f64> = Vector3::zeros();
    let mut iterations = 0;
    let mut converged = false;
    for (depth, lv) in levels.iter().enumerate().rev() {
        let scale = (1usize << depth) as f64;
        let mut q = Vector3::new(p[0], p[1] / scale, p[2] / scale);
        converged = false;
        for _ in 0..params.max_iterations {
            iterations += 1;
            let (s, c) = q[0].sin_cos();
            let mut h = Matrix3::zeros();
            let mut b = Vector3::zeros();
            let mut used = 0usize;
            let mut sample = [0.0; 3];
            for y in 0..lv.size {
                for x in 0..lv.size {
                    let k = y * lv.size + x;
                    if !lv.t_mask[k] {
                        continue;
                    }
                    let dx = x as f64 + 0.5 - lv.pivot.0;
                    let dy = y as f64 + 0.5 - lv.pivot.1;
                    let wx = c * dx - s * dy + lv.pivot.0 + q[1];
                    let wy = s * dx + c * dy + lv.pivot.1 + q[2];
                    if !bilinear(lv.size, &[&lv.i_val, &lv.gx, &lv.gy], &lv.s_mask, wx, wy, &mut sample) {
                        continue;
                    }
                    let e = lv.t_val[k] - sample[0];
                    let j = Vector3::new(
                        sample[1] * (-s * dx - c * dy) + sample[2] * (c * dx - s * dy),
                        sample[1],
                        sample[2],
                    );
                    h += j * j.transpose();
                    b += j * e;
                    used += 1;
                }
            }
            if used < 10 {
                break;
            }
            let Some(delta) = h.cholesky().map(|ch| ch.solve(&b)) else {
                break;
            };
            if !delta.iter().all(|d| d.is_finite()) {
                break;
            }
            q += delta;
            if delta[0].abs() < params.tolerance && delta[1].hypot(delta[2]) < 1e-2 {
                converged = true;
                break;
            }
        }
        p = Vector3::new(q[0], q[1] * scale, q[2] * scale);
    }

    let ok = converged && p[0].is_finite() && p[0].abs() <= params.max_rotation;
    let res = template.resolution;
    Ok(HeadingEstimate {
        heading: if ok { crate::sins::wrap_pi(h0 - p[0]) } else { h0 },
        rotation: if ok { p[0] } else { 0.0 },
        translation: (p[1] * res, p[2] * res),
        iterations,
        degraded: !ok,
    })
}
