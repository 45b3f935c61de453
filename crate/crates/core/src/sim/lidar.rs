use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::world::World;
use crate::map::{cell_index, LidarPoint, Pose6};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarSpec {
    pub rate: f64,
    pub range: f64,
    pub blind: f64,
    /// Fraction of footprint cells that return a point.
    pub sparsity: f64,
    pub intensity_sigma: f64,
    pub altitude_sigma: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            rate: 5.0,
            range: 12.0,
            blind: 3.0,
            sparsity: 0.3,
            intensity_sigma: 4.0,
            altitude_sigma: 0.03,
        }
    }
}

/// Ground returns around `pose` in the body frame. Each world cell inside
/// the annulus `[blind, range]` returns at most one point, placed away from
/// the cell borders.
pub fn synthesize_scan<R: Rng>(world: &World, pose: &Pose6, t: f64, spec: &LidarSpec, rng: &mut R) -> Vec<LidarPoint> {
    let res = world.resolution;
    let (ia, ja) = cell_index(res, pose.x - spec.range, pose.y - spec.range);
    let (ib, jb) = cell_index(res, pose.x + spec.range, pose.y + spec.range);
    let rot_t = pose.rotation().transpose();
    let origin = Vector3::new(pose.x, pose.y, pose.a);
    let (r2, b2) = (spec.range * spec.range, spec.blind * spec.blind);
    let mut pts = Vec::new();
    for j in ja..=jb {
        for i in ia..=ib {
            let (cx, cy) = ((i as f64 + 0.5) * res, (j as f64 + 0.5) * res);
            let d2 = (cx - pose.x).powi(2) + (cy - pose.y).powi(2);
            if d2 > r2 || d2 < b2 {
                continue;
            }
            if rng.random::<f64>() >= spec.sparsity {
                continue;
            }
            let Some((inten, alt)) = world.at(i, j, t) else {
                continue;
            };
            let u: f64 = rng.random_range(0.1..0.9);
            let v: f64 = rng.random_range(0.1..0.9);
            let e1: f64 = StandardNormal.sample(rng);
            let e2: f64 = StandardNormal.sample(rng);
            let w = Vector3::new(
                (i as f64 + u) * res,
                (j as f64 + v) * res,
                alt + spec.altitude_sigma * e2,
            );
            let b = rot_t * (w - origin);
            pts.push(LidarPoint::new(
                b.x,
                b.y,
                b.z,
                (inten + spec.intensity_sigma * e1).clamp(0.0, 255.0),
            ));
        }
    }
    pts
}
