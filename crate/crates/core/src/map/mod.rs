//! Tiled grid map of laser intensity and altitude statistics.
//!
//! The map lives in a projected 2-D frame (x east, y north, metres). Cells
//! are indexed globally by `floor(x / resolution)`; tiles group
//! `dimension x dimension` cells, so tile `(ti, tj)` has its corner at
//! `(ti, tj) * dimension * resolution`.

mod accumulator;
mod cell;
mod online;
pub mod projection;
mod tile;

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sins::attitude_from_euler;

pub use accumulator::{AccumulatorDiagnostics, MapAccumulator};
pub use cell::{GridCellStats, RunningCell, ALTITUDE_VAR_FLOOR, INTENSITY_VAR_FLOOR};
pub use online::{rasterize_online, OnlineCell, OnlineGrid};
pub use projection::LocalProjection;
pub use tile::{load_map, read_tile, save_map, write_tile, MapTile, TILE_MAGIC, TILE_VERSION};

pub const DEFAULT_RESOLUTION: f64 = 0.125;
pub const DEFAULT_TILE_DIMENSION: u32 = 1024;
/// Search radius (cells) for the altitude fallback.
pub const ALTITUDE_FALLBACK_RADIUS: i64 = 8;

/// One LiDAR return in the vehicle body frame (right, forward, up), with the
/// origin at the vehicle reference point on the road surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// Vehicle pose in the projected map frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose6 {
    pub x: f64,
    pub y: f64,
    /// Altitude of the reference point (road surface), m.
    pub a: f64,
    pub roll: f64,
    pub pitch: f64,
    /// Compass heading, rad, clockwise from north.
    pub heading: f64,
}

impl Pose6 {
    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.a, self.roll, self.pitch, self.heading]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        attitude_from_euler(self.roll, self.pitch, self.heading)
            .to_rotation_matrix()
            .into_inner()
    }

    pub fn transform(&self, rot: &Matrix3<f64>, p: &LidarPoint) -> Vector3<f64> {
        rot * Vector3::new(p.x, p.y, p.z) + Vector3::new(self.x, self.y, self.a)
    }
}

/// Vertical acceptance band around the local ground estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundBand {
    pub below: f64,
    pub above: f64,
}

impl Default for GroundBand {
    fn default() -> Self {
        Self { below: 2.0, above: 0.5 }
    }
}

impl GroundBand {
    #[inline]
    pub fn contains(&self, z: f64, ground: f64) -> bool {
        z >= ground - self.below && z <= ground + self.above
    }
}

/// Global cell index containing world coordinate `(x, y)`.
#[inline]
pub fn cell_index(resolution: f64, x: f64, y: f64) -> (i64, i64) {
    ((x / resolution).floor() as i64, (y / resolution).floor() as i64)
}

/// World coordinate of the centre of global cell `(i, j)`.
#[inline]
pub fn cell_center(resolution: f64, i: i64, j: i64) -> (f64, f64) {
    ((i as f64 + 0.5) * resolution, (j as f64 + 0.5) * resolution)
}

/// Finalized, immutable grid map.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarMap {
    resolution: f64,
    dimension: u32,
    tiles: BTreeMap<(i32, i32), MapTile>,
}

impl LidarMap {
    pub fn new(resolution: f64, dimension: u32) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) || !dimension.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "resolution {resolution} / dimension {dimension}"
            )));
        }
        Ok(Self {
            resolution,
            dimension,
            tiles: BTreeMap::new(),
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dimension(&self) -> u32 {
        self.dimension
    }

    pub fn tiles(&self) -> impl Iterator<Item = &MapTile> {
        self.tiles.values()
    }

    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    pub fn insert_tile(&mut self, tile: MapTile) -> Result<()> {
        if tile.resolution != self.resolution || tile.dimension != self.dimension {
            return Err(Error::ResolutionMismatch {
                expected: self.resolution,
                got: tile.resolution,
            });
        }
        self.tiles.insert(tile.index, tile);
        Ok(())
    }

    pub fn tile(&self, index: (i32, i32)) -> Option<&MapTile> {
        self.tiles.get(&index)
    }

    /// Split a global cell index into (tile index, local index).
    #[inline]
    pub fn split_index(&self, i: i64, j: i64) -> ((i32, i32), usize) {
        let d = self.dimension as i64;
        let t = (i.div_euclid(d) as i32, j.div_euclid(d) as i32);
        let (li, lj) = (i.rem_euclid(d), j.rem_euclid(d));
        (t, (lj * d + li) as usize)
    }

    /// Statistics of global cell `(i, j)`, or `None` if not loaded.
    #[inline]
    pub fn cell(&self, i: i64, j: i64) -> Option<&GridCellStats> {
        let (t, k) = self.split_index(i, j);
        self.tiles.get(&t).map(|tile| &tile.cells[k])
    }

    /// Occupied cell containing `(x, y)`; `None` for empty or unloaded cells.
    pub fn query(&self, x: f64, y: f64) -> Option<GridCellStats> {
        let (i, j) = cell_index(self.resolution, x, y);
        self.cell(i, j).filter(|c| !c.is_empty()).copied()
    }

    /// Road-surface altitude at `(x, y)`: the containing cell's mean, else the
    /// nearest occupied cell within [`ALTITUDE_FALLBACK_RADIUS`] cells.
    pub fn altitude_at(&self, x: f64, y: f64) -> Result<f64> {
        let (ci, cj) = cell_index(self.resolution, x, y);
        if let Some(c) = self.cell(ci, cj).filter(|c| !c.is_empty()) {
            return Ok(c.altitude_mean as f64);
        }
        let r = ALTITUDE_FALLBACK_RADIUS;
        let mut best: Option<(f64, f64)> = None;
        for dj in -r..=r {
            for di in -r..=r {
                let d2 = (di * di + dj * dj) as f64;
                if d2 > (r * r) as f64 || d2 == 0.0 {
                    continue;
                }
                if let Some(c) = self.cell(ci + di, cj + dj).filter(|c| !c.is_empty()) {
                    // distance measured from the query point to the cell centre
                    let (cx, cy) = cell_center(self.resolution, ci + di, cj + dj);
                    let dist = (cx - x).hypot(cy - y);
                    if best.is_none_or(|(bd, _)| dist < bd) {
                        best = Some((dist, c.altitude_mean as f64));
                    }
                }
            }
        }
        best.map(|(_, a)| a).ok_or(Error::AltitudeUnavailable { x, y })
    }

    pub fn occupied_cells(&self) -> usize {
        self.tiles
            .values()
            .map(|t| t.cells.iter().filter(|c| !c.is_empty()).count())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_map() -> LidarMap {
        let mut acc = MapAccumulator::new(0.5, 8).unwrap();
        let pose = Pose6::default();
        let pts = vec![
            LidarPoint::new(0.25, 0.25, 0.1, 100.0),
            LidarPoint::new(1.25, 0.25, 0.3, 50.0),
            LidarPoint::new(-3.75, -0.25, -0.2, 10.0),
        ];
        acc.accumulate_scan(&pts, &pose).unwrap();
        acc.finalize().unwrap()
    }

    #[test]
    fn query_cell_center() {
        let m = tiny_map();
        let c = m.query(0.25, 0.25).unwrap();
        assert_eq!(c.intensity_mean, 100.0);
        assert_eq!(c.count, 1);
        assert!(m.query(0.75, 0.25).is_none());
        // spans two tiles in x (negative index)
        assert_eq!(m.tile_count(), 2);
    }

    #[test]
    fn altitude_fallback_to_neighbor() {
        let m = tiny_map();
        assert!((m.altitude_at(0.25, 0.25).unwrap() - 0.1).abs() < 1e-7);
        // empty cell one to the right of an occupied one
        let a = m.altitude_at(0.60, 0.25).unwrap();
        assert!((a - 0.1).abs() < 1e-7, "{a}");
        assert!(matches!(
            m.altitude_at(100.0, 100.0),
            Err(Error::AltitudeUnavailable { .. })
        ));
    }

    #[test]
    fn cell_center_round_trip() {
        let res = 0.125;
        for &(i, j) in &[(0i64, 0i64), (-1, 5), (123456, -98765), (-7, -7)] {
            let (x, y) = cell_center(res, i, j);
            assert_eq!(cell_index(res, x, y), (i, j));
            let back = ((x / res) - 0.5, (y / res) - 0.5);
            assert!((back.0 - i as f64).abs() * res < 1e-9);
            assert!((back.1 - j as f64).abs() * res < 1e-9);
        }
    }

    #[test]
    fn split_index_negative() {
        let m = LidarMap::new(0.125, 1024).unwrap();
        assert_eq!(m.split_index(-1, 0), ((-1, 0), 1023));
        assert_eq!(m.split_index(1024, 1025), ((1, 1), 1024 + 0));
    }
}
