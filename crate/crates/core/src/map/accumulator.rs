use std::collections::BTreeMap;

use super::{cell_index, GroundBand, LidarMap, LidarPoint, MapTile, Pose6, RunningCell};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccumulatorDiagnostics {
    pub accepted: u64,
    pub non_finite: u64,
    pub outside_band: u64,
}

/// Single-writer builder turning posed scans into per-cell statistics.
#[derive(Debug, Clone)]
pub struct MapAccumulator {
    resolution: f64,
    dimension: u32,
    band: GroundBand,
    tiles: BTreeMap<(i32, i32), Vec<RunningCell>>,
    diagnostics: AccumulatorDiagnostics,
}

impl MapAccumulator {
    pub fn new(resolution: f64, dimension: u32) -> Result<Self> {
        Self::with_band(resolution, dimension, GroundBand::default())
    }

    pub fn with_band(resolution: f64, dimension: u32, band: GroundBand) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) || !dimension.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "resolution {resolution} / dimension {dimension}"
            )));
        }
        Ok(Self {
            resolution,
            dimension,
            band,
            tiles: BTreeMap::new(),
            diagnostics: AccumulatorDiagnostics::default(),
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn diagnostics(&self) -> AccumulatorDiagnostics {
        self.diagnostics
    }

    fn slot(&mut self, i: i64, j: i64) -> &mut RunningCell {
        let d = self.dimension as i64;
        let t = (i.div_euclid(d) as i32, j.div_euclid(d) as i32);
        let k = (j.rem_euclid(d) * d + i.rem_euclid(d)) as usize;
        let n = (d * d) as usize;
        &mut self.tiles.entry(t).or_insert_with(|| vec![RunningCell::default(); n])[k]
    }

    /// Add one world-frame sample directly.
    pub fn add_sample(&mut self, x: f64, y: f64, intensity: f64, altitude: f64) {
        let (i, j) = cell_index(self.resolution, x, y);
        self.slot(i, j).push(intensity.clamp(0.0, 255.0), altitude);
        self.diagnostics.accepted += 1;
    }

    /// Transform `points` by `pose` and fold them into the cell statistics.
    /// Non-finite points and points outside the ground band are skipped and
    /// counted in [`diagnostics`](Self::diagnostics).
    pub fn accumulate_scan(&mut self, points: &[LidarPoint], pose: &Pose6) -> Result<()> {
        if !pose.is_finite() {
            return Err(Error::NonFinite("pose"));
        }
        let rot = pose.rotation();
        for p in points {
            if !p.is_finite() {
                self.diagnostics.non_finite += 1;
                continue;
            }
            let w = pose.transform(&rot, p);
            if !self.band.contains(w.z, pose.a) {
                self.diagnostics.outside_band += 1;
                continue;
            }
            self.add_sample(w.x, w.y, p.intensity, w.z);
        }
        Ok(())
    }

    /// Fold another accumulator built on the same grid into this one.
    pub fn merge(&mut self, other: &MapAccumulator) -> Result<()> {
        if other.resolution != self.resolution || other.dimension != self.dimension {
            return Err(Error::ResolutionMismatch {
                expected: self.resolution,
                got: other.resolution,
            });
        }
        let n = (self.dimension as usize).pow(2);
        for (t, cells) in &other.tiles {
            let mine = self.tiles.entry(*t).or_insert_with(|| vec![RunningCell::default(); n]);
            for (a, b) in mine.iter_mut().zip(cells) {
                a.merge(b);
            }
        }
        self.diagnostics.accepted += other.diagnostics.accepted;
        self.diagnostics.non_finite += other.diagnostics.non_finite;
        self.diagnostics.outside_band += other.diagnostics.outside_band;
        Ok(())
    }

    /// Running statistics of global cell `(i, j)` at full precision.
    pub fn running_cell(&self, i: i64, j: i64) -> Option<&RunningCell> {
        let d = self.dimension as i64;
        let t = (i.div_euclid(d) as i32, j.div_euclid(d) as i32);
        let k = (j.rem_euclid(d) * d + i.rem_euclid(d)) as usize;
        self.tiles.get(&t).map(|c| &c[k]).filter(|c| c.n > 0)
    }

    /// Freeze into an immutable map, applying variance floors. Tiles without
    /// any occupied cell are dropped.
    pub fn finalize(&self) -> Result<LidarMap> {
        let mut map = LidarMap::new(self.resolution, self.dimension)?;
        for (t, cells) in &self.tiles {
            if cells.iter().all(|c| c.n == 0) {
                continue;
            }
            let mut tile = MapTile::empty(*t, self.resolution, self.dimension);
            for (dst, src) in tile.cells.iter_mut().zip(cells) {
                *dst = src.finalize();
            }
            map.insert_tile(tile)?;
        }
        if map.tile_count() == 0 {
            return Err(Error::NoData);
        }
        Ok(map)
    }
}
