use std::collections::BTreeMap;

use super::{cell_index, GridCellStats, GroundBand, LidarPoint, Pose6, RunningCell};
use crate::error::{Error, Result};

/// One occupied cell of an online grid, keyed by global cell index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineCell {
    pub i: i64,
    pub j: i64,
    pub stats: GridCellStats,
}

/// Sparse grid built from a single scan at a candidate pose.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineGrid {
    pub resolution: f64,
    pub anchor: Pose6,
    /// Occupied cells sorted by `(j, i)`.
    pub cells: Vec<OnlineCell>,
}

impl OnlineGrid {
    /// Number of cells with valid data (N_z).
    pub fn valid_cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Inclusive bounding box `(i_min, j_min, i_max, j_max)` of occupied cells.
    pub fn bounds(&self) -> Option<(i64, i64, i64, i64)> {
        let first = self.cells.first()?;
        let mut b = (first.i, first.j, first.i, first.j);
        for c in &self.cells {
            b.0 = b.0.min(c.i);
            b.1 = b.1.min(c.j);
            b.2 = b.2.max(c.i);
            b.3 = b.3.max(c.j);
        }
        Some(b)
    }

    /// Fraction of the bounding box that is occupied.
    pub fn occupied_fraction(&self) -> f64 {
        match self.bounds() {
            Some((i0, j0, i1, j1)) => self.cells.len() as f64 / (((i1 - i0 + 1) * (j1 - j0 + 1)) as f64),
            None => 0.0,
        }
    }
}

/// Transform `points` by `pose` and bin them on the map grid, using the same
/// running statistics, ground band and variance floors as map building.
pub fn rasterize_online(points: &[LidarPoint], pose: &Pose6, resolution: f64, band: &GroundBand) -> Result<OnlineGrid> {
    if !pose.is_finite() {
        return Err(Error::NonFinite("pose"));
    }
    let rot = pose.rotation();
    let mut cells: BTreeMap<(i64, i64), RunningCell> = BTreeMap::new();
    for p in points.iter().filter(|p| p.is_finite()) {
        let w = pose.transform(&rot, p);
        if !band.contains(w.z, pose.a) {
            continue;
        }
        let (i, j) = cell_index(resolution, w.x, w.y);
        cells
            .entry((j, i))
            .or_default()
            .push(p.intensity.clamp(0.0, 255.0), w.z);
    }
    if cells.is_empty() {
        return Err(Error::EmptyScan);
    }
    Ok(OnlineGrid {
        resolution,
        anchor: *pose,
        cells: cells
            .into_iter()
            .map(|((j, i), c)| OnlineCell {
                i,
                j,
                stats: c.finalize(),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    const RES: f64 = 0.125;

    #[test]
    fn identity_pose_single_point() {
        let g = rasterize_online(
            &[LidarPoint::new(0.0625, 0.0625, 0.0, 42.0)],
            &Pose6::default(),
            RES,
            &GroundBand::default(),
        )
        .unwrap();
        assert_eq!(g.valid_cell_count(), 1);
        assert_eq!((g.cells[0].i, g.cells[0].j), (0, 0));
        assert_eq!(g.cells[0].stats.intensity_mean, 42.0);
    }

    #[test]
    fn translated_pose_shifts_indices() {
        let pts: Vec<_> = (0..20)
            .map(|k| LidarPoint::new(0.3 * k as f64 - 2.0, 0.17 * k as f64, 0.0, k as f64))
            .collect();
        let base = rasterize_online(&pts, &Pose6::default(), RES, &GroundBand::default()).unwrap();
        let (ki, kj) = (7i64, -3i64);
        let moved = Pose6 {
            x: ki as f64 * RES,
            y: kj as f64 * RES,
            ..Default::default()
        };
        let shifted = rasterize_online(&pts, &moved, RES, &GroundBand::default()).unwrap();
        let a: HashSet<_> = base.cells.iter().map(|c| (c.i + ki, c.j + kj)).collect();
        let b: HashSet<_> = shifted.cells.iter().map(|c| (c.i, c.j)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_scan_after_band() {
        let r = rasterize_online(
            &[LidarPoint::new(0.0, 0.0, 5.0, 1.0)],
            &Pose6::default(),
            RES,
            &GroundBand::default(),
        );
        assert!(matches!(r, Err(Error::EmptyScan)));
    }

    #[test]
    fn valid_count_matches_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pose = Pose6 {
            x: 12.3,
            y: -4.1,
            a: 2.0,
            roll: 0.01,
            pitch: -0.02,
            heading: 0.7,
        };
        let pts: Vec<_> = (0..3000)
            .map(|_| {
                LidarPoint::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(0.0..255.0),
                )
            })
            .collect();
        let g = rasterize_online(&pts, &pose, RES, &GroundBand::default()).unwrap();
        let rot = pose.rotation();
        let oracle: HashSet<_> = pts
            .iter()
            .map(|p| {
                let w = pose.transform(&rot, p);
                cell_index(RES, w.x, w.y)
            })
            .collect();
        assert_eq!(g.valid_cell_count(), oracle.len());
        assert!(g.occupied_fraction() < 1.0);
    }
}
