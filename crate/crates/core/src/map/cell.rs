use serde::{Deserialize, Serialize};

/// Floor applied to intensity variance of every occupied cell.
pub const INTENSITY_VAR_FLOOR: f64 = 1.0;
/// Floor applied to altitude variance of every occupied cell (m^2).
pub const ALTITUDE_VAR_FLOOR: f64 = 0.0025;

/// Single-Gaussian statistics of laser intensity and altitude in one cell.
///
/// A cell with `count == 0` is empty and never takes part in matching.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GridCellStats {
    pub count: u32,
    pub intensity_mean: f32,
    pub intensity_var: f32,
    pub altitude_mean: f32,
    pub altitude_var: f32,
}

impl GridCellStats {
    pub const EMPTY: GridCellStats = GridCellStats {
        count: 0,
        intensity_mean: 0.0,
        intensity_var: 0.0,
        altitude_mean: 0.0,
        altitude_var: 0.0,
    };

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Welford running mean / population variance for both layers of a cell.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningCell {
    pub n: u64,
    pub intensity_mean: f64,
    intensity_m2: f64,
    pub altitude_mean: f64,
    altitude_m2: f64,
}

impl RunningCell {
    #[inline]
    pub fn push(&mut self, intensity: f64, altitude: f64) {
        self.n += 1;
        let n = self.n as f64;
        let d = intensity - self.intensity_mean;
        self.intensity_mean += d / n;
        self.intensity_m2 += d * (intensity - self.intensity_mean);
        let d = altitude - self.altitude_mean;
        self.altitude_mean += d / n;
        self.altitude_m2 += d * (altitude - self.altitude_mean);
    }

    /// Chan et al. parallel combination of two running cells.
    pub fn merge(&mut self, other: &RunningCell) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let d = other.intensity_mean - self.intensity_mean;
        self.intensity_mean += d * nb / n;
        self.intensity_m2 += other.intensity_m2 + d * d * na * nb / n;
        let d = other.altitude_mean - self.altitude_mean;
        self.altitude_mean += d * nb / n;
        self.altitude_m2 += other.altitude_m2 + d * d * na * nb / n;
        self.n += other.n;
    }

    pub fn intensity_var(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.intensity_m2 / self.n as f64).max(0.0)
        }
    }

    pub fn altitude_var(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.altitude_m2 / self.n as f64).max(0.0)
        }
    }

    /// Stored statistics with variance floors applied.
    pub fn finalize(&self) -> GridCellStats {
        if self.n == 0 {
            return GridCellStats::EMPTY;
        }
        GridCellStats {
            count: self.n.min(u32::MAX as u64) as u32,
            intensity_mean: self.intensity_mean.clamp(0.0, 255.0) as f32,
            intensity_var: self.intensity_var().max(INTENSITY_VAR_FLOOR) as f32,
            altitude_mean: self.altitude_mean as f32,
            altitude_var: self.altitude_var().max(ALTITUDE_VAR_FLOOR) as f32,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample() {
        let mut c = RunningCell::default();
        c.push(100.0, 1.0);
        assert_eq!(c.intensity_mean, 100.0);
        assert_eq!(c.intensity_var(), 0.0);
        assert_eq!(c.n, 1);
    }

    #[test]
    fn two_samples_population_variance() {
        let mut c = RunningCell::default();
        c.push(90.0, 0.0);
        c.push(110.0, 0.0);
        assert_eq!(c.intensity_mean, 100.0);
        assert_eq!(c.intensity_var(), 100.0);
    }

    #[test]
    fn floor_applied_on_finalize() {
        let mut c = RunningCell::default();
        c.push(50.0, 2.0);
        c.push(50.0, 2.0);
        let s = c.finalize();
        assert_eq!(s.intensity_var as f64, INTENSITY_VAR_FLOOR);
        assert_eq!(s.altitude_var, ALTITUDE_VAR_FLOOR as f32);
        assert_eq!(s.count, 2);
    }

    #[test]
    fn merge_matches_sequential() {
        let xs = [3.0, 7.5, 1.25, 9.0, 4.0, 6.5];
        let mut all = RunningCell::default();
        let mut a = RunningCell::default();
        let mut b = RunningCell::default();
        for (k, x) in xs.iter().enumerate() {
            all.push(*x, -x);
            if k < 2 {
                a.push(*x, -x)
            } else {
                b.push(*x, -x)
            }
        }
        a.merge(&b);
        assert!((a.intensity_mean - all.intensity_mean).abs() < 1e-12);
        assert!((a.intensity_var() - all.intensity_var()).abs() < 1e-12);
        assert!((a.altitude_var() - all.altitude_var()).abs() < 1e-12);
    }
}
