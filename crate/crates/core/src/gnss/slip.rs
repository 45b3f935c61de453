//! Cycle-slip detection from time-differenced SD observations between two
//! consecutive epochs.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::lsq::{self, ObsRow, PositionPrior};
use super::rtk::{resolve_ambiguities, sd_to_dd};
use super::{sd_geometry, GnssEpoch, RtkConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipReport {
    pub t: f64,
    /// Satellites observed in both epochs.
    pub common: Vec<u32>,
    /// Satellites whose SD ambiguity jumped, with the jump in cycles.
    pub slips: Vec<(u32, i64)>,
    /// True when the time-differenced ambiguities passed the ratio test.
    pub fixed: bool,
    pub ratio: f64,
    /// Rover displacement estimated between the epochs, ECEF m.
    pub increment: Vector3<f64>,
}

impl SlipReport {
    /// Phases that cannot be trusted: the slipped ones, or all of them when
    /// the integer search failed.
    pub fn suspect(&self) -> Vec<u32> {
        if self.fixed {
            self.slips.iter().map(|s| s.0).collect()
        } else {
            self.common.clone()
        }
    }
}

/// Most frequent value, ties broken towards zero then the smaller value.
fn mode(values: &[i64]) -> i64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let mut best = (0usize, 0i64);
    let mut k = 0;
    while k < v.len() {
        let mut e = k;
        while e < v.len() && v[e] == v[k] {
            e += 1;
        }
        let n = e - k;
        if n > best.0 || (n == best.0 && v[k] == 0) {
            best = (n, v[k]);
        }
        k = e;
    }
    best.1
}

/// `x_prev` is the rover position at the previous epoch; `increment`, when
/// given, is a predicted displacement with its covariance (ECEF) and enters
/// as a virtual observation.
pub fn detect_cycle_slips(
    prev: &GnssEpoch,
    cur: &GnssEpoch,
    x_prev: &Vector3<f64>,
    increment: Option<(&Vector3<f64>, &Matrix3<f64>)>,
    cfg: &RtkConfig,
) -> Result<SlipReport> {
    prev.validate()?;
    cur.validate()?;
    let pairs: Vec<(usize, usize)> = cur
        .sats
        .iter()
        .enumerate()
        .filter_map(|(i, s)| prev.sats.iter().position(|p| p.id == s.id).map(|j| (j, i)))
        .collect();
    if pairs.len() < 4 {
        return Err(Error::SlipDetectionUnavailable(pairs.len()));
    }
    let prior = match increment {
        Some((d, c)) => Some(PositionPrior {
            target: x_prev + d,
            info: c.try_inverse().ok_or(Error::IllConditioned)?,
        }),
        None => None,
    };
    let x0 = prior.map(|p| p.target).unwrap_or(*x_prev);
    let xp = *x_prev;
    let rows = |x: &Vector3<f64>| {
        let mut rows = Vec::with_capacity(2 * pairs.len());
        for (k, &(j, i)) in pairs.iter().enumerate() {
            let (p, c) = (&prev.sats[j], &cur.sats[i]);
            let (dr_c, los) = sd_geometry(&c.pos, x, &cur.base);
            let (dr_p, _) = sd_geometry(&p.pos, &xp, &prev.base);
            let el = c.elevation.min(p.elevation);
            rows.push(ObsRow {
                los,
                omc: (c.sd_range - p.sd_range) - (dr_c - dr_p),
                weight: 0.5 * cfg.weight(el, false),
                amb: None,
            });
            rows.push(ObsRow {
                los,
                omc: (c.sd_phase - p.sd_phase) - (dr_c - dr_p),
                weight: 0.5 * cfg.weight(el, true),
                amb: Some((k, -c.wavelength)),
            });
        }
        rows
    };
    let sol = lsq::solve(x0, rows, pairs.len(), prior.as_ref(), cfg.max_iterations)?;
    let n = pairs.len();
    let amb: DVector<f64> = sol.params.rows(4, n).into_owned();
    let q = sol.cofactor.view((4, 4), (n, n)).into_owned();
    let reference = (0..n)
        .max_by(|&a, &b| {
            cur.sats[pairs[a].1]
                .elevation
                .total_cmp(&cur.sats[pairs[b].1].elevation)
        })
        .expect("non-empty");
    let dd = sd_to_dd(&amb, &q, reference)?;
    let res = resolve_ambiguities(&dd.values, &dd.covariance, cfg)?;
    let common: Vec<u32> = pairs.iter().map(|&(_, i)| cur.sats[i].id).collect();
    let mut slips = Vec::new();
    if let Some(ints) = res.integers() {
        let mut all: Vec<i64> = ints.iter().cloned().collect();
        all.push(0);
        let m = mode(&all);
        let mut per_sat = vec![-m; n];
        for (r, &k) in dd.others.iter().enumerate() {
            per_sat[k] = ints[r] - m;
        }
        for (k, s) in per_sat.iter().enumerate() {
            if *s != 0 {
                slips.push((common[k], *s));
            }
        }
    }
    Ok(SlipReport {
        t: cur.t,
        common,
        slips,
        fixed: res.fixed,
        ratio: res.ratio,
        increment: sol.position - xp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_prefers_zero_on_tie() {
        assert_eq!(mode(&[1, 1, 0, 0]), 0);
        assert_eq!(mode(&[2, 2, 2, 0]), 2);
        assert_eq!(mode(&[-1, 3, 3]), 3);
    }
}
