use serde::{Deserialize, Serialize};

use super::histogram::{axis_variances, normalized_exp};
use crate::error::{Error, Result};
use crate::map::{LidarMap, OnlineGrid};

/// How the intensity and altitude cues are blended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CueWeighting {
    Adaptive,
    IntensityOnly,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LikelihoodParams {
    pub alpha: f64,
    /// Altitude scale applied to the altitude SSD (1/m^2).
    pub lambda: f64,
    pub beta: f64,
    pub n_min: usize,
    pub eps_p: f64,
    pub weighting: CueWeighting,
}

impl Default for LikelihoodParams {
    fn default() -> Self {
        Self {
            alpha: std::f64::consts::E,
            lambda: 2.0e5,
            beta: 2.0,
            n_min: 200,
            eps_p: 1e-12,
            weighting: CueWeighting::Adaptive,
        }
    }
}

/// Per-offset sums of squared differences, window-ordered like
/// [`HistogramPosterior::probs`](super::HistogramPosterior).
#[derive(Debug, Clone, PartialEq)]
pub struct SsdSweep {
    pub half_width: usize,
    pub ssd_r: Vec<f64>,
    pub ssd_a: Vec<f64>,
    pub co_occupied: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CueLikelihoods {
    pub sweep: SsdSweep,
    pub n_z: usize,
    pub p_r: Vec<f64>,
    pub p_a: Vec<f64>,
    pub gamma: f64,
    pub combined: Vec<f64>,
}

/// Dense copy of the map cells an offset sweep can touch.
struct Patch {
    i0: i64,
    j0: i64,
    width: usize,
    r_mean: Vec<f64>,
    r_inv_var: Vec<f64>,
    a_mean: Vec<f64>,
    /// 1.0 where the map cell is occupied, else 0.0.
    occupied: Vec<f64>,
}

impl Patch {
    fn extract(map: &LidarMap, i0: i64, j0: i64, i1: i64, j1: i64) -> Self {
        let width = (i1 - i0 + 1) as usize;
        let height = (j1 - j0 + 1) as usize;
        let n = width * height;
        let mut p = Patch {
            i0,
            j0,
            width,
            r_mean: vec![0.0; n],
            r_inv_var: vec![0.0; n],
            a_mean: vec![0.0; n],
            occupied: vec![0.0; n],
        };
        for j in j0..=j1 {
            for i in i0..=i1 {
                if let Some(c) = map.cell(i, j).filter(|c| !c.is_empty()) {
                    let k = (j - j0) as usize * width + (i - i0) as usize;
                    p.r_mean[k] = c.intensity_mean as f64;
                    p.r_inv_var[k] = 1.0 / c.intensity_var as f64;
                    p.a_mean[k] = c.altitude_mean as f64;
                    p.occupied[k] = 1.0;
                }
            }
        }
        p
    }
}

/// Variance-weighted intensity SSD and plain altitude SSD for every integer
/// offset in the `(2W+1)^2` window. Online cell `(i, j)` is compared with map
/// cell `(i + u, j + v)`.
pub fn ssd_sweep(online: &OnlineGrid, map: &LidarMap, half_width: usize) -> Result<SsdSweep> {
    if (online.resolution - map.resolution()).abs() > 1e-12 {
        return Err(Error::ResolutionMismatch {
            expected: map.resolution(),
            got: online.resolution,
        });
    }
    let (bi0, bj0, bi1, bj1) = online.bounds().ok_or(Error::EmptyScan)?;
    let w = half_width as i64;
    let patch = Patch::extract(map, bi0 - w, bj0 - w, bi1 + w, bj1 + w);

    let base: Vec<usize> = online
        .cells
        .iter()
        .map(|c| (c.j - patch.j0) as usize * patch.width + (c.i - patch.i0) as usize)
        .collect();
    let r_z: Vec<f64> = online.cells.iter().map(|c| c.stats.intensity_mean as f64).collect();
    let inv_z: Vec<f64> = online
        .cells
        .iter()
        .map(|c| 1.0 / c.stats.intensity_var as f64)
        .collect();
    let a_z: Vec<f64> = online.cells.iter().map(|c| c.stats.altitude_mean as f64).collect();

    let n = 2 * half_width + 1;
    let mut out = SsdSweep {
        half_width,
        ssd_r: vec![0.0; n * n],
        ssd_a: vec![0.0; n * n],
        co_occupied: vec![0; n * n],
    };
    let mut cnt = vec![0.0f64; n * n];
    // cell-major order keeps the innermost loop contiguous in both the
    // patch and the output arrays
    for c in 0..base.len() {
        let (rz, iz, az) = (r_z[c], inv_z[c], a_z[c]);
        for v in 0..n {
            let row = base[c] - half_width * (patch.width + 1) + v * patch.width;
            let rm = &patch.r_mean[row..row + n];
            let riv = &patch.r_inv_var[row..row + n];
            let am = &patch.a_mean[row..row + n];
            let occ = &patch.occupied[row..row + n];
            let o = v * n;
            let sr = &mut out.ssd_r[o..o + n];
            let sa = &mut out.ssd_a[o..o + n];
            let ct = &mut cnt[o..o + n];
            for u in 0..n {
                let d = rm[u] - rz;
                let da = am[u] - az;
                // (s_m^2 + s_z^2) / (s_m^2 s_z^2) = 1/s_m^2 + 1/s_z^2
                sr[u] += occ[u] * (d * d * (riv[u] + iz));
                sa[u] += occ[u] * (da * da);
                ct[u] += occ[u];
            }
        }
    }
    for (o, c) in out.co_occupied.iter_mut().zip(&cnt) {
        *o = *c as u32;
    }
    Ok(out)
}

/// Turn an SSD array into a normalized likelihood `alpha^(-scale*SSD/(2 N_z))`.
/// Offsets without co-occupied cells get `eps_p`.
pub fn ssd_to_likelihood(
    ssd: &[f64],
    co_occupied: &[u32],
    n_z: usize,
    alpha: f64,
    scale: f64,
    eps_p: f64,
) -> Result<Vec<f64>> {
    let ln_alpha = alpha.ln();
    let logs: Vec<f64> = ssd
        .iter()
        .zip(co_occupied)
        .map(|(s, &c)| {
            if c == 0 {
                f64::NEG_INFINITY
            } else {
                -ln_alpha * scale * s / (2.0 * n_z as f64)
            }
        })
        .collect();
    let mut p = normalized_exp(&logs).ok_or(Error::InsufficientOverlap("no offset has co-occupied cells".into()))?;
    if co_occupied.contains(&0) {
        for (x, &c) in p.iter_mut().zip(co_occupied) {
            if c == 0 {
                *x = eps_p;
            }
        }
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
    }
    Ok(p)
}

/// Adaptive weight from the spread of both cue likelihoods. Per-axis
/// variances are floored at the cell quantization variance.
pub fn adaptive_gamma(p_r: &[f64], p_a: &[f64], half_width: usize, resolution: f64, beta: f64) -> f64 {
    let floor = resolution * resolution / 12.0;
    let (rx, ry) = axis_variances(p_r, half_width, resolution, beta);
    let (ax, ay) = axis_variances(p_a, half_width, resolution, beta);
    let sr = rx.max(floor) * ry.max(floor);
    let sa = ax.max(floor) * ay.max(floor);
    sa / (sa + sr)
}

/// Blend cue likelihoods as `P_r^gamma * P_a^(1-gamma)`, normalized.
pub fn combine(p_r: &[f64], p_a: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let logs: Vec<f64> = p_r
        .iter()
        .zip(p_a)
        .map(|(r, a)| {
            let lr = if gamma > 0.0 { gamma * r.ln() } else { 0.0 };
            let la = if gamma < 1.0 { (1.0 - gamma) * a.ln() } else { 0.0 };
            lr + la
        })
        .collect();
    normalized_exp(&logs).ok_or(Error::NonFinite("combined likelihood"))
}

pub fn measurement_likelihood(
    online: &OnlineGrid,
    map: &LidarMap,
    half_width: usize,
    params: &LikelihoodParams,
) -> Result<CueLikelihoods> {
    let n_z = online.valid_cell_count();
    if n_z <= params.n_min {
        return Err(Error::InsufficientOverlap(format!(
            "{n_z} online cells, need more than {}",
            params.n_min
        )));
    }
    let sweep = ssd_sweep(online, map, half_width)?;
    let p_r = ssd_to_likelihood(&sweep.ssd_r, &sweep.co_occupied, n_z, params.alpha, 1.0, params.eps_p)?;
    let p_a = ssd_to_likelihood(
        &sweep.ssd_a,
        &sweep.co_occupied,
        n_z,
        params.alpha,
        params.lambda,
        params.eps_p,
    )?;
    let gamma = match params.weighting {
        CueWeighting::Adaptive => adaptive_gamma(&p_r, &p_a, half_width, online.resolution, params.beta),
        CueWeighting::IntensityOnly => 1.0,
        CueWeighting::Fixed(g) => g.clamp(0.0, 1.0),
    };
    let combined = combine(&p_r, &p_a, gamma)?;
    Ok(CueLikelihoods {
        sweep,
        n_z,
        p_r,
        p_a,
        gamma,
        combined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{MapAccumulator, OnlineCell, Pose6};
    use rand::{Rng, SeedableRng};

    const RES: f64 = 0.1;

    /// 80x80 cell scene; `hole` cells are left unobserved.
    fn scene(flat_r: bool, flat_a: bool, seed: u64, hole: impl Fn(i64, i64) -> bool) -> LidarMap {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut acc = MapAccumulator::new(RES, 128).unwrap();
        for j in 0..80 {
            for i in 0..80 {
                let r = if flat_r { 60.0 } else { rng.random_range(20.0..200.0) };
                let a = if flat_a { 0.0 } else { rng.random_range(-0.08..0.08) };
                if hole(i, j) {
                    continue;
                }
                let (x, y) = crate::map::cell_center(RES, i, j);
                for s in [-1.0, 1.0] {
                    acc.add_sample(x, y, r + s * rng.random_range(0.5..3.0), a + s * 0.01);
                }
            }
        }
        acc.finalize().unwrap()
    }

    /// Online grid over cells `30..50` holding the map statistics of cell
    /// `(i + su, j + sv)`.
    fn online(map: &LidarMap, su: i64, sv: i64) -> OnlineGrid {
        let mut cells = Vec::new();
        for j in 30..50 {
            for i in 30..50 {
                if let Some(s) = map.cell(i + su, j + sv).filter(|c| !c.is_empty()) {
                    cells.push(OnlineCell { i, j, stats: *s });
                }
            }
        }
        OnlineGrid {
            resolution: RES,
            anchor: Pose6::default(),
            cells,
        }
    }

    fn argmax(p: &[f64], w: usize) -> (i64, i64) {
        let n = 2 * w + 1;
        let k = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        ((k % n) as i64 - w as i64, (k / n) as i64 - w as i64)
    }

    #[test]
    fn sweep_matches_brute_force() {
        let map = scene(false, false, 5, |i, j| (i * 7 + j * 3) % 11 == 0);
        let grid = online(&scene(false, false, 6, |_, _| false), 0, 0);
        let w = 2;
        let s = ssd_sweep(&grid, &map, w).unwrap();
        let n = 2 * w + 1;
        for v in -(w as i64)..=w as i64 {
            for u in -(w as i64)..=w as i64 {
                let (mut r, mut a, mut c) = (0.0, 0.0, 0u32);
                for z in &grid.cells {
                    let Some(m) = map.cell(z.i + u, z.j + v).filter(|m| !m.is_empty()) else {
                        continue;
                    };
                    let (sm, sz) = (m.intensity_var as f64, z.stats.intensity_var as f64);
                    r += (m.intensity_mean as f64 - z.stats.intensity_mean as f64).powi(2) * (sm + sz) / (sm * sz);
                    a += (m.altitude_mean as f64 - z.stats.altitude_mean as f64).powi(2);
                    c += 1;
                }
                let k = (v + w as i64) as usize * n + (u + w as i64) as usize;
                assert!((s.ssd_r[k] - r).abs() <= 1e-12 * r.max(1.0), "{} vs {r}", s.ssd_r[k]);
                assert!((s.ssd_a[k] - a).abs() <= 1e-12 * a.max(1.0));
                assert_eq!(s.co_occupied[k], c);
            }
        }
    }

    #[test]
    fn self_match_peaks_at_zero() {
        let map = scene(false, false, 1, |_, _| false);
        let lik = measurement_likelihood(&online(&map, 0, 0), &map, 6, &LikelihoodParams::default()).unwrap();
        assert_eq!(argmax(&lik.combined, 6), (0, 0));
        assert_eq!(lik.sweep.ssd_r[6 * 13 + 6], 0.0);
    }

    #[test]
    fn shifted_match_peaks_at_shift() {
        let map = scene(false, false, 2, |_, _| false);
        let lik = measurement_likelihood(&online(&map, 2, -3), &map, 6, &LikelihoodParams::default()).unwrap();
        assert_eq!(argmax(&lik.combined, 6), (2, -3));
        assert_eq!(argmax(&lik.p_r, 6), (2, -3));
        assert_eq!(argmax(&lik.p_a, 6), (2, -3));
    }

    #[test]
    fn gamma_follows_the_sharper_cue() {
        let p = LikelihoodParams::default();
        let flat_r = scene(true, false, 3, |_, _| false);
        let g = measurement_likelihood(&online(&flat_r, 0, 0), &flat_r, 5, &p)
            .unwrap()
            .gamma;
        assert!(g < 0.5, "{g}");
        let flat_a = scene(false, true, 4, |_, _| false);
        let g = measurement_likelihood(&online(&flat_a, 0, 0), &flat_a, 5, &p)
            .unwrap()
            .gamma;
        assert!(g > 0.5, "{g}");
    }

    #[test]
    fn equal_cues_give_half() {
        let map = scene(false, false, 7, |_, _| false);
        let lik = measurement_likelihood(&online(&map, 1, 0), &map, 4, &LikelihoodParams::default()).unwrap();
        let g = adaptive_gamma(&lik.p_r, &lik.p_r, 4, RES, 2.0);
        assert!((g - 0.5).abs() < 1e-15);
    }

    #[test]
    fn combine_endpoints() {
        let map = scene(false, false, 8, |_, _| false);
        let lik = measurement_likelihood(&online(&map, 0, 1), &map, 3, &LikelihoodParams::default()).unwrap();
        let c = combine(&lik.p_r, &lik.p_a, 1.0).unwrap();
        for (a, b) in c.iter().zip(&lik.p_r) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = combine(&lik.p_r, &lik.p_a, 0.0).unwrap();
        for (a, b) in c.iter().zip(&lik.p_a) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uncovered_offsets_get_floor() {
        let ssd = [1.0, 2.0, 0.0];
        let p = ssd_to_likelihood(&ssd, &[3, 3, 0], 10, std::f64::consts::E, 1.0, 1e-12).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p[2] < 1e-11);
        assert!((p[0] / p[1] - (0.05f64).exp()).abs() < 1e-9);
        assert!(ssd_to_likelihood(&ssd, &[0, 0, 0], 10, 2.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn too_few_cells_rejected() {
        let map = scene(false, false, 9, |_, _| false);
        let mut grid = online(&map, 0, 0);
        grid.cells.truncate(150);
        assert!(matches!(
            measurement_likelihood(&grid, &map, 3, &LikelihoodParams::default()),
            Err(Error::InsufficientOverlap(_))
        ));
    }
}
