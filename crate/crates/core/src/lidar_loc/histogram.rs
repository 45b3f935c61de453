use std::io::{self, Write};

use nalgebra::{Matrix2, SymmetricEigen, Vector2};

use crate::error::{Error, Result};

/// Discrete belief over integer cell offsets around a world-frame center.
///
/// Entry `(u, v)` is the belief that the vehicle sits at
/// `center + resolution * (u, v)`; `u` runs east, `v` north.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramPosterior {
    pub center: (f64, f64),
    pub half_width: usize,
    pub resolution: f64,
    pub probs: Vec<f64>,
    pub degraded: bool,
}

/// Offset estimate extracted from a posterior, in metres relative to its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetEstimate {
    pub offset: Vector2<f64>,
    /// Weighted scatter of the full window, before any floor.
    pub raw_covariance: Matrix2<f64>,
    pub covariance: Matrix2<f64>,
    /// Cell offset used as the center of the averaging area.
    pub peak: (i64, i64),
    pub degraded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateParams {
    pub beta: f64,
    pub peak_ratio: f64,
    /// Side of the averaging square, cells (odd).
    pub area: usize,
}

impl Default for EstimateParams {
    fn default() -> Self {
        Self {
            beta: 2.0,
            peak_ratio: 0.95,
            area: 5,
        }
    }
}

fn normalize(p: &mut [f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::NonFinite("belief normalization"));
    }
    p.iter_mut().for_each(|x| *x /= s);
    Ok(())
}

/// Exponentiate log-values after subtracting their maximum and normalize.
pub(crate) fn normalized_exp(logs: &[f64]) -> Option<Vec<f64>> {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let mut p: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    normalize(&mut p).ok()?;
    Some(p)
}

impl HistogramPosterior {
    pub fn uniform(center: (f64, f64), half_width: usize, resolution: f64) -> Result<Self> {
        if half_width == 0 || !(resolution > 0.0) {
            return Err(Error::InvalidArgument("histogram window".into()));
        }
        let n = 2 * half_width + 1;
        Ok(Self {
            center,
            half_width,
            resolution,
            probs: vec![1.0 / (n * n) as f64; n * n],
            degraded: false,
        })
    }

    #[inline]
    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    #[inline]
    pub fn index(&self, u: i64, v: i64) -> usize {
        let w = self.half_width as i64;
        ((v + w) as usize) * self.side() + (u + w) as usize
    }

    #[inline]
    pub fn offset(&self, k: usize) -> (i64, i64) {
        let n = self.side();
        let w = self.half_width as i64;
        ((k % n) as i64 - w, (k / n) as i64 - w)
    }

    pub fn get(&self, u: i64, v: i64) -> f64 {
        self.probs[self.index(u, v)]
    }

    fn reset_uniform(&mut self) {
        let n = self.probs.len() as f64;
        self.probs.iter_mut().for_each(|p| *p = 1.0 / n);
        self.degraded = true;
    }

    /// Motion step: move the center by the dead-reckoned displacement and
    /// blur the belief with an isotropic Gaussian of std `sigma` metres.
    pub fn predict(&mut self, displacement: (f64, f64), sigma: f64) -> Result<()> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("drift sigma {sigma}")));
        }
        if !(displacement.0.is_finite() && displacement.1.is_finite()) {
            return Err(Error::NonFinite("displacement"));
        }
        self.center.0 += displacement.0;
        self.center.1 += displacement.1;
        let reach = self.half_width as f64 * self.resolution;
        if displacement.0.abs() > reach || displacement.1.abs() > reach {
            self.reset_uniform();
            return Ok(());
        }
        self.probs = gaussian_blur(&self.probs, self.side(), sigma / self.resolution);
        normalize(&mut self.probs)
    }

    /// Shift the window by whole cells so that its center is as close as
    /// possible to `target`. Cells entering the window get the smallest
    /// belief currently held.
    pub fn recenter(&mut self, target: (f64, f64)) {
        let su = ((target.0 - self.center.0) / self.resolution).round() as i64;
        let sv = ((target.1 - self.center.1) / self.resolution).round() as i64;
        if su == 0 && sv == 0 {
            return;
        }
        self.center.0 += su as f64 * self.resolution;
        self.center.1 += sv as f64 * self.resolution;
        let w = self.half_width as i64;
        if su.abs() > 2 * w || sv.abs() > 2 * w {
            self.reset_uniform();
            return;
        }
        let fill = self.probs.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut out = vec![fill; self.probs.len()];
        for v in -w..=w {
            for u in -w..=w {
                let (ou, ov) = (u + su, v + sv);
                if ou.abs() <= w && ov.abs() <= w {
                    out[self.index(u, v)] = self.probs[self.index(ou, ov)];
                }
            }
        }
        self.probs = out;
        // a positive fill keeps the sum finite and > 0
        let _ = normalize(&mut self.probs);
    }

    /// Measurement step. Returns the clamped KL weight used on the prior.
    pub fn update(&mut self, likelihood: &[f64], kappa_max: f64) -> Result<f64> {
        if likelihood.len() != self.probs.len() {
            return Err(Error::Dimension(format!(
                "likelihood {} vs window {}",
                likelihood.len(),
                self.probs.len()
            )));
        }
        let mut lik = likelihood.to_vec();
        normalize(&mut lik)?;
        let kappa = kl_divergence(&lik, &self.probs).clamp(1.0, kappa_max);
        let logs: Vec<f64> = lik
            .iter()
            .zip(&self.probs)
            .map(|(l, p)| l.ln() + p.ln() / kappa)
            .collect();
        match normalized_exp(&logs) {
            Some(p) => {
                self.probs = p;
                self.degraded = false;
            }
            None => {
                self.probs = lik;
                self.degraded = true;
            }
        }
        Ok(kappa)
    }

    /// Offset estimate and covariance from the current belief.
    pub fn estimate(&self, params: &EstimateParams) -> OffsetEstimate {
        let res = self.resolution;
        let floor = res * res / 12.0;
        let (lo, hi) = self
            .probs
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &p| (a.min(p), b.max(p)));
        if hi - lo <= 1e-15 * hi {
            let s = (self.half_width as f64 * res).powi(2) / 3.0;
            let c = Matrix2::from_diagonal_element(s);
            return OffsetEstimate {
                offset: Vector2::zeros(),
                raw_covariance: c,
                covariance: c,
                peak: (0, 0),
                degraded: true,
            };
        }
        let peak = self.select_peak(params.peak_ratio);
        let offset = self.area_mean(peak, params.area, params.beta);
        let raw = self.scatter(&offset, params.beta);
        OffsetEstimate {
            offset,
            raw_covariance: raw,
            covariance: floor_eigenvalues(&raw, floor),
            peak,
            degraded: self.degraded,
        }
    }

    /// Local maxima sorted by belief, largest first.
    pub fn peaks(&self) -> Vec<((i64, i64), f64)> {
        let w = self.half_width as i64;
        let mut out = Vec::new();
        for v in -w..=w {
            for u in -w..=w {
                let p = self.get(u, v);
                let mut is_max = true;
                'n: for dv in -1..=1 {
                    for du in -1..=1 {
                        let (nu, nv) = (u + du, v + dv);
                        if (du, dv) != (0, 0) && nu.abs() <= w && nv.abs() <= w && self.get(nu, nv) > p {
                            is_max = false;
                            break 'n;
                        }
                    }
                }
                if is_max {
                    out.push(((u, v), p));
                }
            }
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }

    fn select_peak(&self, ratio: f64) -> (i64, i64) {
        let peaks = self.peaks();
        let d2 = |(u, v): (i64, i64)| u * u + v * v;
        match peaks.as_slice() {
            [first, second, ..] if second.1 >= ratio * first.1 && d2(second.0) < d2(first.0) => second.0,
            [first, ..] => first.0,
            [] => (0, 0),
        }
    }

    /// Belief-power weighted mean over a square of side `area` around `peak`.
    pub fn area_mean(&self, peak: (i64, i64), area: usize, beta: f64) -> Vector2<f64> {
        let w = self.half_width as i64;
        let h = (area / 2) as i64;
        let (mut s, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for v in (peak.1 - h).max(-w)..=(peak.1 + h).min(w) {
            for u in (peak.0 - h).max(-w)..=(peak.0 + h).min(w) {
                let p = self.get(u, v).powf(beta);
                s += p;
                sx += p * u as f64;
                sy += p * v as f64;
            }
        }
        if s > 0.0 {
            Vector2::new(sx / s, sy / s) * self.resolution
        } else {
            Vector2::new(peak.0 as f64, peak.1 as f64) * self.resolution
        }
    }

    /// Belief-power weighted scatter of all offsets about `about` (metres).
    pub fn scatter(&self, about: &Vector2<f64>, beta: f64) -> Matrix2<f64> {
        let mut s = 0.0;
        let mut c = Matrix2::zeros();
        for (k, p) in self.probs.iter().enumerate() {
            let (u, v) = self.offset(k);
            let q = p.powf(beta);
            let d = Vector2::new(u as f64, v as f64) * self.resolution - about;
            s += q;
            c += d * d.transpose() * q;
        }
        c / s
    }

    /// Plain-text float grid: a header line `side resolution cx cy`, then one
    /// row per north index from south to north.
    pub fn write_grid<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.side();
        writeln!(out, "{} {} {} {}", n, self.resolution, self.center.0, self.center.1)?;
        for row in self.probs.chunks(n) {
            let line: Vec<String> = row.iter().map(|p| format!("{p:e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Belief-power weighted per-axis variances about the center of mass.
pub fn axis_variances(probs: &[f64], half_width: usize, resolution: f64, beta: f64) -> (f64, f64) {
    let n = 2 * half_width + 1;
    let w = half_width as f64;
    let (mut s, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (k, p) in probs.iter().enumerate() {
        let q = p.powf(beta);
        s += q;
        sx += q * ((k % n) as f64 - w);
        sy += q * ((k / n) as f64 - w);
    }
    let (mx, my) = (sx / s, sy / s);
    let (mut vx, mut vy) = (0.0, 0.0);
    for (k, p) in probs.iter().enumerate() {
        let q = p.powf(beta);
        vx += q * ((k % n) as f64 - w - mx).powi(2);
        vy += q * ((k / n) as f64 - w - my).powi(2);
    }
    let r2 = resolution * resolution;
    (vx / s * r2, vy / s * r2)
}

/// KL(p || q) for normalized arrays; zero-probability `q` cells are floored.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b.max(f64::MIN_POSITIVE)).ln())
        .sum()
}

fn gaussian_blur(p: &[f64], n: usize, sigma_cells: f64) -> Vec<f64> {
    let kernel: Vec<f64> = (0..n)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma_cells * sigma_cells)).exp())
        .collect();
    let mut tmp = vec![0.0; n * n];
    for row in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += p[row * n + i] * kernel[x.abs_diff(i)];
            }
            tmp[row * n + x] = acc;
        }
    }
    let mut out = vec![0.0; n * n];
    for col in 0..n {
        for y in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += tmp[j * n + col] * kernel[y.abs_diff(j)];
            }
            out[y * n + col] = acc;
        }
    }
    out
}

fn floor_eigenvalues(c: &Matrix2<f64>, floor: f64) -> Matrix2<f64> {
    let sym = (c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    let out = eig.eigenvectors * Matrix2::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (out + out.transpose()) * 0.5
}
