//! Iterated weighted least squares over `[dx, c·dt, ambiguities]`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ObsRow {
    pub los: Vector3<f64>,
    /// Observed minus computed, m.
    pub omc: f64,
    pub weight: f64,
    /// Ambiguity column and its coefficient (`-λ`).
    pub amb: Option<(usize, f64)>,
}

/// Direct observation of the rover position with information matrix `info`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PositionPrior {
    pub target: Vector3<f64>,
    pub info: Matrix3<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Lsq {
    pub position: Vector3<f64>,
    /// `[dx (from the last linearization point), c·dt, ambiguities]`.
    pub params: DVector<f64>,
    pub cofactor: DMatrix<f64>,
    /// Design matrix of the SD observation rows at the last linearization point.
    pub design: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub misclosure: DVector<f64>,
    pub residuals: DVector<f64>,
    pub vtpv: f64,
    pub n_obs: usize,
    pub n_par: usize,
}

impl Lsq {
    pub fn dof(&self) -> isize {
        self.n_obs as isize - self.n_par as isize
    }

    /// A posteriori unit-weight variance, 1 when there is no redundancy.
    pub fn sigma0_sq(&self) -> f64 {
        if self.dof() > 0 {
            (self.vtpv / self.dof() as f64).max(1e-12)
        } else {
            1.0
        }
    }
}

fn check_rank(n: &DMatrix<f64>) -> Result<()> {
    let d: Vec<f64> = (0..n.nrows()).map(|i| n[(i, i)]).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::GeometryDeficient("unobservable parameter".into()));
    }
    let scaled = DMatrix::from_fn(n.nrows(), n.ncols(), |i, j| n[(i, j)] / (d[i] * d[j]).sqrt());
    let ev = scaled.symmetric_eigenvalues();
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < 1e-11 {
        return Err(Error::GeometryDeficient(format!("normal matrix eigenvalue {min:.3e}")));
    }
    Ok(())
}

pub(crate) fn solve<F>(
    x0: Vector3<f64>,
    rows_at: F,
    n_amb: usize,
    prior: Option<&PositionPrior>,
    max_iterations: usize,
) -> Result<Lsq>
where
    F: Fn(&Vector3<f64>) -> Vec<ObsRow>,
{
    let n_par = 4 + n_amb;
    let mut x = x0;
    let mut last = None;
    for _ in 0..max_iterations.max(1) {
        let rows = rows_at(&x);
        let m = rows.len();
        let n_obs = m + if prior.is_some() { 3 } else { 0 };
        if n_obs < n_par {
            return Err(Error::GeometryDeficient(format!(
                "{n_obs} observations for {n_par} parameters"
            )));
        }
        let mut a = DMatrix::zeros(m, n_par);
        let mut l = DVector::zeros(m);
        let mut w = DVector::zeros(m);
        for (k, r) in rows.iter().enumerate() {
            a[(k, 0)] = r.los.x;
            a[(k, 1)] = r.los.y;
            a[(k, 2)] = r.los.z;
            a[(k, 3)] = 1.0;
            if let Some((c, coef)) = r.amb {
                a[(k, 4 + c)] = coef;
            }
            l[k] = r.omc;
            w[k] = r.weight;
        }
        // QR of the whitened system keeps the clock/ambiguity coupling
        // from squaring the condition number.
        let extra = if prior.is_some() { 3 } else { 0 };
        let mut aw = DMatrix::zeros(m + extra, n_par);
        let mut lw = DVector::zeros(m + extra);
        for k in 0..m {
            let s = w[k].sqrt();
            for j in 0..n_par {
                aw[(k, j)] = a[(k, j)] * s;
            }
            lw[k] = l[k] * s;
        }
        let mut prior_resid = Vector3::zeros();
        if let Some(pr) = prior {
            prior_resid = pr.target - x;
            let u = pr.info.cholesky().ok_or(Error::IllConditioned)?.l().transpose();
            let rhs = u * prior_resid;
            for i in 0..3 {
                for j in 0..3 {
                    aw[(m + i, j)] = u[(i, j)];
                }
                lw[m + i] = rhs[i];
            }
        }
        let qr = aw.qr();
        let r = qr.r();
        check_rank(&(r.transpose() * &r))?;
        let qtb = qr.q().transpose() * &lw;
        let p = r.solve_upper_triangular(&qtb).ok_or(Error::IllConditioned)?;
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(n_par, n_par))
            .ok_or(Error::IllConditioned)?;
        let cofactor = &r_inv * r_inv.transpose();
        let v = &l - &a * &p;
        let mut vtpv: f64 = v.iter().zip(w.iter()).map(|(v, w)| v * v * w).sum();
        if let Some(pr) = prior {
            let vp = prior_resid - p.fixed_rows::<3>(0);
            vtpv += (vp.transpose() * pr.info * vp)[0];
        }
        let dx = Vector3::new(p[0], p[1], p[2]);
        let sol = Lsq {
            position: x + dx,
            params: p,
            cofactor,
            design: a,
            weights: w,
            misclosure: l,
            residuals: v,
            vtpv,
            n_obs,
            n_par,
        };
        x += dx;
        last = Some(sol);
        if dx.norm() < 1e-9 {
            break;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares solution"));
    }
    Ok(last.expect("at least one iteration"))
}
