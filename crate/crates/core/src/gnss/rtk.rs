use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::lambda::{integer_search, IntegerSolution};
use super::lsq::{self, Lsq, ObsRow, PositionPrior};
use super::{sd_geometry, GnssEpoch, RtkConfig};
use crate::error::{Error, Result};
use crate::sins::earth::{ecef_to_geodetic, enu_to_ecef_rotation};

/// INS position prediction used as a virtual observation, ECEF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsPrior {
    pub position: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

impl InsPrior {
    /// Prior from an ENU covariance at the predicted position.
    pub fn from_enu(position: Vector3<f64>, cov_enu: &Matrix3<f64>) -> Self {
        let g = ecef_to_geodetic(&position);
        let r = enu_to_ecef_rotation(g.x, g.y);
        Self {
            position,
            covariance: r * cov_enu * r.transpose(),
        }
    }

    fn as_prior(&self) -> Result<PositionPrior> {
        let info = self.covariance.try_inverse().ok_or(Error::IllConditioned)?;
        Ok(PositionPrior {
            target: self.position,
            info: (info + info.transpose()) * 0.5,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FloatSolution {
    pub position: Vector3<f64>,
    /// Position minus prior, m.
    pub dx: Vector3<f64>,
    /// Receiver clock difference times c, m.
    pub clock: f64,
    /// SD ambiguities in epoch order, cycles.
    pub ambiguities: DVector<f64>,
    /// `(B'PB)^-1` over `[dx, c·dt, N]`.
    pub cofactor: DMatrix<f64>,
    pub sigma0_sq: f64,
    pub dof: isize,
    /// Position block of `cofactor * sigma0_sq`, ECEF.
    pub position_covariance: Matrix3<f64>,
    pub design: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub misclosure: DVector<f64>,
    pub residuals: DVector<f64>,
}

impl FloatSolution {
    fn from_lsq(s: Lsq, prior: Vector3<f64>, n_amb: usize) -> Self {
        let sigma0_sq = s.sigma0_sq();
        let position_covariance: Matrix3<f64> = s.cofactor.fixed_view::<3, 3>(0, 0).into_owned() * sigma0_sq;
        FloatSolution {
            position: s.position,
            dx: s.position - prior,
            clock: s.params[3],
            ambiguities: s.params.rows(4, n_amb).into_owned(),
            cofactor: s.cofactor.clone(),
            sigma0_sq,
            dof: s.dof(),
            position_covariance,
            design: s.design,
            weights: s.weights,
            misclosure: s.misclosure,
            residuals: s.residuals,
        }
    }

    pub fn ambiguity_cofactor(&self) -> DMatrix<f64> {
        let n = self.ambiguities.len();
        self.cofactor.view((4, 4), (n, n)).into_owned()
    }
}

fn float_rows<'a>(epoch: &'a GnssEpoch, cfg: &RtkConfig) -> impl Fn(&Vector3<f64>) -> Vec<ObsRow> + 'a {
    let cfg = *cfg;
    move |x: &Vector3<f64>| {
        let mut rows = Vec::with_capacity(2 * epoch.sats.len());
        for (i, s) in epoch.sats.iter().enumerate() {
            let (dr, los) = sd_geometry(&s.pos, x, &epoch.base);
            rows.push(ObsRow {
                los,
                omc: s.sd_range - dr,
                weight: cfg.weight(s.elevation, false),
                amb: None,
            });
            rows.push(ObsRow {
                los,
                omc: s.sd_phase - dr,
                weight: cfg.weight(s.elevation, true),
                amb: Some((i, -s.wavelength)),
            });
        }
        rows
    }
}

fn float_impl(
    epoch: &GnssEpoch,
    prior: Vector3<f64>,
    ins: Option<&InsPrior>,
    cfg: &RtkConfig,
) -> Result<FloatSolution> {
    epoch.validate()?;
    if ins.is_none() && epoch.sats.len() < 4 {
        return Err(Error::GeometryDeficient(format!("{} satellites", epoch.sats.len())));
    }
    let pp = ins.map(|p| p.as_prior()).transpose()?;
    let n = epoch.sats.len();
    let s = lsq::solve(prior, float_rows(epoch, cfg), n, pp.as_ref(), cfg.max_iterations)?;
    Ok(FloatSolution::from_lsq(s, prior, n))
}

/// Weighted least squares over position, clock and SD float ambiguities.
pub fn float_solution(epoch: &GnssEpoch, prior: &Vector3<f64>, cfg: &RtkConfig) -> Result<FloatSolution> {
    float_impl(epoch, *prior, None, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdAmbiguities {
    /// Index of the reference satellite in the epoch.
    pub reference: usize,
    /// Epoch indices of the other satellites, in DD order.
    pub others: Vec<usize>,
    pub values: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// `D N` and `D Q D'` with rows `e_i - e_ref`.
pub fn sd_to_dd(n: &DVector<f64>, q: &DMatrix<f64>, reference: usize) -> Result<DdAmbiguities> {
    let k = n.len();
    if k < 2 || reference >= k || q.nrows() != k || q.ncols() != k {
        return Err(Error::Dimension(format!(
            "{k} ambiguities, reference {reference}, Q {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let others: Vec<usize> = (0..k).filter(|&i| i != reference).collect();
    let mut d = DMatrix::zeros(k - 1, k);
    for (r, &i) in others.iter().enumerate() {
        d[(r, i)] = 1.0;
        d[(r, reference)] = -1.0;
    }
    let cov = &d * q * d.transpose();
    Ok(DdAmbiguities {
        reference,
        others,
        values: &d * n,
        covariance: (&cov + cov.transpose()) * 0.5,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityResolution {
    /// Absent when the search hit its cap.
    pub search: Option<IntegerSolution>,
    pub ratio: f64,
    pub fixed: bool,
}

impl AmbiguityResolution {
    pub fn integers(&self) -> Option<&DVector<i64>> {
        if self.fixed {
            self.search.as_ref().map(|s| s.best())
        } else {
            None
        }
    }
}

pub fn resolve_ambiguities(a: &DVector<f64>, q: &DMatrix<f64>, cfg: &RtkConfig) -> Result<AmbiguityResolution> {
    match integer_search(a, q, 2, cfg.search_cap) {
        Ok(s) => {
            let ratio = s.ratio();
            Ok(AmbiguityResolution {
                fixed: s.candidates.len() == 2 && ratio >= cfg.ratio_threshold,
                search: Some(s),
                ratio,
            })
        }
        Err(Error::Infeasible(msg)) => {
            log::debug!("ambiguity search abandoned: {msg}");
            Ok(AmbiguityResolution {
                search: None,
                ratio: 0.0,
                fixed: false,
            })
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ambiguities {
    Fixed(Vec<i64>),
    Float(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtkSolution {
    pub t: f64,
    pub position_ecef: Vector3<f64>,
    /// (lambda, L, a).
    pub position: Vector3<f64>,
    pub dx: Vector3<f64>,
    pub fixed: bool,
    /// DD ambiguities against `reference`, ordered as `others`.
    pub ambiguities: Ambiguities,
    pub reference: u32,
    pub others: Vec<u32>,
    pub ratio: f64,
    /// Solution covariance, ECEF m^2; its diagonal is the per-axis variance.
    pub covariance: Matrix3<f64>,
    pub sigma0_sq: f64,
    pub dof: isize,
}

impl RtkSolution {
    pub fn variance(&self) -> Vector3<f64> {
        self.covariance.diagonal()
    }

    pub fn covariance_enu(&self) -> Matrix3<f64> {
        let r = enu_to_ecef_rotation(self.position.x, self.position.y);
        r.transpose() * self.covariance * r
    }
}

fn fixed_rows<'a>(
    epoch: &'a GnssEpoch,
    dd: &'a DdAmbiguities,
    ints: &'a DVector<i64>,
    cfg: &RtkConfig,
) -> impl Fn(&Vector3<f64>) -> Vec<ObsRow> + 'a {
    let cfg = *cfg;
    let mut offset = vec![0i64; epoch.sats.len()];
    for (r, &i) in dd.others.iter().enumerate() {
        offset[i] = ints[r];
    }
    move |x: &Vector3<f64>| {
        let mut rows = Vec::with_capacity(2 * epoch.sats.len());
        for (i, s) in epoch.sats.iter().enumerate() {
            let (dr, los) = sd_geometry(&s.pos, x, &epoch.base);
            rows.push(ObsRow {
                los,
                omc: s.sd_range - dr,
                weight: cfg.weight(s.elevation, false),
                amb: None,
            });
            rows.push(ObsRow {
                los,
                omc: s.sd_phase - dr + s.wavelength * offset[i] as f64,
                weight: cfg.weight(s.elevation, true),
                amb: Some((0, -s.wavelength)),
            });
        }
        rows
    }
}

/// Float solution, DD ambiguity resolution and, on success, the fixed
/// solution with `[dx, c·dt, N_ref]` as unknowns.
pub fn rtk_solution(
    epoch: &GnssEpoch,
    prior: &Vector3<f64>,
    ins: Option<&InsPrior>,
    cfg: &RtkConfig,
) -> Result<RtkSolution> {
    let fl = float_impl(epoch, *prior, ins, cfg)?;
    let ids: Vec<u32> = epoch.sats.iter().map(|s| s.id).collect();
    let float_out = |fl: &FloatSolution, dd: Option<&DdAmbiguities>, ratio: f64| {
        let (reference, others, amb) = match dd {
            Some(d) => (
                ids[d.reference],
                d.others.iter().map(|&i| ids[i]).collect(),
                d.values.iter().cloned().collect(),
            ),
            None => (ids.first().copied().unwrap_or(0), Vec::new(), Vec::new()),
        };
        RtkSolution {
            t: epoch.t,
            position_ecef: fl.position,
            position: ecef_to_geodetic(&fl.position),
            dx: fl.dx,
            fixed: false,
            ambiguities: Ambiguities::Float(amb),
            reference,
            others,
            ratio,
            covariance: fl.position_covariance,
            sigma0_sq: fl.sigma0_sq,
            dof: fl.dof,
        }
    };
    if epoch.sats.len() < 2 {
        return Ok(float_out(&fl, None, 0.0));
    }
    let reference = epoch.reference_index().expect("non-empty");
    let dd = sd_to_dd(&fl.ambiguities, &fl.ambiguity_cofactor(), reference)?;
    let res = resolve_ambiguities(&dd.values, &dd.covariance, cfg)?;
    let Some(ints) = res.integers() else {
        return Ok(float_out(&fl, Some(&dd), res.ratio));
    };
    // with enough satellites the INS only narrows the search; keeping it
    // out of the fixed solve avoids counting it twice downstream
    let pp = match ins {
        Some(p) if epoch.sats.len() < 4 => Some(p.as_prior()?),
        _ => None,
    };
    let s = lsq::solve(
        fl.position,
        fixed_rows(epoch, &dd, ints, cfg),
        1,
        pp.as_ref(),
        cfg.max_iterations,
    )?;
    let sigma0_sq = s.sigma0_sq();
    let cov: Matrix3<f64> = s.cofactor.fixed_view::<3, 3>(0, 0).into_owned() * sigma0_sq;
    Ok(RtkSolution {
        t: epoch.t,
        position_ecef: s.position,
        position: ecef_to_geodetic(&s.position),
        dx: s.position - prior,
        fixed: true,
        ambiguities: Ambiguities::Fixed(ints.iter().cloned().collect()),
        reference: ids[reference],
        others: dd.others.iter().map(|&i| ids[i]).collect(),
        ratio: res.ratio,
        covariance: (cov + cov.transpose()) * 0.5,
        sigma0_sq,
        dof: s.dof(),
    })
}

/// RTK with the INS prediction as a virtual position observation; the
/// prediction is also the linearization point.
pub fn ins_aided_solution(epoch: &GnssEpoch, ins: &InsPrior, cfg: &RtkConfig) -> Result<RtkSolution> {
    rtk_solution(epoch, &ins.position, Some(ins), cfg)
}

/// Float solution with the INS virtual observation, for inspection.
pub fn ins_aided_float(epoch: &GnssEpoch, ins: &InsPrior, cfg: &RtkConfig) -> Result<FloatSolution> {
    float_impl(epoch, ins.position, Some(ins), cfg)
}
