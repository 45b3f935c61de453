//! Integer least squares: LtDL factorization, decorrelating reduction and a
//! shrinking depth-first search keeping the best two candidates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IntegerSolution {
    /// Candidates, best first.
    pub candidates: Vec<DVector<i64>>,
    /// Squared distances `(a - z)' Q^-1 (a - z)`, ascending.
    pub distances: Vec<f64>,
}

impl IntegerSolution {
    pub fn best(&self) -> &DVector<i64> {
        &self.candidates[0]
    }

    /// Second-best over best squared distance.
    pub fn ratio(&self) -> f64 {
        match self.distances.as_slice() {
            [a, b, ..] if *a > 0.0 => b / a,
            [_, _, ..] => f64::INFINITY,
            _ => 0.0,
        }
    }
}

fn round(x: f64) -> f64 {
    (x + 0.5).floor()
}

fn sgn(x: f64) -> f64 {
    if x <= 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `Q = L' diag(D) L` with unit lower-triangular `L`.
fn ltdl(q: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = q.nrows();
    let mut a = q.clone();
    let mut l = DMatrix::zeros(n, n);
    let mut d = DVector::zeros(n);
    for i in (0..n).rev() {
        d[i] = a[(i, i)];
        if d[i] <= 0.0 {
            return Err(Error::IllConditioned);
        }
        let s = d[i].sqrt();
        for j in 0..=i {
            l[(i, j)] = a[(i, j)] / s;
        }
        for j in 0..i {
            for k in 0..=j {
                a[(j, k)] -= l[(i, k)] * l[(i, j)];
            }
        }
        let lii = l[(i, i)];
        for j in 0..=i {
            l[(i, j)] /= lii;
        }
    }
    Ok((l, d))
}

fn gauss(l: &mut DMatrix<f64>, z: &mut DMatrix<f64>, i: usize, j: usize) {
    let n = l.nrows();
    let mu = round(l[(i, j)]);
    if mu != 0.0 {
        for k in i..n {
            l[(k, j)] -= mu * l[(k, i)];
        }
        for k in 0..n {
            z[(k, j)] -= mu * z[(k, i)];
        }
    }
}

fn perm(l: &mut DMatrix<f64>, d: &mut DVector<f64>, z: &mut DMatrix<f64>, j: usize, del: f64) {
    let n = l.nrows();
    let eta = d[j] / del;
    let lam = d[j + 1] * l[(j + 1, j)] / del;
    d[j] = eta * d[j + 1];
    d[j + 1] = del;
    for k in 0..j {
        let (a0, a1) = (l[(j, k)], l[(j + 1, k)]);
        l[(j, k)] = -l[(j + 1, j)] * a0 + a1;
        l[(j + 1, k)] = eta * a0 + lam * a1;
    }
    l[(j + 1, j)] = lam;
    for k in j + 2..n {
        l.swap((k, j), (k, j + 1));
    }
    for k in 0..n {
        z.swap((k, j), (k, j + 1));
    }
}

fn reduction(l: &mut DMatrix<f64>, d: &mut DVector<f64>, z: &mut DMatrix<f64>) {
    let n = l.nrows();
    if n < 2 {
        return;
    }
    let (mut j, mut k) = (n as isize - 2, n as isize - 2);
    while j >= 0 {
        let ju = j as usize;
        if j <= k {
            for i in ju + 1..n {
                gauss(l, z, i, ju);
            }
        }
        let del = d[ju] + l[(ju + 1, ju)].powi(2) * d[ju + 1];
        if del + 1e-6 < d[ju + 1] {
            perm(l, d, z, ju, del);
            k = j;
            j = n as isize - 2;
        } else {
            j -= 1;
        }
    }
}

fn search(
    l: &DMatrix<f64>,
    d: &DVector<f64>,
    zs: &DVector<f64>,
    m: usize,
    cap: usize,
) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    let n = l.nrows();
    let mut s_mat = DMatrix::<f64>::zeros(n, n);
    let mut dist = vec![0.0; n];
    let mut zb = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut step = vec![0.0; n];
    let mut cands: Vec<DVector<f64>> = Vec::with_capacity(m);
    let mut s: Vec<f64> = Vec::with_capacity(m);
    let mut imax = 0usize;
    let mut maxdist = f64::INFINITY;

    let mut k = n - 1;
    zb[k] = zs[k];
    z[k] = round(zb[k]);
    let mut y = zb[k] - z[k];
    step[k] = sgn(y);
    let mut count = 0usize;
    loop {
        count += 1;
        if count > cap {
            return Err(Error::Infeasible(format!("integer search exceeded {cap} steps")));
        }
        let newdist = dist[k] + y * y / d[k];
        if newdist < maxdist {
            if k != 0 {
                k -= 1;
                dist[k] = newdist;
                for i in 0..=k {
                    s_mat[(k, i)] = s_mat[(k + 1, i)] + (z[k + 1] - zb[k + 1]) * l[(k + 1, i)];
                }
                zb[k] = zs[k] + s_mat[(k, k)];
                z[k] = round(zb[k]);
                y = zb[k] - z[k];
                step[k] = sgn(y);
            } else {
                if cands.len() < m {
                    if cands.is_empty() || newdist > s[imax] {
                        imax = cands.len();
                    }
                    cands.push(DVector::from_column_slice(&z));
                    s.push(newdist);
                    if cands.len() == m {
                        maxdist = s[imax];
                    }
                } else if newdist < s[imax] {
                    cands[imax] = DVector::from_column_slice(&z);
                    s[imax] = newdist;
                    imax = (0..m).fold(0, |b, i| if s[b] < s[i] { i } else { b });
                    maxdist = s[imax];
                }
                z[0] += step[0];
                y = zb[0] - z[0];
                step[0] = -step[0] - sgn(step[0]);
            }
        } else {
            if k == n - 1 {
                break;
            }
            k += 1;
            z[k] += step[k];
            y = zb[k] - z[k];
            step[k] = -step[k] - sgn(step[k]);
        }
    }
    let mut idx: Vec<usize> = (0..cands.len()).collect();
    idx.sort_by(|a, b| s[*a].total_cmp(&s[*b]));
    Ok((
        idx.iter().map(|&i| cands[i].clone()).collect(),
        idx.iter().map(|&i| s[i]).collect(),
    ))
}

/// Best `m` integer vectors minimizing `(a - z)' Q^-1 (a - z)`.
pub fn integer_search(a: &DVector<f64>, q: &DMatrix<f64>, m: usize, cap: usize) -> Result<IntegerSolution> {
    let n = a.len();
    if n == 0 || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension(format!(
            "ambiguity vector {n} vs Q {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let (mut l, mut d) = ltdl(q)?;
    let mut z = DMatrix::<f64>::identity(n, n);
    reduction(&mut l, &mut d, &mut z);
    let zs = z.transpose() * a;
    let (cands, dist) = search(&l, &d, &zs, m, cap)?;
    // back to the original space: a = Z^-T z
    let zt_lu = z.transpose().lu();
    let candidates = cands
        .iter()
        .map(|c| {
            let f = zt_lu.solve(c).expect("Z is unimodular");
            f.map(|v| v.round() as i64)
        })
        .collect();
    Ok(IntegerSolution {
        candidates,
        distances: dist,
    })
}
