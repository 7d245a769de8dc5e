//! Column-pivoted Householder QR used for every least-squares solve.
//!
//! Columns are equilibrated by caller-supplied reference norms before
//! pivoting, so the rank test `|R_kk| <= tol` is relative to each column's
//! own scale. Passing the pre-absorption norms makes a regressor that fixed
//! effects wipe out register as collinear instead of as a tiny column.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const PIVOT_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct PivotedQr {
    /// Householder vectors below the diagonal, R on and above it.
    qr: DMatrix<f64>,
    tau: Vec<f64>,
    /// `perm[k]` is the original index of the column in position `k`.
    perm: Vec<usize>,
    scale: Vec<f64>,
}

/// Euclidean norm of every column.
pub fn column_norms(x: &DMatrix<f64>) -> Vec<f64> {
    x.column_iter().map(|c| c.norm()).collect()
}

impl PivotedQr {
    /// Factorizes `x`; errors naming the first column found to be a linear
    /// combination of the others.
    pub fn new(x: &DMatrix<f64>, names: &[String], ref_norms: Option<&[f64]>, stage: &str) -> Result<Self> {
        let (n, p) = x.shape();
        debug_assert_eq!(names.len(), p);
        let deficient = |j: usize| Error::RankDeficient {
            stage: stage.to_string(),
            column: names[j].clone(),
        };
        let norms = column_norms(x);
        let scale: Vec<f64> = match ref_norms {
            Some(r) => r.iter().zip(&norms).map(|(r, a)| r.max(*a)).collect(),
            None => norms.clone(),
        };
        if let Some(j) = scale.iter().position(|s| *s == 0.0 || !s.is_finite()) {
            return Err(deficient(j));
        }
        let mut qr = x.clone();
        for (j, s) in scale.iter().enumerate() {
            qr.column_mut(j).scale_mut(1.0 / s);
        }
        let mut perm: Vec<usize> = (0..p).collect();
        let mut tau = Vec::with_capacity(p);
        for k in 0..p {
            if k >= n {
                return Err(deficient(perm[k]));
            }
            let (best, best_norm) = (k..p)
                .map(|j| (j, qr.view((k, j), (n - k, 1)).norm()))
                .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
            if best_norm <= PIVOT_TOL {
                return Err(deficient(perm[best]));
            }
            if best != k {
                qr.swap_columns(k, best);
                perm.swap(k, best);
            }
            let x0 = qr[(k, k)];
            let alpha = if x0 >= 0.0 { -best_norm } else { best_norm };
            // v = x - alpha e1, scaled so v[0] = 1
            let v0 = x0 - alpha;
            for i in k + 1..n {
                qr[(i, k)] /= v0;
            }
            let t = (alpha - x0) / alpha;
            qr[(k, k)] = alpha;
            for j in k + 1..p {
                let mut dot = qr[(k, j)];
                for i in k + 1..n {
                    dot += qr[(i, k)] * qr[(i, j)];
                }
                let f = t * dot;
                qr[(k, j)] -= f;
                for i in k + 1..n {
                    let vi = qr[(i, k)];
                    qr[(i, j)] -= f * vi;
                }
            }
            tau.push(t);
        }
        Ok(PivotedQr { qr, tau, perm, scale })
    }

    pub fn ncols(&self) -> usize {
        self.perm.len()
    }

    fn apply_qt(&self, y: &mut DVector<f64>) {
        let n = self.qr.nrows();
        for (k, t) in self.tau.iter().enumerate() {
            let mut dot = y[k];
            for i in k + 1..n {
                dot += self.qr[(i, k)] * y[i];
            }
            let f = t * dot;
            y[k] -= f;
            for i in k + 1..n {
                y[i] -= f * self.qr[(i, k)];
            }
        }
    }

    /// Least-squares coefficients for `x b ≈ y`.
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let p = self.ncols();
        let mut qty = y.clone();
        self.apply_qt(&mut qty);
        let mut z = vec![0.0; p];
        for k in (0..p).rev() {
            let mut s = qty[k];
            for j in k + 1..p {
                s -= self.qr[(k, j)] * z[j];
            }
            z[k] = s / self.qr[(k, k)];
        }
        let mut b = DVector::zeros(p);
        for (k, &j) in self.perm.iter().enumerate() {
            b[j] = z[k] / self.scale[j];
        }
        b
    }

    /// `(X'X)^{-1}` in the original column order.
    pub fn xtx_inv(&self) -> DMatrix<f64> {
        let p = self.ncols();
        // R^{-1}, upper triangular
        let mut rinv = DMatrix::<f64>::zeros(p, p);
        for k in (0..p).rev() {
            rinv[(k, k)] = 1.0 / self.qr[(k, k)];
            for j in k + 1..p {
                let mut s = 0.0;
                for m in k + 1..=j {
                    s += self.qr[(k, m)] * rinv[(m, j)];
                }
                rinv[(k, j)] = -s / self.qr[(k, k)];
            }
        }
        let pinv = &rinv * rinv.transpose();
        let mut out = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in 0..p {
                let (ja, jb) = (self.perm[a], self.perm[b]);
                out[(ja, jb)] = pinv[(a, b)] / (self.scale[ja] * self.scale[jb]);
            }
        }
        symmetrize(&mut out);
        out
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in i + 1..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Solves `a x = b` for symmetric positive definite `a`, `None` if `a` is not
/// numerically positive definite.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let chol = a.clone().cholesky()?;
    let l = chol.l();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    // reject pivots that are rounding noise relative to the largest diagonal
    if min_pivot * min_pivot <= 1e-14 * scale {
        return None;
    }
    Some(chol.solve(b))
}
