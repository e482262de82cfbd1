//! Verified dense SVD used for blockwise compression and spectra.
//!
//! The Golub-Kahan implementation in nalgebra can return an inconsistent
//! factorization on exactly rank-deficient blocks, which do occur here
//! (zero blocks, cancelled Schur updates, synthetic low-rank inputs). Every
//! factorization is therefore checked against its reconstruction residual;
//! on failure we fall back to a one-sided Jacobi iteration, which is slower
//! but unconditionally robust.

use nalgebra::DMatrix;

/// Factors `A = U diag(sigmas) V^T` with orthonormal `U: m x k`,
/// `V: n x k`, `k = min(m, n)` and `sigmas` sorted in descending order.
pub(crate) struct SvdFactors {
    pub u: DMatrix<f64>,
    pub sigmas: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    fn residual(&self, a: &DMatrix<f64>) -> f64 {
        let sig = DMatrix::from_fn(self.sigmas.len(), self.sigmas.len(), |r, c| {
            if r == c {
                self.sigmas[r]
            } else {
                0.0
            }
        });
        (&self.u * sig * self.v.transpose() - a).norm()
    }
}

/// Verified SVD; `None` only if both the direct path and the Jacobi
/// fallback fail their residual check.
pub(crate) fn svd_factor(a: &DMatrix<f64>) -> Option<SvdFactors> {
    let scale = a.norm();
    if scale == 0.0 || a.nrows() == 0 || a.ncols() == 0 {
        let k = a.nrows().min(a.ncols());
        return Some(SvdFactors {
            u: DMatrix::zeros(a.nrows(), k),
            sigmas: vec![0.0; k],
            v: DMatrix::zeros(a.ncols(), k),
        });
    }
    if let Some(f) = golub_kahan(a) {
        if f.residual(a) <= 1e-12 * scale {
            return Some(f);
        }
    }
    let f = jacobi_svd(a);
    if f.residual(a) <= 1e-10 * scale {
        Some(f)
    } else {
        None
    }
}

fn golub_kahan(a: &DMatrix<f64>) -> Option<SvdFactors> {
    let svd = a
        .clone()
        .try_svd(true, true, f64::EPSILON * 5.0, 100_000)?;
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| {
        svd.singular_values[y]
            .partial_cmp(&svd.singular_values[x])
            .unwrap()
    });
    let k = order.len();
    let mut uu = DMatrix::zeros(a.nrows(), k);
    let mut vv = DMatrix::zeros(a.ncols(), k);
    let mut sigmas = Vec::with_capacity(k);
    for (col, &src) in order.iter().enumerate() {
        sigmas.push(svd.singular_values[src]);
        uu.column_mut(col).copy_from(&u.column(src));
        vv.column_mut(col).copy_from(&v_t.row(src).transpose());
    }
    Some(SvdFactors {
        u: uu,
        sigmas,
        v: vv,
    })
}

/// One-sided Jacobi SVD: orthogonalizes the columns of the (tall) working
/// matrix by plane rotations; unconditionally convergent.
fn jacobi_svd(a: &DMatrix<f64>) -> SvdFactors {
    let transpose = a.nrows() < a.ncols();
    let mut w = if transpose { a.transpose() } else { a.clone() };
    let n = w.ncols();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let col_p = w.column(p);
                let col_q = w.column(q);
                let app = col_p.dot(&col_p);
                let aqq = col_q.dot(&col_q);
                let apq = col_p.dot(&col_q);
                if apq.abs() <= 1e-15 * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..w.nrows() {
                    let wp = w[(i, p)];
                    let wq = w[(i, q)];
                    w[(i, p)] = c * wp - s * wq;
                    w[(i, q)] = s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut entries: Vec<(f64, usize)> = (0..n).map(|j| (w.column(j).norm(), j)).collect();
    entries.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    let mut u = DMatrix::zeros(w.nrows(), n);
    let mut vv = DMatrix::zeros(n, n);
    let mut sigmas = Vec::with_capacity(n);
    for (col, &(sigma, src)) in entries.iter().enumerate() {
        sigmas.push(sigma);
        if sigma > 0.0 {
            u.column_mut(col).copy_from(&(w.column(src) / sigma));
        }
        vv.column_mut(col).copy_from(&v.column(src));
    }
    if transpose {
        SvdFactors {
            u: vv,
            sigmas,
            v: u,
        }
    } else {
        SvdFactors {
            u,
            sigmas,
            v: vv,
        }
    }
}
