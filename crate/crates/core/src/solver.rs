//! End-to-end interpolation: solve the saddle LSE (densely or through the
//! H-Cholesky factor of the augmented Lagrangian), evaluate the interpolant,
//! and report energy and residual diagnostics.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{augmented_lagrangian, SaddleSystem};
use crate::clustering::{build_block_partition, build_cluster_tree};
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::hmatrix::{HMatrix, Truncation};
use crate::kernels::{KernelConfig, KernelSpec};
use crate::oracle::{dense_inverse, Precision};
use crate::polybasis::PolyBasis;

/// How to solve the LSE.
#[derive(Debug, Clone, Copy)]
pub enum SolveMethod {
    /// Partial-pivoted LU on the full saddle matrix.
    Dense(Precision),
    /// H-Cholesky of the augmented Lagrangian `A + gamma B^T B`.
    HCholesky {
        gamma: f64,
        trunc: Truncation,
        eta: f64,
        leaf_size: usize,
    },
}

/// Coefficients of `u = sum_n c_n phi(. - x_n) + sum_alpha d_alpha pi_alpha`.
#[derive(Debug, Clone)]
pub struct Interpolant<'a> {
    cloud: &'a PointCloud,
    spec: &'a KernelSpec,
    basis: &'a PolyBasis,
    pub c: DVector<f64>,
    pub d_coeffs: DVector<f64>,
}

/// Residuals of a computed interpolant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveResiduals {
    /// `max_n |u(x_n) - f_n|`
    pub interpolation: f64,
    /// `||B c||_2`
    pub constraint: f64,
}

/// Solves the LSE `[[A, B^T], [B, 0]] (c; d) = (f; 0)`.
///
/// The H-Cholesky path factors the SPD augmented Lagrangian, eliminates `d`
/// through the small Schur complement `B K^{-1} B^T`, and finally recovers
/// `d` by least squares on the first-row residual restricted to
/// `range(B^T)`.
pub fn solve<'a>(
    cloud: &'a PointCloud,
    spec: &'a KernelSpec,
    basis: &'a PolyBasis,
    sys: &SaddleSystem,
    f_values: &DVector<f64>,
    method: SolveMethod,
) -> Result<Interpolant<'a>> {
    let n = sys.n();
    let n_min = sys.n_min();
    if f_values.len() != n {
        return Err(Error::DimMismatch {
            expected: n,
            got: f_values.len(),
        });
    }
    let (c, d_coeffs) = match method {
        SolveMethod::Dense(precision) => {
            let inv = dense_inverse(sys, precision)?;
            let c = &inv.s11 * f_values;
            let d = &inv.s21 * f_values;
            (c, d)
        }
        SolveMethod::HCholesky {
            gamma,
            trunc,
            eta,
            leaf_size,
        } => {
            let k = augmented_lagrangian(sys, gamma)?;
            let tree = build_cluster_tree(cloud, leaf_size)?;
            let partition = Arc::new(build_block_partition(tree, eta)?);
            let hk = HMatrix::compress(&k, partition, trunc)?;
            let factor = hk.hcholesky(trunc)?;
            let g = factor.apply_inverse(f_values)?;
            if n_min == 0 {
                (g, DVector::zeros(0))
            } else {
                // Schur complement over the polynomial multipliers
                let bt = sys.b.transpose();
                let mut w = DMatrix::zeros(n, n_min);
                for j in 0..n_min {
                    let col = factor.apply_inverse(&bt.column(j).into_owned())?;
                    w.column_mut(j).copy_from(&col);
                }
                let schur = &sys.b * &w;
                let rhs = &sys.b * &g;
                let d0 = schur.lu().solve(&rhs).ok_or_else(|| {
                    Error::SingularMatrix("Schur complement of the multipliers".into())
                })?;
                let c = &g - &w * &d0;
                // least squares for d on the first-row residual
                let rho = f_values - &sys.a * &c;
                let gram = &sys.b * &bt;
                let d = gram.lu().solve(&(&sys.b * &rho)).ok_or_else(|| {
                    Error::SingularMatrix("polynomial Gram matrix".into())
                })?;
                (c, d)
            }
        }
    };
    Ok(Interpolant {
        cloud,
        spec,
        basis,
        c,
        d_coeffs,
    })
}

impl Interpolant<'_> {
    /// `u(x) = sum_n c_n phi(x - x_n) + sum_alpha d_alpha pi_alpha(x)`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let d = self.cloud.dim();
        let mut diff = vec![0.0; d];
        let mut acc = 0.0;
        for (n, p) in self.cloud.points().iter().enumerate() {
            for (a, dst) in diff.iter_mut().enumerate() {
                *dst = x[a] - p.coords[a];
            }
            acc += self.c[n] * self.spec.eval(&diff);
        }
        let poly = self.basis.eval(x);
        for (alpha, v) in poly.iter().enumerate() {
            acc += self.d_coeffs[alpha] * v;
        }
        acc
    }

    pub fn residuals(&self, sys: &SaddleSystem, f_values: &DVector<f64>) -> SolveResiduals {
        let pred = &sys.a * &self.c + sys.b.transpose() * &self.d_coeffs;
        let interpolation = (pred - f_values).amax();
        let constraint = (&sys.b * &self.c).norm();
        SolveResiduals {
            interpolation,
            constraint,
        }
    }
}

/// `c^T A c = |u|_a^2`. Errors when the constraint `B c = 0` is violated
/// beyond `1e-8 ||c||`, because the energy identity only holds on the
/// constraint set. Near-zero coefficient vectors (polynomial data) pass on
/// an absolute floor at the scale of `B`.
pub fn energy(u: &Interpolant<'_>, sys: &SaddleSystem) -> Result<f64> {
    let ok = if sys.n_min() == 0 {
        true
    } else {
        let violation = (&sys.b * &u.c).norm();
        violation <= 1e-8 * u.c.norm() || violation <= 1e-12 * sys.b.norm()
    };
    if !ok {
        return Err(Error::ConstraintViolated);
    }
    Ok((&u.c).dot(&(&sys.a * &u.c)))
}

/// Scattered data file: header `d N`, then `N` lines `x_1 .. x_d f`.
pub fn read_data_file(path: &Path) -> Result<(PointCloud, DVector<f64>)> {
    let text = std::fs::read_to_string(path)?;
    read_data_text(&text)
}

pub fn read_data_text(text: &str) -> Result<(PointCloud, DVector<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty data file".into()))?;
    let mut it = header.split_whitespace();
    let dim: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse("bad data header".into()))?;
    let n: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse("bad data header".into()))?;
    let mut points = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for line in lines.take(n) {
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad number {t:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if nums.len() != dim + 1 {
            return Err(Error::Parse(format!(
                "expected {} numbers per line, got {}",
                dim + 1,
                nums.len()
            )));
        }
        points.push(Point::new(nums[..dim].to_vec()));
        values.push(nums[dim]);
    }
    if points.len() != n {
        return Err(Error::Parse(format!(
            "expected {n} rows, found {}",
            points.len()
        )));
    }
    Ok((PointCloud::new(dim, points)?, DVector::from_vec(values)))
}

pub fn write_data_file(path: &Path, cloud: &PointCloud, values: &DVector<f64>) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", cloud.dim(), cloud.len());
    for (p, v) in cloud.points().iter().zip(values.iter()) {
        let coords: Vec<String> = p.coords.iter().map(|c| format!("{c:.16e}")).collect();
        let _ = writeln!(out, "{} {v:.16e}", coords.join(" "));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// JSON export of a computed interpolant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpolantExport {
    pub c: Vec<f64>,
    pub d_coeffs: Vec<f64>,
    pub kernel: KernelConfig,
    pub node_file_hash: String,
}

impl InterpolantExport {
    pub fn new(u: &Interpolant<'_>, node_file_hash: String) -> Self {
        InterpolantExport {
            c: u.c.as_slice().to_vec(),
            d_coeffs: u.d_coeffs.as_slice().to_vec(),
            kernel: KernelConfig::from_spec(u.spec),
            node_file_hash,
        }
    }
}
