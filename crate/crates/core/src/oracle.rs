//! Dense reference computations: exact inversion of the saddle matrix by
//! partial-pivoted LU (optionally with compensated double-double
//! elimination), blockwise singular spectra of the main inverse block, and
//! the computable decay bound drawn from them.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_saddle_matrix, SaddleSystem};
use crate::clustering::BlockPartition;
use crate::dd::{Dd, Scalar};
use crate::error::{Error, Result};

/// Arithmetic used by the dense elimination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Double,
    DoubleDouble,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::Double => write!(f, "double"),
            Precision::DoubleDouble => write!(f, "dd"),
        }
    }
}

/// Blocks of the inverse interpolation matrix, with the max-norm residual of
/// `[[A, B^T], [B, 0]] * S - I` as a trust diagnostic.
#[derive(Debug, Clone)]
pub struct InverseBlocks {
    pub s11: DMatrix<f64>,
    pub s12: DMatrix<f64>,
    pub s21: DMatrix<f64>,
    pub s22: DMatrix<f64>,
    pub residual: f64,
}

impl InverseBlocks {
    /// Rough one-norm condition estimate `||M||_1 ||M^{-1}||_1` of the
    /// saddle matrix, available because both factors are at hand.
    pub fn condition_estimate(&self, sys: &SaddleSystem) -> f64 {
        let m = assemble_saddle_matrix(sys);
        let n = self.s11.nrows();
        let n_min = self.s22.nrows();
        let mut inv = DMatrix::zeros(n + n_min, n + n_min);
        inv.view_mut((0, 0), (n, n)).copy_from(&self.s11);
        if n_min > 0 {
            inv.view_mut((0, n), (n, n_min)).copy_from(&self.s12);
            inv.view_mut((n, 0), (n_min, n)).copy_from(&self.s21);
            inv.view_mut((n, n), (n_min, n_min)).copy_from(&self.s22);
        }
        one_norm(&m) * one_norm(&inv)
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// LU factorization with partial pivoting, generic over the elimination
/// scalar. Row-major storage.
struct Lu<S: Scalar> {
    n: usize,
    data: Vec<S>,
    pivots: Vec<usize>,
}

fn lu_factor<S: Scalar>(mut data: Vec<S>, n: usize) -> Result<Lu<S>> {
    let mut pivots = vec![0usize; n];
    for col in 0..n {
        let mut pivot = col;
        let mut best = data[col * n + col].abs();
        for row in (col + 1)..n {
            let v = data[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best.is_zero() {
            return Err(Error::SingularMatrix(format!(
                "zero pivot at elimination step {col}"
            )));
        }
        pivots[col] = pivot;
        if pivot != col {
            for k in 0..n {
                data.swap(col * n + k, pivot * n + k);
            }
        }
        let inv = S::from_f64(1.0) / data[col * n + col];
        for row in (col + 1)..n {
            let factor = data[row * n + col] * inv;
            data[row * n + col] = factor;
            if !factor.is_zero() {
                for k in (col + 1)..n {
                    let sub = factor * data[col * n + k];
                    data[row * n + k] = data[row * n + k] - sub;
                }
            }
        }
    }
    Ok(Lu { n, data, pivots })
}

impl<S: Scalar> Lu<S> {
    fn solve_in_place(&self, rhs: &mut [S]) {
        let n = self.n;
        for col in 0..n {
            rhs.swap(col, self.pivots[col]);
        }
        for row in 1..n {
            let mut acc = rhs[row];
            for k in 0..row {
                acc = acc - self.data[row * n + k] * rhs[k];
            }
            rhs[row] = acc;
        }
        for row in (0..n).rev() {
            let mut acc = rhs[row];
            for k in (row + 1)..n {
                acc = acc - self.data[row * n + k] * rhs[k];
            }
            rhs[row] = acc / self.data[row * n + row];
        }
    }
}

fn invert_generic<S: Scalar>(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let data: Vec<S> = (0..n * n)
        .map(|i| S::from_f64(m[(i / n, i % n)]))
        .collect();
    let lu = lu_factor(data, n)?;
    let mut inv = DMatrix::zeros(n, n);
    let mut col = vec![S::zero(); n];
    for j in 0..n {
        for (i, c) in col.iter_mut().enumerate() {
            *c = S::from_f64(if i == j { 1.0 } else { 0.0 });
        }
        lu.solve_in_place(&mut col);
        for i in 0..n {
            inv[(i, j)] = col[i].to_f64();
        }
    }
    Ok(inv)
}

/// Inverts the full `(N + N_min)^2` saddle matrix and extracts the blocks.
/// The returned residual is computed in f64 on the rounded inverse.
pub fn dense_inverse(sys: &SaddleSystem, precision: Precision) -> Result<InverseBlocks> {
    let m = assemble_saddle_matrix(sys);
    let inv = match precision {
        Precision::Double => invert_generic::<f64>(&m)?,
        Precision::DoubleDouble => invert_generic::<Dd>(&m)?,
    };
    let n = sys.n();
    let n_min = sys.n_min();
    let residual = {
        let prod = &m * &inv;
        let mut worst = 0.0f64;
        for i in 0..prod.nrows() {
            for j in 0..prod.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - target).abs());
            }
        }
        worst
    };
    Ok(InverseBlocks {
        s11: inv.view((0, 0), (n, n)).into_owned(),
        s12: inv.view((0, n), (n, n_min)).into_owned(),
        s21: inv.view((n, 0), (n_min, n)).into_owned(),
        s22: inv.view((n, n), (n_min, n_min)).into_owned(),
        residual,
    })
}

/// Singular values of one admissible block of `S11`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockSpectrum {
    pub row: usize,
    pub col: usize,
    pub sigmas: Vec<f64>,
}

/// Per-block singular spectra together with the tree depth entering the
/// computable bound `depth * max_blocks sigma_{r+1}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub blocks: Vec<BlockSpectrum>,
    pub depth: usize,
    pub r_max: usize,
}

impl SpectrumReport {
    /// `max` over admissible blocks of the `idx`-th singular value
    /// (0-based); blocks smaller than the index contribute an exact zero.
    pub fn max_sigma(&self, idx: usize) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.sigmas.get(idx).copied().unwrap_or(0.0))
            .fold(0.0, f64::max)
    }

    /// The computable bound at rank `r`: `depth * max sigma_{r+1}`.
    /// Defined for `1 <= r < r_max`.
    pub fn bound(&self, r: usize) -> Option<f64> {
        if r == 0 || r >= self.r_max {
            return None;
        }
        Some(self.depth as f64 * self.max_sigma(r))
    }

    /// CSV rows `r, bound, max_sigma` for `r = 1 .. r_max - 1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,bound,max_sigma\n");
        for r in 1..self.r_max {
            let sigma = self.max_sigma(r);
            let _ = writeln!(out, "{r},{:.16e},{sigma:.16e}", self.depth as f64 * sigma);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Full SVD of every admissible block of `s11` (given in original index
/// order), keeping the first `r_max` singular values.
pub fn blockwise_spectra(
    s11: &DMatrix<f64>,
    partition: &BlockPartition,
    r_max: usize,
) -> Result<SpectrumReport> {
    let tree = partition.tree();
    let perm = tree.permutation();
    let mut blocks = Vec::with_capacity(partition.admissible.len());
    for &(i, j) in &partition.admissible {
        let ri = tree.node(i).range.clone();
        let rj = tree.node(j).range.clone();
        let block = DMatrix::from_fn(ri.len(), rj.len(), |r, c| {
            s11[(perm[ri.start + r], perm[rj.start + c])]
        });
        let f = crate::svd::svd_factor(&block).ok_or(Error::SvdFailed { row: i, col: j })?;
        let mut sigmas = f.sigmas;
        sigmas.truncate(r_max);
        blocks.push(BlockSpectrum {
            row: i,
            col: j,
            sigmas,
        });
    }
    Ok(SpectrumReport {
        blocks,
        depth: tree.depth(),
        r_max,
    })
}

/// Least-squares fit of `log bound(r)` against `r`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits a line to `(r, ln bound(r))` over the given rank range, skipping
/// nonpositive bounds; errors when fewer than 3 usable points remain.
pub fn decay_fit(
    report: &SpectrumReport,
    r_range: std::ops::RangeInclusive<usize>,
) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = r_range
        .filter_map(|r| {
            let b = report.bound(r)?;
            if b > 0.0 {
                Some((r as f64, b.ln()))
            } else {
                None
            }
        })
        .collect();
    fit_line(&pts)
}

pub(crate) fn fit_line(pts: &[(f64, f64)]) -> Result<DecayFit> {
    if pts.len() < 3 {
        return Err(Error::TooFewFitPoints);
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom == 0.0 {
        return Err(Error::TooFewFitPoints);
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| {
            let pred = intercept + slope * p.0;
            (p.1 - pred) * (p.1 - pred)
        })
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(DecayFit {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_system;
    use crate::clustering::{build_block_partition, build_cluster_tree};
    use crate::geometry::{generate_uniform_grid, AxisBox, Point, PointCloud};
    use crate::kernels::KernelSpec;
    use crate::polybasis::{build_lagrange_basis, select_unisolvent_subset, PolyBasis};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn scalar_inverse() {
        let sys = SaddleSystem {
            a: DMatrix::from_element(1, 1, 4.0),
            b: DMatrix::zeros(0, 1),
        };
        let inv = dense_inverse(&sys, Precision::Double).unwrap();
        assert_relative_eq!(inv.s11[(0, 0)], 0.25);
        assert!(inv.residual < 1e-15);
    }

    #[test]
    fn symmetric_inverse_block() {
        let cloud = PointCloud::new(
            3,
            vec![Point::new(vec![0.0; 3]), Point::new(vec![0.7, 0.0, 0.0])],
        )
        .unwrap();
        let spec = KernelSpec::matern(3, 2, 1.0).unwrap();
        let sys = assemble_system(&cloud, &spec, &PolyBasis::empty(3)).unwrap();
        let inv = dense_inverse(&sys, Precision::Double).unwrap();
        assert_relative_eq!(inv.s11[(0, 1)], inv.s11[(1, 0)], max_relative = 1e-12);
    }

    #[test]
    fn inverse_solves_interpolation() {
        // S11 f solves the constrained system: interpolation at all nodes
        let cloud = generate_uniform_grid(2, 4, &AxisBox::unit(2)).unwrap();
        let spec = KernelSpec::thin_plate_spline(2, 2).unwrap();
        let idx = select_unisolvent_subset(&cloud, &spec).unwrap();
        let basis = build_lagrange_basis(&cloud, &idx, &spec).unwrap();
        let sys = assemble_system(&cloud, &spec, &basis).unwrap();
        let inv = dense_inverse(&sys, Precision::Double).unwrap();
        assert!(inv.residual < 1e-8, "residual {}", inv.residual);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let f = nalgebra::DVector::<f64>::from_fn(16, |_, _| rng.random::<f64>());
        let c = &inv.s11 * &f;
        let d = &inv.s21 * &f;
        // first row: A c + B^T d = f
        let res = &sys.a * &c + sys.b.transpose() * &d - &f;
        assert!(res.norm() <= 1e-6 * f.norm(), "residual {}", res.norm());
        // second row: B c = 0
        assert!((&sys.b * &c).norm() <= 1e-8 * c.norm());
    }

    #[test]
    fn dd_elimination_beats_double_on_hilbert() {
        // Hilbert matrices are classically ill-conditioned
        let n = 10;
        let m = DMatrix::from_fn(n, n, |i, j| 1.0 / ((i + j + 1) as f64));
        let inv_f64 = invert_generic::<f64>(&m).unwrap();
        let inv_dd = invert_generic::<Dd>(&m).unwrap();
        let res_f64 = (&m * &inv_f64 - DMatrix::<f64>::identity(n, n)).norm();
        let res_dd = (&m * &inv_dd - DMatrix::<f64>::identity(n, n)).norm();
        assert!(
            res_dd < res_f64 * 1e-3,
            "dd residual {res_dd} vs double {res_f64}"
        );
    }

    #[test]
    fn singular_matrix_rejected() {
        let sys = SaddleSystem {
            a: DMatrix::zeros(2, 2),
            b: DMatrix::zeros(0, 2),
        };
        assert!(matches!(
            dense_inverse(&sys, Precision::Double),
            Err(Error::SingularMatrix(_))
        ));
    }

    #[test]
    fn spectra_rank_one_block_has_zero_tail() {
        let cloud = generate_uniform_grid(2, 6, &AxisBox::unit(2)).unwrap();
        let tree = build_cluster_tree(&cloud, 4).unwrap();
        let p = build_block_partition(tree, 2.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let u = nalgebra::DVector::<f64>::from_fn(36, |_, _| rng.random());
        let m = &u * u.transpose();
        let report = blockwise_spectra(&m, &p, 4).unwrap();
        assert!(!report.blocks.is_empty());
        for b in &report.blocks {
            for (k, s) in b.sigmas.iter().enumerate() {
                if k >= 1 {
                    assert!(
                        *s <= 1e-12 * b.sigmas[0].max(1e-300),
                        "sigma_{} = {s}",
                        k + 1
                    );
                }
            }
        }
        // sigma sequences nonincreasing, so the bound curve is nonincreasing
        for b in &report.blocks {
            for w in b.sigmas.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
        for r in 1..report.r_max - 1 {
            assert!(report.bound(r).unwrap() >= report.bound(r + 1).unwrap());
        }
    }

    #[test]
    fn decay_fit_recovers_synthetic_exponential() {
        let report = SpectrumReport {
            blocks: vec![BlockSpectrum {
                row: 0,
                col: 0,
                // sigma_{r+1} = 10 e^{-0.8 (r+1)} so bound(r) = 10 e^{-0.8} e^{-0.8 r}
                sigmas: (1..=30).map(|r| 10.0 * (-0.8 * r as f64).exp()).collect(),
            }],
            depth: 1,
            r_max: 30,
        };
        let fit = decay_fit(&report, 1..=20).unwrap();
        assert_relative_eq!(fit.slope, -0.8, epsilon = 1e-9);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn decay_fit_constant_is_flat() {
        let report = SpectrumReport {
            blocks: vec![BlockSpectrum {
                row: 0,
                col: 0,
                sigmas: vec![2.0; 25],
            }],
            depth: 3,
            r_max: 25,
        };
        let fit = decay_fit(&report, 1..=20).unwrap();
        assert_relative_eq!(fit.slope, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn decay_fit_needs_three_points() {
        let report = SpectrumReport {
            blocks: vec![BlockSpectrum {
                row: 0,
                col: 0,
                sigmas: vec![1.0, 0.5, 0.0, 0.0, 0.0],
            }],
            depth: 1,
            r_max: 5,
        };
        // bounds beyond sigma_2 are zero and get skipped
        assert!(matches!(
            decay_fit(&report, 1..=4),
            Err(Error::TooFewFitPoints)
        ));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let report = SpectrumReport {
            blocks: vec![BlockSpectrum {
                row: 0,
                col: 0,
                sigmas: vec![1.0, 0.5, 0.25],
            }],
            depth: 2,
            r_max: 3,
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "r,bound,max_sigma");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1,"));
    }
}
