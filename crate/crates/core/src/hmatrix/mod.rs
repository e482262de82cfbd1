//! H-matrix container over a block partition: blockwise truncated-SVD
//! compression, matvec, storage accounting, H-Cholesky and triangular solves.
//!
//! Internally everything lives in the cluster-tree ordering; the permutation
//! is applied at the API boundary, so callers work with original indices.

mod cholesky;
mod io;
mod norm;

pub use io::{load as load_hmatrix, save as save_hmatrix};
pub use norm::{est_spectral_norm, NormEstimate};

use std::collections::HashSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clustering::{BlockPartition, ClusterTree};
use crate::error::{Error, Result};

/// Rank-`r` outer-product block `X Y^T` with `X: |I| x r`, `Y: |J| x r`.
#[derive(Debug, Clone)]
pub struct LowRankBlock {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl LowRankBlock {
    pub fn zero(nrows: usize, ncols: usize) -> Self {
        LowRankBlock {
            x: DMatrix::zeros(nrows, 0),
            y: DMatrix::zeros(ncols, 0),
        }
    }

    pub fn rank(&self) -> usize {
        self.x.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.y.nrows()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.x * self.y.transpose()
    }
}

/// One node of the recursive block structure.
#[derive(Debug, Clone)]
pub enum HBlock {
    Dense(DMatrix<f64>),
    LowRank(LowRankBlock),
    Sub {
        row_split: usize,
        col_split: usize,
        children: Box<[HBlock; 4]>,
    },
}

/// `(rows, cols)` of a block.
pub(crate) fn block_shape(b: &HBlock) -> (usize, usize) {
    match b {
        HBlock::Dense(d) => (d.nrows(), d.ncols()),
        HBlock::LowRank(lr) => (lr.nrows(), lr.ncols()),
        HBlock::Sub {
            row_split,
            col_split,
            children,
        } => {
            let (r2, c2) = block_shape(&children[3]);
            (row_split + r2, col_split + c2)
        }
    }
}

/// `H * M` for a dense multi-column right-hand side, in tree ordering.
pub(crate) fn h_apply_dense(h: &HBlock, m: &DMatrix<f64>) -> DMatrix<f64> {
    match h {
        HBlock::Dense(d) => d * m,
        HBlock::LowRank(lr) => &lr.x * lr.y.tr_mul(m),
        HBlock::Sub {
            col_split,
            children,
            ..
        } => {
            let m1 = m.rows(0, *col_split).into_owned();
            let m2 = m.rows(*col_split, m.nrows() - col_split).into_owned();
            let mut top = h_apply_dense(&children[0], &m1);
            top += h_apply_dense(&children[1], &m2);
            let mut bot = h_apply_dense(&children[2], &m1);
            bot += h_apply_dense(&children[3], &m2);
            vstack(&top, &bot)
        }
    }
}

/// `H^T * M`, in tree ordering.
pub(crate) fn h_apply_dense_t(h: &HBlock, m: &DMatrix<f64>) -> DMatrix<f64> {
    match h {
        HBlock::Dense(d) => d.tr_mul(m),
        HBlock::LowRank(lr) => &lr.y * lr.x.tr_mul(m),
        HBlock::Sub {
            row_split,
            children,
            ..
        } => {
            let m1 = m.rows(0, *row_split).into_owned();
            let m2 = m.rows(*row_split, m.nrows() - row_split).into_owned();
            let mut top = h_apply_dense_t(&children[0], &m1);
            top += h_apply_dense_t(&children[2], &m2);
            let mut bot = h_apply_dense_t(&children[1], &m1);
            bot += h_apply_dense_t(&children[3], &m2);
            vstack(&top, &bot)
        }
    }
}

pub(crate) fn vstack(top: &DMatrix<f64>, bot: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bot.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bot.nrows()).copy_from(bot);
    out
}

pub(crate) fn hstack(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.columns_mut(0, left.ncols()).copy_from(left);
    out.columns_mut(left.ncols(), right.ncols()).copy_from(right);
    out
}

/// Blockwise truncation rule: fixed rank, or relative singular-value
/// tolerance `sigma_{r+1} <= eps * sigma_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Truncation {
    FixedRank(usize),
    Tolerance(f64),
}

impl Truncation {
    /// Number of singular values kept out of a descending sequence.
    fn kept(&self, sigmas: &[f64]) -> usize {
        match *self {
            Truncation::FixedRank(r) => sigmas.iter().take(r).filter(|&&s| s > 0.0).count(),
            Truncation::Tolerance(eps) => {
                let s1 = sigmas.first().copied().unwrap_or(0.0);
                if s1 == 0.0 {
                    0
                } else {
                    sigmas.iter().filter(|&&s| s > eps * s1).count()
                }
            }
        }
    }
}

/// Partition-aligned container of low-rank and dense blocks.
#[derive(Debug, Clone)]
pub struct HMatrix {
    partition: Arc<BlockPartition>,
    root: HBlock,
    trunc: Truncation,
    n: usize,
}

/// Summary of the block structure and its memory footprint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HMatrixDiagnostics {
    pub rank_bound: usize,
    pub n_adm: usize,
    pub n_small: usize,
    pub storage_entries: usize,
    pub compression_ratio: f64,
}

impl HMatrix {
    /// Compresses a dense matrix (original index order) into the H-format:
    /// admissible blocks by truncated SVD, small blocks copied verbatim.
    pub fn compress(
        dense: &DMatrix<f64>,
        partition: Arc<BlockPartition>,
        trunc: Truncation,
    ) -> Result<HMatrix> {
        let n = partition.n_points();
        if dense.nrows() != n || dense.ncols() != n {
            return Err(Error::DimMismatch {
                expected: n,
                got: dense.nrows(),
            });
        }
        let adm: HashSet<(usize, usize)> = partition.admissible.iter().copied().collect();
        let small: HashSet<(usize, usize)> = partition.small.iter().copied().collect();
        let root = build_block(
            dense,
            partition.tree(),
            &adm,
            &small,
            trunc,
            ClusterTree::ROOT,
            ClusterTree::ROOT,
        )?;
        Ok(HMatrix {
            partition,
            root,
            trunc,
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn partition_arc(&self) -> Arc<BlockPartition> {
        self.partition.clone()
    }

    pub fn truncation(&self) -> Truncation {
        self.trunc
    }

    pub(crate) fn root(&self) -> &HBlock {
        &self.root
    }

    pub(crate) fn from_parts(
        partition: Arc<BlockPartition>,
        root: HBlock,
        trunc: Truncation,
    ) -> HMatrix {
        let n = partition.n_points();
        HMatrix {
            partition,
            root,
            trunc,
            n,
        }
    }

    /// `y = H v` in original index order.
    pub fn matvec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.n {
            return Err(Error::DimMismatch {
                expected: self.n,
                got: v.len(),
            });
        }
        let perm = self.partition.tree().permutation();
        let w = DMatrix::from_fn(self.n, 1, |t, _| v[perm[t]]);
        let out = h_apply_dense(&self.root, &w);
        let mut y = DVector::zeros(self.n);
        for t in 0..self.n {
            y[perm[t]] = out[(t, 0)];
        }
        Ok(y)
    }

    /// Total stored entries: `r (|I| + |J|)` per low-rank block plus
    /// `|I| |J|` per dense block.
    pub fn storage_entries(&self) -> usize {
        let mut total = 0;
        self.for_each_block(&mut |_, _, b| {
            total += match b {
                HBlock::Dense(d) => d.nrows() * d.ncols(),
                HBlock::LowRank(lr) => lr.rank() * (lr.nrows() + lr.ncols()),
                HBlock::Sub { .. } => unreachable!(),
            };
        });
        total
    }

    /// Dense reconstruction in original index order.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let perm = self.partition.tree().permutation();
        let mut tree_mat = DMatrix::zeros(self.n, self.n);
        write_dense(&self.root, 0, 0, &mut tree_mat);
        let mut out = DMatrix::zeros(self.n, self.n);
        for s in 0..self.n {
            for t in 0..self.n {
                out[(perm[s], perm[t])] = tree_mat[(s, t)];
            }
        }
        out
    }

    /// Visits every leaf block along with its cluster-pair identity.
    pub fn for_each_block<F: FnMut(usize, usize, &HBlock)>(&self, f: &mut F) {
        fn rec<F: FnMut(usize, usize, &HBlock)>(
            tree: &ClusterTree,
            blk: &HBlock,
            i: usize,
            j: usize,
            f: &mut F,
        ) {
            match blk {
                HBlock::Sub { children, .. } => {
                    let (i1, i2) = tree.node(i).sons.expect("sub block on internal clusters");
                    let (j1, j2) = tree.node(j).sons.expect("sub block on internal clusters");
                    rec(tree, &children[0], i1, j1, f);
                    rec(tree, &children[1], i1, j2, f);
                    rec(tree, &children[2], i2, j1, f);
                    rec(tree, &children[3], i2, j2, f);
                }
                leaf => f(i, j, leaf),
            }
        }
        rec(
            self.partition.tree(),
            &self.root,
            ClusterTree::ROOT,
            ClusterTree::ROOT,
            f,
        );
    }

    /// The stored low-rank block for an admissible cluster pair, if present.
    pub fn admissible_block(&self, row: usize, col: usize) -> Option<LowRankBlock> {
        let mut found = None;
        self.for_each_block(&mut |i, j, b| {
            if i == row && j == col {
                if let HBlock::LowRank(lr) = b {
                    found = Some(lr.clone());
                }
            }
        });
        found
    }

    /// Largest rank over the low-rank blocks.
    pub fn max_block_rank(&self) -> usize {
        let mut r = 0;
        self.for_each_block(&mut |_, _, b| {
            if let HBlock::LowRank(lr) = b {
                r = r.max(lr.rank());
            }
        });
        r
    }

    pub fn diagnostics(&self) -> HMatrixDiagnostics {
        let storage = self.storage_entries();
        HMatrixDiagnostics {
            rank_bound: match self.trunc {
                Truncation::FixedRank(r) => r,
                Truncation::Tolerance(_) => self.max_block_rank(),
            },
            n_adm: self.partition.admissible.len(),
            n_small: self.partition.small.len(),
            storage_entries: storage,
            compression_ratio: storage as f64 / (self.n as f64 * self.n as f64),
        }
    }

    /// Projects every low-rank block to rank at most `r`, leaving dense
    /// blocks untouched.
    pub fn truncate_to_rank(&self, r: usize) -> HMatrix {
        fn rec(b: &HBlock, r: usize) -> HBlock {
            match b {
                HBlock::Dense(d) => HBlock::Dense(d.clone()),
                HBlock::LowRank(lr) => HBlock::LowRank(cholesky::trunc_lowrank(
                    &lr.x,
                    &lr.y,
                    Truncation::FixedRank(r),
                )),
                HBlock::Sub {
                    row_split,
                    col_split,
                    children,
                } => HBlock::Sub {
                    row_split: *row_split,
                    col_split: *col_split,
                    children: Box::new([
                        rec(&children[0], r),
                        rec(&children[1], r),
                        rec(&children[2], r),
                        rec(&children[3], r),
                    ]),
                },
            }
        }
        HMatrix {
            partition: self.partition.clone(),
            root: rec(&self.root, r),
            trunc: Truncation::FixedRank(r),
            n: self.n,
        }
    }

    /// Block-recursive Cholesky over the cluster tree. The input must be
    /// symmetric positive definite (only the lower triangle is read);
    /// returns the lower-triangular factor in the same block format.
    pub fn hcholesky(&self, trunc: Truncation) -> Result<HMatrix> {
        cholesky::hcholesky(self, trunc)
    }

    /// Solves `L x = rhs` (or `L^T x = rhs` with `transposed`) for a factor
    /// produced by [`HMatrix::hcholesky`], in original index order.
    pub fn solve_triangular(&self, rhs: &DVector<f64>, transposed: bool) -> Result<DVector<f64>> {
        if rhs.len() != self.n {
            return Err(Error::DimMismatch {
                expected: self.n,
                got: rhs.len(),
            });
        }
        let perm = self.partition.tree().permutation();
        let mut m = DMatrix::from_fn(self.n, 1, |t, _| rhs[perm[t]]);
        if transposed {
            cholesky::solve_lower_h_dense_t(&self.root, &mut m)?;
        } else {
            cholesky::solve_lower_h_dense(&self.root, &mut m)?;
        }
        let mut y = DVector::zeros(self.n);
        for t in 0..self.n {
            y[perm[t]] = m[(t, 0)];
        }
        Ok(y)
    }

    /// `(L L^T)^{-1} v` via forward and backward substitution.
    pub fn apply_inverse(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let fwd = self.solve_triangular(v, false)?;
        self.solve_triangular(&fwd, true)
    }
}

fn build_block(
    dense: &DMatrix<f64>,
    tree: &ClusterTree,
    adm: &HashSet<(usize, usize)>,
    small: &HashSet<(usize, usize)>,
    trunc: Truncation,
    i: usize,
    j: usize,
) -> Result<HBlock> {
    let slice = || {
        let perm = tree.permutation();
        let ri = tree.node(i).range.clone();
        let rj = tree.node(j).range.clone();
        DMatrix::from_fn(ri.len(), rj.len(), |r, c| {
            dense[(perm[ri.start + r], perm[rj.start + c])]
        })
    };
    if adm.contains(&(i, j)) {
        let block = slice();
        let lr = svd_truncate(&block, trunc).ok_or(Error::SvdFailed { row: i, col: j })?;
        Ok(HBlock::LowRank(lr))
    } else if small.contains(&(i, j)) {
        Ok(HBlock::Dense(slice()))
    } else {
        let (i1, i2) = tree.node(i).sons.expect("non-leaf pair must have sons");
        let (j1, j2) = tree.node(j).sons.expect("non-leaf pair must have sons");
        Ok(HBlock::Sub {
            row_split: tree.node(i1).len(),
            col_split: tree.node(j1).len(),
            children: Box::new([
                build_block(dense, tree, adm, small, trunc, i1, j1)?,
                build_block(dense, tree, adm, small, trunc, i1, j2)?,
                build_block(dense, tree, adm, small, trunc, i2, j1)?,
                build_block(dense, tree, adm, small, trunc, i2, j2)?,
            ]),
        })
    }
}

/// Rank-truncated SVD of a dense block; `None` if the SVD does not converge.
pub(crate) fn svd_truncate(block: &DMatrix<f64>, trunc: Truncation) -> Option<LowRankBlock> {
    let (m, n) = (block.nrows(), block.ncols());
    let f = crate::svd::svd_factor(block)?;
    let keep = trunc.kept(&f.sigmas);
    let mut x = DMatrix::zeros(m, keep);
    let mut y = DMatrix::zeros(n, keep);
    for col in 0..keep {
        x.column_mut(col)
            .copy_from(&(f.u.column(col) * f.sigmas[col]));
        y.column_mut(col).copy_from(&f.v.column(col));
    }
    Some(LowRankBlock { x, y })
}

fn write_dense(b: &HBlock, row_off: usize, col_off: usize, out: &mut DMatrix<f64>) {
    match b {
        HBlock::Dense(d) => {
            out.view_mut((row_off, col_off), (d.nrows(), d.ncols()))
                .copy_from(d);
        }
        HBlock::LowRank(lr) => {
            out.view_mut((row_off, col_off), (lr.nrows(), lr.ncols()))
                .copy_from(&lr.reconstruct());
        }
        HBlock::Sub {
            row_split,
            col_split,
            children,
        } => {
            write_dense(&children[0], row_off, col_off, out);
            write_dense(&children[1], row_off, col_off + col_split, out);
            write_dense(&children[2], row_off + row_split, col_off, out);
            write_dense(
                &children[3],
                row_off + row_split,
                col_off + col_split,
                out,
            );
        }
    }
}
