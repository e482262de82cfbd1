//! Block-recursive Cholesky in the H-format: dense factorization on diagonal
//! leaves, triangular solves for off-diagonal blocks, and low-rank Schur
//! updates re-truncated after every formatted addition.

use nalgebra::DMatrix;

use super::{block_shape, h_apply_dense, h_apply_dense_t, hstack, HBlock, HMatrix, LowRankBlock, Truncation};
use crate::clustering::ClusterTree;
use crate::error::{Error, Result};

pub(super) fn hcholesky(h: &HMatrix, trunc: Truncation) -> Result<HMatrix> {
    let mut root = h.root().clone();
    chol_rec(&mut root, ClusterTree::ROOT, h.partition().tree(), trunc)?;
    Ok(HMatrix::from_parts(h.partition_arc(), root, trunc))
}

fn not_spd(tree: &ClusterTree, cluster: usize) -> Error {
    let range = tree.node(cluster).range.clone();
    Error::NotSpd {
        cluster,
        start: range.start,
        end: range.end,
    }
}

fn chol_rec(c: &mut HBlock, cluster: usize, tree: &ClusterTree, trunc: Truncation) -> Result<()> {
    match c {
        HBlock::Dense(d) => dense_chol_lower(d).map_err(|_| not_spd(tree, cluster)),
        HBlock::Sub { children, .. } => {
            let (i1, i2) = tree
                .node(cluster)
                .sons
                .expect("subdivided diagonal block has sons");
            let (top, bot) = children.split_at_mut(2);
            chol_rec(&mut top[0], i1, tree, trunc)?;
            solve_right_lower(&mut bot[0], &top[0], trunc)?;
            let (m12, n12) = block_shape(&top[1]);
            top[1] = HBlock::LowRank(LowRankBlock::zero(m12, n12));
            let (b21, b22) = bot.split_at_mut(1);
            mult_sub(&mut b22[0], &b21[0], &b21[0], trunc)?;
            chol_rec(&mut b22[0], i2, tree, trunc)
        }
        HBlock::LowRank(_) => unreachable!("diagonal blocks are never admissible"),
    }
}

/// In-place lower Cholesky of a dense block; the strict upper triangle is
/// zeroed. Returns the pivot index on failure.
fn dense_chol_lower(m: &mut DMatrix<f64>) -> std::result::Result<(), usize> {
    let n = m.nrows();
    for j in 0..n {
        let mut s = m[(j, j)];
        for k in 0..j {
            s -= m[(j, k)] * m[(j, k)];
        }
        if s <= 0.0 {
            return Err(j);
        }
        let d = s.sqrt();
        m[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= m[(i, k)] * m[(j, k)];
            }
            m[(i, j)] = v / d;
        }
        for i in 0..j {
            m[(i, j)] = 0.0;
        }
    }
    Ok(())
}

fn singular() -> Error {
    Error::SingularMatrix("zero diagonal in triangular solve".into())
}

/// `B <- B L^{-T}` where `L` is a lower-triangular factor on the column
/// clusters of `B`.
fn solve_right_lower(b: &mut HBlock, l: &HBlock, trunc: Truncation) -> Result<()> {
    match (b, l) {
        (HBlock::LowRank(lr), l) => {
            // X Y^T L^{-T} = X (L^{-1} Y)^T
            solve_lower_h_dense(l, &mut lr.y)
        }
        (HBlock::Dense(bd), l) => {
            let mut t = bd.transpose();
            solve_lower_h_dense(l, &mut t)?;
            *bd = t.transpose();
            Ok(())
        }
        (
            HBlock::Sub { children: bc, .. },
            HBlock::Sub { children: lc, .. },
        ) => {
            let (btop, bbot) = bc.split_at_mut(2);
            for row in [btop, bbot] {
                let (r1, r2) = row.split_at_mut(1);
                solve_right_lower(&mut r1[0], &lc[0], trunc)?;
                // B_i2 -= B_i1 L21^T
                mult_sub(&mut r2[0], &r1[0], &lc[2], trunc)?;
                solve_right_lower(&mut r2[0], &lc[3], trunc)?;
            }
            Ok(())
        }
        (HBlock::Sub { .. }, _) => unreachable!("dense factor under a subdivided block"),
    }
}

/// `M <- L^{-1} M` for a dense multi-column right-hand side.
pub(super) fn solve_lower_h_dense(l: &HBlock, m: &mut DMatrix<f64>) -> Result<()> {
    match l {
        HBlock::Dense(ld) => {
            *m = ld.solve_lower_triangular(m).ok_or_else(singular)?;
            Ok(())
        }
        HBlock::Sub {
            row_split,
            children,
            ..
        } => {
            let k1 = *row_split;
            let k2 = m.nrows() - k1;
            let mut m1 = m.rows(0, k1).into_owned();
            solve_lower_h_dense(&children[0], &mut m1)?;
            let mut m2 = m.rows(k1, k2).into_owned();
            m2 -= h_apply_dense(&children[2], &m1);
            solve_lower_h_dense(&children[3], &mut m2)?;
            m.rows_mut(0, k1).copy_from(&m1);
            m.rows_mut(k1, k2).copy_from(&m2);
            Ok(())
        }
        HBlock::LowRank(_) => unreachable!("factor diagonal is never low-rank"),
    }
}

/// `M <- L^{-T} M`.
pub(super) fn solve_lower_h_dense_t(l: &HBlock, m: &mut DMatrix<f64>) -> Result<()> {
    match l {
        HBlock::Dense(ld) => {
            *m = ld.tr_solve_lower_triangular(m).ok_or_else(singular)?;
            Ok(())
        }
        HBlock::Sub {
            row_split,
            children,
            ..
        } => {
            let k1 = *row_split;
            let k2 = m.nrows() - k1;
            let mut m2 = m.rows(k1, k2).into_owned();
            solve_lower_h_dense_t(&children[3], &mut m2)?;
            let mut m1 = m.rows(0, k1).into_owned();
            m1 -= h_apply_dense_t(&children[2], &m2);
            solve_lower_h_dense_t(&children[0], &mut m1)?;
            m.rows_mut(0, k1).copy_from(&m1);
            m.rows_mut(k1, k2).copy_from(&m2);
            Ok(())
        }
        HBlock::LowRank(_) => unreachable!("factor diagonal is never low-rank"),
    }
}

/// `C -= A B^T` with `A` on `(I, K)` and `B` on `(J, K)`, re-truncating
/// low-rank targets after the formatted addition.
fn mult_sub(c: &mut HBlock, a: &HBlock, b: &HBlock, trunc: Truncation) -> Result<()> {
    match (a, b) {
        (HBlock::LowRank(la), _) => {
            if la.rank() == 0 {
                return Ok(());
            }
            // A B^T = X_a (B Y_a)^T
            let w = h_apply_dense(b, &la.y);
            sub_lowrank(c, &la.x, &w, trunc);
            Ok(())
        }
        (_, HBlock::LowRank(lb)) => {
            if lb.rank() == 0 {
                return Ok(());
            }
            // A B^T = (A Y_b) X_b^T
            let w = h_apply_dense(a, &lb.y);
            sub_lowrank(c, &w, &lb.x, trunc);
            Ok(())
        }
        (HBlock::Dense(da), HBlock::Dense(db)) => {
            sub_lowrank(c, da, db, trunc);
            Ok(())
        }
        (HBlock::Dense(da), b @ HBlock::Sub { .. }) => {
            // few rows: A B^T = (B A^T)^T written as I_m (B A^T)^T
            let w = h_apply_dense(b, &da.transpose());
            let eye = DMatrix::identity(da.nrows(), da.nrows());
            sub_lowrank(c, &eye, &w, trunc);
            Ok(())
        }
        (a @ HBlock::Sub { .. }, HBlock::Dense(db)) => {
            // few columns of C: A B^T = (A B^T) I_n^T
            let w = h_apply_dense(a, &db.transpose());
            let eye = DMatrix::identity(db.nrows(), db.nrows());
            sub_lowrank(c, &w, &eye, trunc);
            Ok(())
        }
        (
            a @ HBlock::Sub { children: ac, row_split: ars, .. },
            b @ HBlock::Sub { children: bc, row_split: brs, .. },
        ) => match c {
            HBlock::Sub { children: cc, .. } => {
                // C_ij -= A_i1 B_j1^T + A_i2 B_j2^T
                for (ci, ai, bj) in [
                    (0usize, 0usize, 0usize),
                    (1, 0, 2),
                    (2, 2, 0),
                    (3, 2, 2),
                ] {
                    mult_sub(&mut cc[ci], &ac[ai], &bc[bj], trunc)?;
                    mult_sub(&mut cc[ci], &ac[ai + 1], &bc[bj + 1], trunc)?;
                }
                Ok(())
            }
            HBlock::LowRank(_) => {
                // accumulate the product in a temporary 2x2 structure, then
                // agglomerate it into a single low-rank update
                let (a1, _) = block_shape(&ac[0]);
                let (a2, _) = block_shape(&ac[2]);
                let (b1, _) = block_shape(&bc[0]);
                let (b2, _) = block_shape(&bc[2]);
                debug_assert_eq!(a1, *ars);
                debug_assert_eq!(b1, *brs);
                let mut tmp = HBlock::Sub {
                    row_split: a1,
                    col_split: b1,
                    children: Box::new([
                        HBlock::LowRank(LowRankBlock::zero(a1, b1)),
                        HBlock::LowRank(LowRankBlock::zero(a1, b2)),
                        HBlock::LowRank(LowRankBlock::zero(a2, b1)),
                        HBlock::LowRank(LowRankBlock::zero(a2, b2)),
                    ]),
                };
                mult_sub(&mut tmp, a, b, trunc)?; // tmp = -A B^T
                let (x, y) = agglomerate(&tmp);
                sub_lowrank(c, &(-x), &y, trunc);
                Ok(())
            }
            HBlock::Dense(_) => unreachable!("dense target under two subdivided factors"),
        },
    }
}

/// `C -= X Y^T`, slicing the update along the block structure of `C`.
fn sub_lowrank(c: &mut HBlock, x: &DMatrix<f64>, y: &DMatrix<f64>, trunc: Truncation) {
    if x.ncols() == 0 {
        return;
    }
    match c {
        HBlock::Dense(d) => {
            d.gemm(-1.0, x, &y.transpose(), 1.0);
        }
        HBlock::LowRank(lr) => {
            let xs = hstack(&lr.x, &(-x));
            let ys = hstack(&lr.y, y);
            *lr = trunc_lowrank(&xs, &ys, trunc);
        }
        HBlock::Sub {
            row_split,
            col_split,
            children,
        } => {
            let x1 = x.rows(0, *row_split).into_owned();
            let x2 = x.rows(*row_split, x.nrows() - *row_split).into_owned();
            let y1 = y.rows(0, *col_split).into_owned();
            let y2 = y.rows(*col_split, y.nrows() - *col_split).into_owned();
            sub_lowrank(&mut children[0], &x1, &y1, trunc);
            sub_lowrank(&mut children[1], &x1, &y2, trunc);
            sub_lowrank(&mut children[2], &x2, &y1, trunc);
            sub_lowrank(&mut children[3], &x2, &y2, trunc);
        }
    }
}

/// Rounded re-truncation of an outer product `X Y^T` via thin QR of both
/// factors and an SVD of the small core.
pub(super) fn trunc_lowrank(x: &DMatrix<f64>, y: &DMatrix<f64>, trunc: Truncation) -> LowRankBlock {
    let (m, n) = (x.nrows(), y.nrows());
    if x.ncols() == 0 {
        return LowRankBlock::zero(m, n);
    }
    let qr_x = x.clone().qr();
    let qr_y = y.clone().qr();
    let core = qr_x.r() * qr_y.r().transpose();
    match super::svd_truncate(&core, trunc) {
        Some(lr) => LowRankBlock {
            x: qr_x.q() * lr.x,
            y: qr_y.q() * lr.y,
        },
        // non-convergence on a tiny core: keep the factors unrounded
        None => LowRankBlock {
            x: x.clone(),
            y: y.clone(),
        },
    }
}

/// Merges a 2x2 block of low-rank children into one outer product by
/// zero-padding the factors; ranks add up.
fn agglomerate(b: &HBlock) -> (DMatrix<f64>, DMatrix<f64>) {
    match b {
        HBlock::LowRank(lr) => (lr.x.clone(), lr.y.clone()),
        HBlock::Dense(d) => (d.clone(), DMatrix::identity(d.ncols(), d.ncols())),
        HBlock::Sub {
            row_split,
            col_split,
            children,
        } => {
            let (m, n) = block_shape(b);
            let row_off = [0, 0, *row_split, *row_split];
            let col_off = [0, *col_split, 0, *col_split];
            let mut total_rank = 0;
            let parts: Vec<(DMatrix<f64>, DMatrix<f64>)> =
                children.iter().map(agglomerate).collect();
            for (cx, _) in &parts {
                total_rank += cx.ncols();
            }
            let mut x = DMatrix::zeros(m, total_rank);
            let mut y = DMatrix::zeros(n, total_rank);
            let mut col = 0;
            for (idx, (cx, cy)) in parts.iter().enumerate() {
                let r = cx.ncols();
                x.view_mut((row_off[idx], col), (cx.nrows(), r)).copy_from(cx);
                y.view_mut((col_off[idx], col), (cy.nrows(), r)).copy_from(cy);
                col += r;
            }
            (x, y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{build_block_partition, build_cluster_tree, BlockPartition};
    use crate::geometry::{generate_uniform_grid, AxisBox, Point, PointCloud};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn grid_partition(n_axis: usize, leaf: usize, eta: f64) -> Arc<BlockPartition> {
        let cloud = generate_uniform_grid(2, n_axis, &AxisBox::unit(2)).unwrap();
        let tree = build_cluster_tree(&cloud, leaf).unwrap();
        Arc::new(build_block_partition(tree, eta).unwrap())
    }

    fn spd_matrix(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let mut m = &g * g.transpose();
        for i in 0..n {
            m[(i, i)] += n as f64;
        }
        // mirror to keep bit-exact symmetry
        for i in 0..n {
            for j in 0..i {
                let v = m[(i, j)];
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn diagonal_matrix_factor_is_sqrt() {
        let cloud = PointCloud::new(
            1,
            (0..4).map(|i| Point::new(vec![i as f64])).collect(),
        )
        .unwrap();
        let tree = build_cluster_tree(&cloud, 8).unwrap();
        let p = Arc::new(build_block_partition(tree, 2.0).unwrap());
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0, 16.0, 25.0]));
        let h = HMatrix::compress(&d, p, Truncation::FixedRank(4)).unwrap();
        let l = h.hcholesky(Truncation::Tolerance(1e-14)).unwrap();
        let lf = l.reconstruct();
        for i in 0..4 {
            assert!((lf[(i, i)] - ((i + 2) as f64)).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_leaf_matches_textbook_cholesky() {
        let cloud = PointCloud::new(
            1,
            (0..2).map(|i| Point::new(vec![i as f64])).collect(),
        )
        .unwrap();
        let tree = build_cluster_tree(&cloud, 4).unwrap();
        let p = Arc::new(build_block_partition(tree, 2.0).unwrap());
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]);
        let h = HMatrix::compress(&m, p, Truncation::FixedRank(2)).unwrap();
        let l = h.hcholesky(Truncation::Tolerance(1e-14)).unwrap();
        let lf = l.reconstruct();
        // L = [[2, 0], [1, 2]]
        assert!((lf[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((lf[(1, 0)] - 1.0).abs() < 1e-14);
        assert!((lf[(1, 1)] - 2.0).abs() < 1e-14);
        assert_eq!(lf[(0, 1)], 0.0);
    }

    #[test]
    fn full_rank_hcholesky_reproduces_dense_factor() {
        let p = grid_partition(8, 8, 2.0);
        let n = 64;
        let m = spd_matrix(n, 11);
        let h = HMatrix::compress(&m, p.clone(), Truncation::Tolerance(0.0)).unwrap();
        let l = h.hcholesky(Truncation::Tolerance(0.0)).unwrap();
        // compare against the dense factor of the permuted matrix
        let perm = p.tree().permutation();
        let pm = DMatrix::from_fn(n, n, |s, t| m[(perm[s], perm[t])]);
        let dense_l = nalgebra::Cholesky::new(pm).unwrap().l();
        let mut tree_l = DMatrix::zeros(n, n);
        super::super::write_dense(l.root(), 0, 0, &mut tree_l);
        let err = (&tree_l - &dense_l).norm() / dense_l.norm();
        assert!(err <= 1e-10, "factor mismatch {err}");
    }

    #[test]
    fn residual_decreases_with_rank() {
        let p = grid_partition(10, 4, 2.0);
        let n = 100;
        let m = spd_matrix(n, 13);
        let h = HMatrix::compress(&m, p.clone(), Truncation::Tolerance(1e-15)).unwrap();
        let l = h.hcholesky(Truncation::Tolerance(1e-15)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let v = DVector::<f64>::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        let mut prev = f64::INFINITY;
        for r in [1usize, 3, 6, 12] {
            let lr = l.truncate_to_rank(r);
            let av = &m * &v;
            let back = lr.apply_inverse(&av).unwrap();
            let err = (&back - &v).norm() / v.norm();
            assert!(
                err <= prev * 1.5 + 1e-12,
                "residual grew from {prev} to {err} at rank {r}"
            );
            prev = err;
        }
        assert!(prev <= 1e-8, "high-rank residual {prev}");
    }

    #[test]
    fn triangular_solve_identity_and_dense_case() {
        let cloud = PointCloud::new(
            1,
            (0..3).map(|i| Point::new(vec![i as f64])).collect(),
        )
        .unwrap();
        let tree = build_cluster_tree(&cloud, 4).unwrap();
        let p = Arc::new(build_block_partition(tree, 2.0).unwrap());
        let eye = DMatrix::identity(3, 3);
        let h = HMatrix::compress(&eye, p.clone(), Truncation::FixedRank(3)).unwrap();
        let l = h.hcholesky(Truncation::Tolerance(1e-14)).unwrap();
        let rhs = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let out = l.solve_triangular(&rhs, false).unwrap();
        assert!((out - &rhs).norm() < 1e-14);

        // dense 3x3 lower-triangular sanity: L from [[4,2,0],[2,5,1],[0,1,3]]
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.0, 2.0, 5.0, 1.0, 0.0, 1.0, 3.0]);
        let h = HMatrix::compress(&m, p, Truncation::FixedRank(3)).unwrap();
        let l = h.hcholesky(Truncation::Tolerance(1e-14)).unwrap();
        let x = l.apply_inverse(&rhs).unwrap();
        let res = &m * &x - &rhs;
        assert!(res.norm() <= 1e-12);
    }

    #[test]
    fn mixed_block_structure_factorizes() {
        // leaf size small enough that off-diagonal blocks mix dense and
        // low-rank at several levels
        let p = grid_partition(9, 3, 1.5);
        let n = 81;
        let m = spd_matrix(n, 23);
        let h = HMatrix::compress(&m, p, Truncation::Tolerance(1e-14)).unwrap();
        let l = h.hcholesky(Truncation::Tolerance(1e-14)).unwrap();
        let lf = l.reconstruct();
        let res = (&lf * lf.transpose() - &m).norm() / m.norm();
        assert!(res <= 1e-10, "LL^T residual {res}");
    }

    #[test]
    fn non_spd_reports_cluster() {
        let cloud = PointCloud::new(
            1,
            (0..4).map(|i| Point::new(vec![i as f64])).collect(),
        )
        .unwrap();
        let tree = build_cluster_tree(&cloud, 2).unwrap();
        let p = Arc::new(build_block_partition(tree, 2.0).unwrap());
        let mut m = DMatrix::identity(4, 4);
        m[(3, 3)] = -1.0;
        let h = HMatrix::compress(&m, p, Truncation::FixedRank(4)).unwrap();
        match h.hcholesky(Truncation::Tolerance(1e-14)) {
            Err(Error::NotSpd { .. }) => {}
            other => panic!("expected NotSpd, got {other:?}"),
        }
    }
}
