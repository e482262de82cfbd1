//! Multi-indices, the polynomial space `P` of degree `< k_min`, unisolvent
//! point selection and the associated Lagrange basis.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{bounding_box, Point, PointCloud};
use crate::kernels::KernelSpec;

/// Exponent vector `alpha` of a monomial `x^alpha`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndex {
    pub exponents: Vec<u32>,
}

impl MultiIndex {
    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }
}

/// All multi-indices with `|alpha| <= max_degree` in graded-lexicographic
/// order; empty for `max_degree = -1`.
pub fn enumerate_multi_indices(dim: usize, max_degree: i64) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    if max_degree < 0 {
        return out;
    }
    for total in 0..=max_degree as u32 {
        let mut current = vec![0u32; dim];
        compositions(total, 0, &mut current, &mut out);
    }
    out
}

fn compositions(remaining: u32, axis: usize, current: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if axis + 1 == current.len() {
        current[axis] = remaining;
        out.push(MultiIndex {
            exponents: current.clone(),
        });
        return;
    }
    for e in (0..=remaining).rev() {
        current[axis] = e;
        compositions(remaining - e, axis + 1, current, out);
    }
}

/// Lagrange basis `pi_alpha` of `P` at a unisolvent node set, stored as the
/// inverse of the monomial Vandermonde. Monomials are centered and scaled to
/// the cloud's bounding box to control conditioning.
#[derive(Debug, Clone)]
pub struct PolyBasis {
    indices: Vec<MultiIndex>,
    /// Column `alpha` holds the monomial coefficients of `pi_alpha`.
    coeff: DMatrix<f64>,
    nodes: Vec<Point>,
    node_indices: Vec<usize>,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl PolyBasis {
    /// Basis of the trivial space `P = {0}` (`k_min = 0`).
    pub fn empty(dim: usize) -> Self {
        PolyBasis {
            indices: Vec::new(),
            coeff: DMatrix::zeros(0, 0),
            nodes: Vec::new(),
            node_indices: Vec::new(),
            center: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// `N_min`, the number of basis functions.
    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    /// Indices of the unisolvent nodes within the originating cloud,
    /// recorded for reproducibility.
    pub fn node_indices(&self) -> &[usize] {
        &self.node_indices
    }

    fn monomials(&self, x: &[f64]) -> Vec<f64> {
        self.indices
            .iter()
            .map(|mi| {
                mi.exponents
                    .iter()
                    .enumerate()
                    .map(|(a, &e)| ((x[a] - self.center[a]) / self.scale[a]).powi(e as i32))
                    .product()
            })
            .collect()
    }

    /// Values `(pi_alpha(x))_alpha`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let m = self.monomials(x);
        (0..self.dim())
            .map(|alpha| {
                (0..self.dim())
                    .map(|beta| self.coeff[(beta, alpha)] * m[beta])
                    .sum()
            })
            .collect()
    }
}

fn box_center_scale(cloud: &PointCloud) -> (Vec<f64>, Vec<f64>) {
    let bbox = bounding_box(cloud, &(0..cloud.len()).collect::<Vec<_>>(), 0.0)
        .expect("non-empty cloud");
    let center: Vec<f64> = bbox
        .lo
        .iter()
        .zip(&bbox.hi)
        .map(|(l, h)| 0.5 * (l + h))
        .collect();
    let scale: Vec<f64> = bbox
        .lo
        .iter()
        .zip(&bbox.hi)
        .map(|(l, h)| {
            let half = 0.5 * (h - l);
            if half > 0.0 {
                half
            } else {
                1.0
            }
        })
        .collect();
    (center, scale)
}

/// Greedily selects `N_min` point indices whose monomial Vandermonde has full
/// rank, by row-pivoted elimination with a pivot threshold of `1e-8` relative
/// to the largest pivot seen.
pub fn select_unisolvent_subset(cloud: &PointCloud, spec: &KernelSpec) -> Result<Vec<usize>> {
    let n_min = spec.poly_space_dim();
    if n_min == 0 {
        return Ok(Vec::new());
    }
    let n = cloud.len();
    if n < n_min {
        return Err(Error::InvalidInput(format!(
            "need at least {n_min} points for the polynomial space, got {n}"
        )));
    }
    let indices = enumerate_multi_indices(cloud.dim(), spec.k_min() as i64 - 1);
    let (center, scale) = box_center_scale(cloud);
    let mut work = DMatrix::zeros(n, n_min);
    for (i, p) in cloud.points().iter().enumerate() {
        for (j, mi) in indices.iter().enumerate() {
            work[(i, j)] = mi
                .exponents
                .iter()
                .enumerate()
                .map(|(a, &e)| ((p.coords[a] - center[a]) / scale[a]).powi(e as i32))
                .product::<f64>();
        }
    }
    let mut chosen = Vec::with_capacity(n_min);
    let mut used = vec![false; n];
    let mut max_pivot = 0.0f64;
    for col in 0..n_min {
        let mut pivot_row = None;
        let mut pivot_val = 0.0;
        for row in 0..n {
            if !used[row] && work[(row, col)].abs() > pivot_val {
                pivot_val = work[(row, col)].abs();
                pivot_row = Some(row);
            }
        }
        max_pivot = max_pivot.max(pivot_val);
        let row = match pivot_row {
            Some(r) if pivot_val > 1e-8 * max_pivot => r,
            _ => return Err(Error::NotUnisolvent),
        };
        used[row] = true;
        chosen.push(row);
        let inv = 1.0 / work[(row, col)];
        for r in 0..n {
            if r == row {
                continue;
            }
            let factor = work[(r, col)] * inv;
            if factor != 0.0 {
                for c in col..n_min {
                    let sub = factor * work[(row, c)];
                    work[(r, c)] -= sub;
                }
            }
        }
    }
    Ok(chosen)
}

/// Builds the Lagrange basis at the given unisolvent nodes. The coefficient
/// matrix is the inverse of the monomial Vandermonde; the Kronecker property
/// `pi_beta(xi_alpha) = delta_{alpha beta}` is verified to 1e-10 absolute.
pub fn build_lagrange_basis(
    cloud: &PointCloud,
    node_indices: &[usize],
    spec: &KernelSpec,
) -> Result<PolyBasis> {
    let n_min = spec.poly_space_dim();
    if n_min == 0 {
        return Ok(PolyBasis::empty(cloud.dim()));
    }
    if node_indices.len() != n_min {
        return Err(Error::InvalidInput(format!(
            "expected {n_min} unisolvent nodes, got {}",
            node_indices.len()
        )));
    }
    let indices = enumerate_multi_indices(cloud.dim(), spec.k_min() as i64 - 1);
    let (center, scale) = box_center_scale(cloud);
    let nodes: Vec<Point> = node_indices
        .iter()
        .map(|&i| cloud.point(i).clone())
        .collect();
    let mut vander = DMatrix::zeros(n_min, n_min);
    for (g, node) in nodes.iter().enumerate() {
        for (j, mi) in indices.iter().enumerate() {
            vander[(g, j)] = mi
                .exponents
                .iter()
                .enumerate()
                .map(|(a, &e)| ((node.coords[a] - center[a]) / scale[a]).powi(e as i32))
                .product();
        }
    }
    let coeff = vander
        .clone()
        .try_inverse()
        .ok_or(Error::NotUnisolvent)?;
    let basis = PolyBasis {
        indices,
        coeff,
        nodes,
        node_indices: node_indices.to_vec(),
        center,
        scale,
    };
    // Kronecker property
    for (g, node) in basis.nodes.iter().enumerate() {
        let vals = basis.eval(&node.coords);
        for (alpha, &v) in vals.iter().enumerate() {
            let target = if alpha == g { 1.0 } else { 0.0 };
            if (v - target).abs() > 1e-10 {
                return Err(Error::NotUnisolvent);
            }
        }
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_uniform_grid, AxisBox};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn cloud_from(coords: &[&[f64]]) -> PointCloud {
        let dim = coords[0].len();
        PointCloud::new(
            dim,
            coords.iter().map(|c| Point::new(c.to_vec())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn multi_index_enumeration() {
        let idx = enumerate_multi_indices(2, 1);
        let exps: Vec<Vec<u32>> = idx.into_iter().map(|m| m.exponents).collect();
        assert_eq!(exps, vec![vec![0, 0], vec![1, 0], vec![0, 1]]);

        let idx = enumerate_multi_indices(1, 2);
        let exps: Vec<Vec<u32>> = idx.into_iter().map(|m| m.exponents).collect();
        assert_eq!(exps, vec![vec![0], vec![1], vec![2]]);

        let idx = enumerate_multi_indices(3, 0);
        assert_eq!(idx.len(), 1);
        assert_eq!(idx[0].exponents, vec![0, 0, 0]);

        assert!(enumerate_multi_indices(2, -1).is_empty());
    }

    #[test]
    fn unisolvent_empty_for_kmin_zero() {
        let cloud = cloud_from(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 0.5]]);
        let spec = KernelSpec::matern(2, 2, 1.0).unwrap();
        assert!(select_unisolvent_subset(&cloud, &spec).unwrap().is_empty());
    }

    #[test]
    fn unisolvent_grid_noncollinear() {
        let cloud = generate_uniform_grid(2, 3, &AxisBox::unit(2)).unwrap();
        let spec = KernelSpec::thin_plate_spline(2, 2).unwrap();
        let idx = select_unisolvent_subset(&cloud, &spec).unwrap();
        assert_eq!(idx.len(), 3);
        // full rank check by direct elimination: Vandermonde determinant != 0
        let pts: Vec<&Point> = idx.iter().map(|&i| cloud.point(i)).collect();
        let det = {
            let m = DMatrix::from_fn(3, 3, |r, c| match c {
                0 => 1.0,
                1 => pts[r].coords[0],
                _ => pts[r].coords[1],
            });
            m.determinant()
        };
        assert!(det.abs() > 1e-12);
    }

    #[test]
    fn unisolvent_rejects_collinear() {
        // all points on a line: linear polynomials are not determined
        let cloud = cloud_from(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]]);
        let spec = KernelSpec::thin_plate_spline(2, 2).unwrap();
        assert!(matches!(
            select_unisolvent_subset(&cloud, &spec),
            Err(Error::NotUnisolvent)
        ));
    }

    #[test]
    fn lagrange_1d_linear() {
        let cloud = cloud_from(&[&[0.0], &[0.5], &[1.0]]);
        let spec = KernelSpec::thin_plate_spline(1, 2).unwrap();
        let idx = select_unisolvent_subset(&cloud, &spec).unwrap();
        assert_eq!(idx.len(), 2);
        let basis = build_lagrange_basis(&cloud, &idx, &spec).unwrap();
        // two nodes determine the linear Lagrange pair: pi_i(xi_j) = delta_ij
        // and partition of unity everywhere
        for x in [0.0, 0.25, 0.77, 1.0] {
            let vals = basis.eval(&[x]);
            assert_relative_eq!(vals.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lagrange_2d_hat_functions() {
        let cloud = cloud_from(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let spec = KernelSpec::thin_plate_spline(2, 2).unwrap();
        let basis = build_lagrange_basis(&cloud, &[0, 1, 2], &spec).unwrap();
        // barycentric hat functions 1-x-y, x, y
        let vals = basis.eval(&[0.3, 0.4]);
        assert_relative_eq!(vals[0], 1.0 - 0.3 - 0.4, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 0.3, epsilon = 1e-12);
        assert_relative_eq!(vals[2], 0.4, epsilon = 1e-12);
        // node order fixes which basis function is which; check the Kronecker
        // property instead of a particular ordering of the last two
        for (g, node) in basis.nodes().iter().enumerate() {
            let v = basis.eval(&node.coords);
            for (a, &x) in v.iter().enumerate() {
                assert_relative_eq!(x, if a == g { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        let _ = vals;
    }

    #[test]
    fn constants_basis() {
        // k_min = 1 gives P = constants and a single basis function pi == 1
        let cloud = cloud_from(&[&[0.4], &[0.9]]);
        let spec = KernelSpec::thin_plate_spline(1, 1).unwrap();
        assert_eq!(spec.k_min(), 1);
        let idx = select_unisolvent_subset(&cloud, &spec).unwrap();
        let basis = build_lagrange_basis(&cloud, &idx, &spec).unwrap();
        assert_eq!(basis.dim(), 1);
        assert_relative_eq!(basis.eval(&[0.123])[0], 1.0, epsilon = 1e-13);
    }

    #[test]
    fn partition_of_unity_reproduces_polynomials() {
        // Sum_alpha pi_alpha(x) p(xi_alpha) = p(x) for every p of degree < k_min
        let cloud = generate_uniform_grid(2, 4, &AxisBox::unit(2)).unwrap();
        let spec = KernelSpec::thin_plate_spline(2, 3).unwrap(); // k_min = 3, quadratics
        let idx = select_unisolvent_subset(&cloud, &spec).unwrap();
        let basis = build_lagrange_basis(&cloud, &idx, &spec).unwrap();
        assert_eq!(basis.dim(), 6);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..5 {
            let coef: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
            let poly = |x: f64, y: f64| {
                coef[0] + coef[1] * x + coef[2] * y + coef[3] * x * x + coef[4] * x * y
                    + coef[5] * y * y
            };
            for _ in 0..100 {
                let x = 3.0 * (rng.random::<f64>() - 0.5);
                let y = 3.0 * (rng.random::<f64>() - 0.5);
                let vals = basis.eval(&[x, y]);
                let recon: f64 = vals
                    .iter()
                    .zip(basis.nodes())
                    .map(|(v, node)| v * poly(node.coords[0], node.coords[1]))
                    .sum();
                let exact = poly(x, y);
                assert_relative_eq!(recon, exact, max_relative = 1e-9, epsilon = 1e-9);
            }
        }
    }
}
