//! Points, boxes, distances and the grid generators used by the experiments.
//!
//! A [`PointCloud`] is an *ordered* list of pairwise-distinct points; the
//! ordering is part of the external contract (it determines the cluster-tree
//! permutation and thus the block pattern of every downstream structure).

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Euclidean distance to `other`.
    pub fn dist(&self, other: &Point) -> f64 {
        self.dist_sq(other).sqrt()
    }

    fn dist_sq(&self, other: &Point) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// An axes-parallel box `[lo_1, hi_1] x ... x [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::InvalidInput(
                "box must satisfy lo <= hi componentwise".into(),
            ));
        }
        Ok(AxisBox { lo, hi })
    }

    /// The unit box `[0,1]^d`.
    pub fn unit(dim: usize) -> Self {
        AxisBox {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Euclidean diameter `||hi - lo||_2`.
    pub fn diam(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean distance between two boxes, computed componentwise as
    /// `||(max(0, a.lo - b.hi, b.lo - a.hi))_i||_2`.
    pub fn dist(&self, other: &AxisBox) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .map(|((alo, ahi), (blo, bhi))| {
                let gap = (alo - bhi).max(blo - ahi).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Grow the box by `delta` on every side.
    pub fn inflate(&self, delta: f64) -> AxisBox {
        AxisBox {
            lo: self.lo.iter().map(|l| l - delta).collect(),
            hi: self.hi.iter().map(|h| h + delta).collect(),
        }
    }
}

/// Ordered list of pairwise-distinct interpolation points with the cached
/// separation distance `h_min = (1/2) min_{n != m} ||x_n - x_m||_2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointCloud {
    dim: usize,
    points: Vec<Point>,
    sep_distance: f64,
}

impl PointCloud {
    /// Builds a cloud, rejecting empty input, inconsistent dimensions,
    /// non-finite coordinates and exactly-equal duplicate points.
    pub fn new(dim: usize, points: Vec<Point>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidInput(
                "point cloud must contain at least one point".into(),
            ));
        }
        for p in &points {
            if p.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: p.dim(),
                });
            }
            if p.coords.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput("non-finite coordinate".into()));
            }
        }
        let sep_distance = match min_pairwise_dist_sq(&points) {
            Some((dsq, i, j)) => {
                if dsq == 0.0 {
                    return Err(Error::DuplicatePoint(i, j));
                }
                0.5 * dsq.sqrt()
            }
            None => 0.0,
        };
        Ok(PointCloud {
            dim,
            points,
            sep_distance,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Point {
        &self.points[i]
    }

    /// Cached `h_min`; `0.0` for a single-point cloud.
    pub fn h_min(&self) -> f64 {
        self.sep_distance
    }

    /// Separation distance per its definition; errors for fewer than two points.
    pub fn separation_distance(&self) -> Result<f64> {
        if self.len() < 2 {
            return Err(Error::NeedTwoPoints);
        }
        Ok(self.sep_distance)
    }

    /// Plain-text serialization: first line `d N`, then one point per line
    /// with 17 significant digits.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.dim, self.len());
        for p in &self.points {
            let line: Vec<String> = p.coords.iter().map(|c| format!("{c:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty point file".into()))?;
        let mut it = header.split_whitespace();
        let dim: usize = parse_field(it.next(), "d")?;
        let n: usize = parse_field(it.next(), "N")?;
        let mut points = Vec::with_capacity(n);
        for line in lines.take(n) {
            let coords: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad coordinate {t:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            points.push(Point::new(coords));
        }
        if points.len() != n {
            return Err(Error::Parse(format!(
                "expected {n} points, found {}",
                points.len()
            )));
        }
        PointCloud::new(dim, points)
    }
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, name: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Parse(format!("missing header field {name}")))?
        .parse::<T>()
        .map_err(|_| Error::Parse(format!("bad header field {name}")))
}

fn min_pairwise_dist_sq(points: &[Point]) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let dsq = points[i].dist_sq(&points[j]);
            if best.map_or(true, |(b, _, _)| dsq < b) {
                best = Some((dsq, i, j));
            }
        }
    }
    best
}

/// `(1/2) min_{n != m} ||x_n - x_m||_2` by the brute-force double loop.
pub fn separation_distance(cloud: &PointCloud) -> Result<f64> {
    cloud.separation_distance()
}

/// Per-axis coordinates of a (possibly graded) grid, mapped affinely into
/// `[lo, hi]`. `beta == 1` is the uniform grid, bit for bit.
fn axis_coords(n: usize, beta: f64, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let frac = i as f64 / (n - 1) as f64;
            let t = if beta == 1.0 { frac } else { frac.powf(beta) };
            lo + (hi - lo) * t
        })
        .collect()
}

/// Tensor grid of `n_per_axis^d` points, ordered row-wise with the last axis
/// varying fastest.
pub fn generate_uniform_grid(dim: usize, n_per_axis: usize, domain: &AxisBox) -> Result<PointCloud> {
    generate_graded_grid(dim, n_per_axis, 1.0, domain)
}

/// Tensor grid with per-axis power grading `t_i = (i/(n-1))^beta` toward the
/// domain's origin corner. `beta = 1` reproduces [`generate_uniform_grid`].
pub fn generate_graded_grid(
    dim: usize,
    n_per_axis: usize,
    beta: f64,
    domain: &AxisBox,
) -> Result<PointCloud> {
    if n_per_axis < 2 {
        return Err(Error::InvalidInput("n_per_axis must be at least 2".into()));
    }
    if !(beta >= 1.0) {
        return Err(Error::InvalidInput("grading exponent must be >= 1".into()));
    }
    if domain.dim() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            got: domain.dim(),
        });
    }
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|a| axis_coords(n_per_axis, beta, domain.lo[a], domain.hi[a]))
        .collect();
    let n_total = n_per_axis.pow(dim as u32);
    let mut points = Vec::with_capacity(n_total);
    let mut idx = vec![0usize; dim];
    loop {
        points.push(Point::new((0..dim).map(|a| axes[a][idx[a]]).collect()));
        // odometer increment, last axis fastest
        let mut a = dim;
        loop {
            if a == 0 {
                return PointCloud::new(dim, points);
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < n_per_axis {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Smallest axis box containing the selected points, inflated by `inflate_by`
/// on every side.
pub fn bounding_box(cloud: &PointCloud, indices: &[usize], inflate_by: f64) -> Result<AxisBox> {
    if indices.is_empty() {
        return Err(Error::InvalidInput(
            "bounding box of an empty index set".into(),
        ));
    }
    let d = cloud.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for &i in indices {
        for (a, &c) in cloud.point(i).coords.iter().enumerate() {
            lo[a] = lo[a].min(c);
            hi[a] = hi[a].max(c);
        }
    }
    Ok(AxisBox { lo, hi }.inflate(inflate_by))
}

/// Bounding box of a contiguous index range, same semantics as [`bounding_box`].
pub(crate) fn bounding_box_of_range(
    cloud: &PointCloud,
    perm: &[usize],
    range: Range<usize>,
    inflate_by: f64,
) -> AxisBox {
    let d = cloud.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for t in range {
        for (a, &c) in cloud.point(perm[t]).coords.iter().enumerate() {
            lo[a] = lo[a].min(c);
            hi[a] = hi[a].max(c);
        }
    }
    AxisBox { lo, hi }.inflate(inflate_by)
}
