//! Geometrically balanced cluster tree, sparse hierarchical block partition,
//! and the partition diagnostics (coverage, sparsity constant, norm bound).

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounding_box_of_range, AxisBox, PointCloud};

/// A node of the cluster tree: a contiguous index range in the tree ordering,
/// its bubble-inflated bounding box, and optional sons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cluster {
    pub range: Range<usize>,
    pub bbox: AxisBox,
    pub sons: Option<(usize, usize)>,
    pub level: usize,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.range.end - self.range.start
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn is_leaf(&self) -> bool {
        self.sons.is_none()
    }
}

/// Binary cluster tree over a permutation of `0..N`, built by recursive
/// geometric bisection of bubble-inflated bounding boxes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterTree {
    nodes: Vec<Cluster>,
    /// `perm[t]` is the original index of the point at tree position `t`.
    perm: Vec<usize>,
    leaf_size: usize,
    depth: usize,
}

impl ClusterTree {
    pub const ROOT: usize = 0;

    pub fn node(&self, id: usize) -> &Cluster {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.perm.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Number of levels; a single-node tree has depth 1.
    pub fn depth(&self) -> usize {
        self.depth
    }
}

/// Builds the cluster tree: split the node box at the midpoint of its longest
/// edge, points on the split plane going to the lower half; child boxes are
/// tight bounding boxes inflated by `h_min`; recursion stops at
/// `|I| <= leaf_size`. If every axis produces an empty side the node stays a
/// leaf (all extents zero).
pub fn build_cluster_tree(cloud: &PointCloud, leaf_size: usize) -> Result<ClusterTree> {
    if leaf_size == 0 {
        return Err(Error::InvalidInput("leaf_size must be at least 1".into()));
    }
    let n = cloud.len();
    let h_min = cloud.h_min();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut nodes: Vec<Cluster> = Vec::new();
    let root_box = bounding_box_of_range(cloud, &perm, 0..n, h_min);
    nodes.push(Cluster {
        range: 0..n,
        bbox: root_box,
        sons: None,
        level: 0,
    });
    let mut stack = vec![0usize];
    let mut depth = 1usize;
    while let Some(id) = stack.pop() {
        let range = nodes[id].range.clone();
        let level = nodes[id].level;
        if range.end - range.start <= leaf_size {
            continue;
        }
        let bbox = nodes[id].bbox.clone();
        let dim = bbox.dim();
        // axes by extent, longest first; ties resolved by axis index
        let mut axes: Vec<usize> = (0..dim).collect();
        axes.sort_by(|&a, &b| {
            let ea = bbox.hi[a] - bbox.lo[a];
            let eb = bbox.hi[b] - bbox.lo[b];
            eb.partial_cmp(&ea).unwrap().then(a.cmp(&b))
        });
        let mut split_at = None;
        for &axis in &axes {
            let mid = 0.5 * (bbox.lo[axis] + bbox.hi[axis]);
            let (lower, upper): (Vec<usize>, Vec<usize>) = perm[range.clone()]
                .iter()
                .partition(|&&orig| cloud.point(orig).coords[axis] <= mid);
            if lower.is_empty() || upper.is_empty() {
                continue;
            }
            let cut = range.start + lower.len();
            perm[range.start..cut].copy_from_slice(&lower);
            perm[cut..range.end].copy_from_slice(&upper);
            split_at = Some(cut);
            break;
        }
        let Some(cut) = split_at else {
            continue; // zero extent along every axis
        };
        let left = Cluster {
            range: range.start..cut,
            bbox: bounding_box_of_range(cloud, &perm, range.start..cut, h_min),
            sons: None,
            level: level + 1,
        };
        let right = Cluster {
            range: cut..range.end,
            bbox: bounding_box_of_range(cloud, &perm, cut..range.end, h_min),
            sons: None,
            level: level + 1,
        };
        let left_id = nodes.len();
        nodes.push(left);
        let right_id = nodes.len();
        nodes.push(right);
        nodes[id].sons = Some((left_id, right_id));
        depth = depth.max(level + 2);
        stack.push(right_id);
        stack.push(left_id);
    }
    Ok(ClusterTree {
        nodes,
        perm,
        leaf_size,
        depth,
    })
}

/// Sparse hierarchical block partition: cluster pairs covering `{0..N}^2`,
/// split into admissible (low-rank eligible) and small (dense) blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockPartition {
    pub admissible: Vec<(usize, usize)>,
    pub small: Vec<(usize, usize)>,
    pub eta: f64,
    tree: ClusterTree,
}

impl BlockPartition {
    pub fn tree(&self) -> &ClusterTree {
        &self.tree
    }

    pub fn n_points(&self) -> usize {
        self.tree.n_points()
    }

    /// One-sided admissibility `diam(B_I) <= eta * dist(B_I, B_J)`; the
    /// degenerate diagonal case `diam = dist = 0` counts as inadmissible.
    pub fn is_admissible(&self, row: usize, col: usize) -> bool {
        is_admissible(&self.tree, self.eta, row, col)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("partition serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("partition json: {e}")))
    }
}

fn is_admissible(tree: &ClusterTree, eta: f64, row: usize, col: usize) -> bool {
    let bi = &tree.node(row).bbox;
    let bj = &tree.node(col).bbox;
    let dist = bi.dist(bj);
    dist > 0.0 && bi.diam() <= eta * dist
}

/// Recursive descent from `(root, root)`: admissible pairs are emitted as
/// low-rank blocks, pairs with a leaf cluster as small blocks, anything else
/// recurses into the four son pairs.
pub fn build_block_partition(tree: ClusterTree, eta: f64) -> Result<BlockPartition> {
    if !(eta > 0.0) {
        return Err(Error::InvalidInput("eta must be positive".into()));
    }
    let mut admissible = Vec::new();
    let mut small = Vec::new();
    let mut stack = vec![(ClusterTree::ROOT, ClusterTree::ROOT)];
    while let Some((i, j)) = stack.pop() {
        if is_admissible(&tree, eta, i, j) {
            admissible.push((i, j));
            continue;
        }
        match (tree.node(i).sons, tree.node(j).sons) {
            (Some((i1, i2)), Some((j1, j2))) => {
                stack.push((i2, j2));
                stack.push((i2, j1));
                stack.push((i1, j2));
                stack.push((i1, j1));
            }
            _ => small.push((i, j)),
        }
    }
    Ok(BlockPartition {
        admissible,
        small,
        eta,
        tree,
    })
}

/// Outcome of the exact coverage and admissibility audit of a partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionDiagnostics {
    pub is_partition: bool,
    pub sparsity_constant: usize,
    pub n_adm: usize,
    pub n_small: usize,
}

/// Verifies coverage of `{0..n}^2` (counting array up to `n = 5000`, random
/// cell sampling above) and computes the sparsity constant, the maximum
/// number of partner blocks over all clusters.
pub fn validate_partition(p: &BlockPartition, n: usize) -> PartitionDiagnostics {
    let blocks: Vec<(usize, usize)> = p
        .admissible
        .iter()
        .chain(p.small.iter())
        .copied()
        .collect();
    let area: usize = blocks
        .iter()
        .map(|&(i, j)| p.tree().node(i).len() * p.tree().node(j).len())
        .sum();
    let mut is_partition = area == n * n && p.tree().n_points() == n;
    if is_partition {
        if n <= 5000 {
            let mut count = vec![0u8; n * n];
            'outer: for &(i, j) in &blocks {
                let ri = p.tree().node(i).range.clone();
                let rj = p.tree().node(j).range.clone();
                for r in ri {
                    for c in rj.clone() {
                        let cell = &mut count[r * n + c];
                        *cell += 1;
                        if *cell > 1 {
                            is_partition = false;
                            break 'outer;
                        }
                    }
                }
            }
            is_partition = is_partition && count.iter().all(|&c| c == 1);
        } else {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x706172);
            for _ in 0..2000 {
                let r = rng.random_range(0..n);
                let c = rng.random_range(0..n);
                let hits = blocks
                    .iter()
                    .filter(|&&(i, j)| {
                        p.tree().node(i).range.contains(&r) && p.tree().node(j).range.contains(&c)
                    })
                    .count();
                if hits != 1 {
                    is_partition = false;
                    break;
                }
            }
        }
    }
    let mut row_partners: HashMap<usize, usize> = HashMap::new();
    let mut col_partners: HashMap<usize, usize> = HashMap::new();
    for &(i, j) in &blocks {
        *row_partners.entry(i).or_insert(0) += 1;
        *col_partners.entry(j).or_insert(0) += 1;
    }
    let sparsity_constant = row_partners
        .values()
        .chain(col_partners.values())
        .copied()
        .max()
        .unwrap_or(0);
    PartitionDiagnostics {
        is_partition,
        sparsity_constant,
        n_adm: p.admissible.len(),
        n_small: p.small.len(),
    }
}

/// The norm-assembly inequality: `C_sp * depth * max` blockwise norm bounds
/// the spectral norm of any matrix split along the partition.
pub fn norm_upper_bound(
    p: &BlockPartition,
    blockwise_norms: &HashMap<(usize, usize), f64>,
) -> Result<f64> {
    let mut max_norm = 0.0f64;
    for &(i, j) in p.admissible.iter().chain(p.small.iter()) {
        let norm = blockwise_norms
            .get(&(i, j))
            .ok_or(Error::MissingBlockNorm { row: i, col: j })?;
        max_norm = max_norm.max(*norm);
    }
    let diag = validate_partition(p, p.n_points());
    Ok(diag.sparsity_constant as f64 * p.tree().depth() as f64 * max_norm)
}
