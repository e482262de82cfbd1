//! H-matrix serialization: a JSON index describing the partition and block
//! layout, plus a binary payload of block matrices in the shared matrix
//! format.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{HBlock, HMatrix, LowRankBlock, Truncation};
use crate::assembly::{matrix_from_bytes, matrix_to_bytes};
use crate::clustering::{BlockPartition, ClusterTree};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct BlockEntry {
    row: usize,
    col: usize,
    kind: String,
    /// byte offsets of the payload records: one for dense, two for low-rank
    offsets: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct HMatrixIndex {
    n: usize,
    truncation: Truncation,
    partition: BlockPartition,
    blocks: Vec<BlockEntry>,
}

/// Writes `<prefix>.json` (index) and `<prefix>.bin` (block payloads).
pub fn save(h: &HMatrix, prefix: &Path) -> Result<()> {
    let mut payload: Vec<u8> = Vec::new();
    let mut blocks = Vec::new();
    let mut failed = false;
    h.for_each_block(&mut |i, j, b| {
        let mut offsets = Vec::new();
        let kind = match b {
            HBlock::Dense(d) => {
                offsets.push(payload.len() as u64);
                payload.extend_from_slice(&matrix_to_bytes(d));
                "dense"
            }
            HBlock::LowRank(lr) => {
                offsets.push(payload.len() as u64);
                payload.extend_from_slice(&matrix_to_bytes(&lr.x));
                offsets.push(payload.len() as u64);
                payload.extend_from_slice(&matrix_to_bytes(&lr.y));
                "lowrank"
            }
            HBlock::Sub { .. } => {
                failed = true;
                return;
            }
        };
        blocks.push(BlockEntry {
            row: i,
            col: j,
            kind: kind.into(),
            offsets,
        });
    });
    if failed {
        return Err(Error::InvalidInput("unexpected non-leaf block".into()));
    }
    let index = HMatrixIndex {
        n: h.n(),
        truncation: h.truncation(),
        partition: h.partition().clone(),
        blocks,
    };
    let json = serde_json::to_string(&index)
        .map_err(|e| Error::Parse(format!("hmatrix index: {e}")))?;
    std::fs::write(prefix.with_extension("json"), json)?;
    let mut f = std::fs::File::create(prefix.with_extension("bin"))?;
    f.write_all(&payload)?;
    Ok(())
}

fn record_at(payload: &[u8], off: u64) -> Result<nalgebra::DMatrix<f64>> {
    let off = off as usize;
    if payload.len() < off + 24 {
        return Err(Error::Parse("payload offset out of range".into()));
    }
    let rows = u64::from_le_bytes(payload[off + 8..off + 16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(payload[off + 16..off + 24].try_into().unwrap()) as usize;
    let end = off + 24 + 8 * rows * cols;
    if payload.len() < end {
        return Err(Error::Parse("payload record truncated".into()));
    }
    matrix_from_bytes(&payload[off..end])
}

/// Loads an H-matrix written by [`save`].
pub fn load(prefix: &Path) -> Result<HMatrix> {
    let json = std::fs::read_to_string(prefix.with_extension("json"))?;
    let index: HMatrixIndex =
        serde_json::from_str(&json).map_err(|e| Error::Parse(format!("hmatrix index: {e}")))?;
    let payload = std::fs::read(prefix.with_extension("bin"))?;
    let mut leaves: HashMap<(usize, usize), HBlock> = HashMap::new();
    for entry in &index.blocks {
        let block = match entry.kind.as_str() {
            "dense" => HBlock::Dense(record_at(&payload, entry.offsets[0])?),
            "lowrank" => HBlock::LowRank(LowRankBlock {
                x: record_at(&payload, entry.offsets[0])?,
                y: record_at(&payload, entry.offsets[1])?,
            }),
            other => return Err(Error::Parse(format!("unknown block kind {other:?}"))),
        };
        leaves.insert((entry.row, entry.col), block);
    }
    let partition = Arc::new(index.partition);
    let root = assemble(partition.tree(), &mut leaves, ClusterTree::ROOT, ClusterTree::ROOT)?;
    Ok(HMatrix::from_parts(partition, root, index.truncation))
}

fn assemble(
    tree: &ClusterTree,
    leaves: &mut HashMap<(usize, usize), HBlock>,
    i: usize,
    j: usize,
) -> Result<HBlock> {
    if let Some(b) = leaves.remove(&(i, j)) {
        return Ok(b);
    }
    let (i1, i2) = tree
        .node(i)
        .sons
        .ok_or_else(|| Error::Parse(format!("missing block ({i}, {j})")))?;
    let (j1, j2) = tree
        .node(j)
        .sons
        .ok_or_else(|| Error::Parse(format!("missing block ({i}, {j})")))?;
    Ok(HBlock::Sub {
        row_split: tree.node(i1).len(),
        col_split: tree.node(j1).len(),
        children: Box::new([
            assemble(tree, leaves, i1, j1)?,
            assemble(tree, leaves, i1, j2)?,
            assemble(tree, leaves, i2, j1)?,
            assemble(tree, leaves, i2, j2)?,
        ]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{build_block_partition, build_cluster_tree};
    use crate::geometry::{generate_uniform_grid, AxisBox};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};

    #[test]
    fn save_load_roundtrip() {
        let cloud = generate_uniform_grid(2, 8, &AxisBox::unit(2)).unwrap();
        let tree = build_cluster_tree(&cloud, 8).unwrap();
        let p = Arc::new(build_block_partition(tree, 2.0).unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let m = DMatrix::<f64>::from_fn(64, 64, |_, _| rng.random());
        let h = HMatrix::compress(&m, p, Truncation::FixedRank(5)).unwrap();

        let dir = std::env::temp_dir().join("rbfmat_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let prefix = dir.join("h");
        save(&h, &prefix).unwrap();
        let back = load(&prefix).unwrap();
        assert_eq!(back.n(), 64);
        let diff = (back.reconstruct() - h.reconstruct()).norm();
        assert_eq!(diff, 0.0, "serialized blocks must match bit for bit");
        std::fs::remove_dir_all(&dir).ok();
    }
}
