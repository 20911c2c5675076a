//! `RFO1` binary container for fitted forests (little-endian).
//!
//! ```text
//! magic "RFO1" | u32 version | u32 n_classes | u32 n_features | u32 n_trees
//! u64 seed | f64 oob_accuracy (NaN when absent) | f64 × n_features importances
//! per tree:  u32 n_nodes
//!   per node: u32 feature (0xFFFFFFFF = leaf) | f64 threshold | u32 left | u32 right
//!             | u32 × n_classes training class counts
//! ```

use std::fs;
use std::path::Path;

use super::tree::{Node, Tree};
use super::ForestModel;
use crate::error::{Error, Result};

pub const FOREST_MAGIC: &[u8; 4] = b"RFO1";
pub const FOREST_VERSION: u32 = 1;

pub(crate) fn to_bytes(model: &ForestModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FOREST_MAGIC);
    for v in [
        FOREST_VERSION,
        model.n_classes as u32,
        model.n_features as u32,
        model.trees.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&model.seed.to_le_bytes());
    out.extend_from_slice(&model.oob_accuracy.unwrap_or(f64::NAN).to_le_bytes());
    for v in &model.importances {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in &model.trees {
        out.extend_from_slice(&(t.nodes.len() as u32).to_le_bytes());
        for (id, n) in t.nodes.iter().enumerate() {
            out.extend_from_slice(&n.feature.to_le_bytes());
            out.extend_from_slice(&n.threshold.to_le_bytes());
            out.extend_from_slice(&n.left.to_le_bytes());
            out.extend_from_slice(&n.right.to_le_bytes());
            for c in t.node_counts(id) {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("forest file truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<ForestModel> {
    let mut cur = Cursor { bytes, pos: 0 };
    if &cur.take::<4>()? != FOREST_MAGIC {
        return Err(Error::Format("bad magic, expected \"RFO1\"".into()));
    }
    let version = cur.u32()?;
    if version != FOREST_VERSION {
        return Err(Error::Format(format!("unsupported forest version {version}")));
    }
    let n_classes = cur.u32()? as usize;
    let n_features = cur.u32()? as usize;
    let n_trees = cur.u32()? as usize;
    if n_classes < 2 || n_features == 0 || n_trees == 0 {
        return Err(Error::Format(format!(
            "invalid forest header: {n_classes} classes, {n_features} features, {n_trees} trees"
        )));
    }
    let seed = cur.u64()?;
    let oob = cur.f64()?;
    let importances = (0..n_features).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes = cur.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut counts = Vec::with_capacity(n_nodes * n_classes);
        for _ in 0..n_nodes {
            let node = Node {
                feature: cur.u32()?,
                threshold: cur.f64()?,
                left: cur.u32()?,
                right: cur.u32()?,
            };
            if node.feature != super::tree::LEAF
                && (node.feature as usize >= n_features
                    || node.left as usize >= n_nodes
                    || node.right as usize >= n_nodes)
            {
                return Err(Error::Format("forest node references out of range".into()));
            }
            nodes.push(node);
            for _ in 0..n_classes {
                counts.push(cur.u32()?);
            }
        }
        if nodes.is_empty() {
            return Err(Error::Format("forest contains an empty tree".into()));
        }
        trees.push(Tree {
            nodes,
            counts,
            n_classes,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after forest payload",
            bytes.len() - cur.pos
        )));
    }
    Ok(ForestModel {
        trees,
        n_classes,
        n_features,
        importances,
        oob_accuracy: (!oob.is_nan()).then_some(oob),
        seed,
    })
}

pub fn write_forest(model: &ForestModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn read_forest(path: impl AsRef<Path>) -> Result<ForestModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
