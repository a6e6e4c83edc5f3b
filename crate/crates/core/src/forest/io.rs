//! Binary forest file.
//!
//! ```text
//! "PDMF" | u16 version | u8 task | u32 n_features | u32 n_trees
//!        | trees (pre-order nodes) | f64 importance totals × n_features | u64 checksum
//! ```
//!
//! A node is a tag byte, `0` for a leaf followed by its f64 value, or `1`
//! for an internal node followed by a u32 feature index and an f64
//! threshold, then its left and right subtrees. Integers and floats are
//! little-endian; the checksum is 64-bit FNV-1a over the preceding bytes.
//! Several forests may be concatenated in one file.

use std::fs;
use std::path::Path;

use super::{Forest, ForestError, Result, Task, TreeNode};
use crate::lstm::fnv1a64;

pub const FOREST_MAGIC: &[u8; 4] = b"PDMF";
pub const FOREST_VERSION: u16 = 1;

const MAX_DEPTH: usize = 4096;

fn write_node(node: &TreeNode, out: &mut Vec<u8>) {
    match node {
        TreeNode::Leaf { value } => {
            out.push(0);
            out.extend_from_slice(&value.to_le_bytes());
        }
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            out.push(1);
            out.extend_from_slice(&(*feature as u32).to_le_bytes());
            out.extend_from_slice(&threshold.to_le_bytes());
            write_node(left, out);
            write_node(right, out);
        }
    }
}

pub fn write_forest(forest: &Forest, out: &mut Vec<u8>) {
    let start = out.len();
    out.extend_from_slice(FOREST_MAGIC);
    out.extend_from_slice(&FOREST_VERSION.to_le_bytes());
    out.push(match forest.task {
        Task::Regression => 0,
        Task::Classification => 1,
    });
    out.extend_from_slice(&(forest.n_features as u32).to_le_bytes());
    out.extend_from_slice(&(forest.trees.len() as u32).to_le_bytes());
    for t in &forest.trees {
        write_node(t, out);
    }
    for v in &forest.importance_totals {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let sum = fnv1a64(&out[start..]);
    out.extend_from_slice(&sum.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| ForestError::Format("truncated forest".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn node(&mut self, n_features: usize, depth: usize) -> Result<TreeNode> {
        if depth > MAX_DEPTH {
            return Err(ForestError::Format("tree too deep".into()));
        }
        match self.u8()? {
            0 => Ok(TreeNode::Leaf { value: self.f64()? }),
            1 => {
                let feature = self.u32()? as usize;
                if feature >= n_features {
                    return Err(ForestError::Format(format!("feature {feature} out of range")));
                }
                let threshold = self.f64()?;
                let left = Box::new(self.node(n_features, depth + 1)?);
                let right = Box::new(self.node(n_features, depth + 1)?);
                Ok(TreeNode::Internal {
                    feature,
                    threshold,
                    score: 0.0,
                    samples: 0,
                    left,
                    right,
                })
            }
            tag => Err(ForestError::Format(format!("bad node tag {tag}"))),
        }
    }
}

/// Decodes one forest from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn read_forest(bytes: &[u8]) -> Result<(Forest, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != FOREST_MAGIC {
        return Err(ForestError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != FOREST_VERSION {
        return Err(ForestError::Format(format!("unsupported forest version {version}")));
    }
    let task = match r.u8()? {
        0 => Task::Regression,
        1 => Task::Classification,
        t => return Err(ForestError::Format(format!("bad task tag {t}"))),
    };
    let n_features = r.u32()? as usize;
    let n_trees = r.u32()? as usize;
    if n_trees == 0 || n_features == 0 {
        return Err(ForestError::Format("empty forest".into()));
    }
    let mut trees = Vec::new();
    for _ in 0..n_trees {
        trees.push(r.node(n_features, 0)?);
    }
    let mut importance_totals = Vec::with_capacity(n_features.min(1 << 20));
    for _ in 0..n_features {
        importance_totals.push(r.f64()?);
    }
    let body_end = r.pos;
    let stored = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    if fnv1a64(&bytes[..body_end]) != stored {
        return Err(ForestError::Format("checksum mismatch".into()));
    }
    Ok((
        Forest {
            trees,
            task,
            n_features,
            importance_totals,
        },
        r.pos,
    ))
}

pub fn save_forests(forests: &[Forest], path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    for f in forests {
        write_forest(f, &mut out);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_forests(path: impl AsRef<Path>) -> Result<Vec<Forest>> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let (f, used) = read_forest(&bytes[pos..])?;
        out.push(f);
        pos += used;
    }
    Ok(out)
}
