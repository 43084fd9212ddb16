//! Binary snapshot format.
//!
//! ```text
//! "TXWM" | u16 format version | u32 metadata length | metadata (JSON) | payload
//! ```
//!
//! Metadata carries everything except forest trees, which follow as a compact
//! payload: `u32 tree count`, then per tree `u32 node count` and the arena
//! nodes in order (tag 0: split `u8 feature, f64 threshold, u32 left, u32
//! right`; tag 1: leaf `f64 prediction, u32 samples`). All integers are
//! little-endian. Decoding validates everything it reads, so a snapshot file
//! can be treated as untrusted input.

use std::io::{Cursor, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{Model, ModelKind, ModelSnapshot, WindowDescriptor};
use crate::forest::{Forest, ForestConfig, Tree, TreeNode};
use crate::glm::GlmModel;
use crate::mlp::MlpModel;
use crate::tx::{NetworkContext, N_FEATURES};

pub const MAGIC: &[u8; 4] = b"TXWM";
pub const FORMAT_VERSION: u16 = 1;

const MAX_METADATA: u32 = 64 << 20;
const SPLIT_BYTES: usize = 1 + 1 + 8 + 4 + 4;
const LEAF_BYTES: usize = 1 + 8 + 4;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("not a snapshot file (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot format version {0}")]
    UnsupportedVersion(u16),
    #[error("snapshot truncated")]
    Truncated,
    #[error("invalid snapshot metadata: {0}")]
    Metadata(String),
    #[error("invalid snapshot: {0}")]
    Invalid(String),
    #[error("{0} trailing bytes after snapshot")]
    TrailingBytes(usize),
}

impl From<std::io::Error> for CodecError {
    fn from(_: std::io::Error) -> Self {
        // Reads come from an in-memory cursor: the only failure is running
        // out of bytes.
        CodecError::Truncated
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum ModelMeta {
    Forest { config: ForestConfig, tree_seeds: Vec<u64> },
    Mlp { model: MlpModel },
    Glm { model: GlmModel },
    Baseline { mean: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    kind: ModelKind,
    version: u64,
    trained_at: u64,
    window: WindowDescriptor,
    context: NetworkContext,
    model: ModelMeta,
}

pub fn encode_snapshot(snapshot: &ModelSnapshot) -> Vec<u8> {
    let model = match &snapshot.model {
        Model::Forest(f) => ModelMeta::Forest { config: f.config.clone(), tree_seeds: f.tree_seeds.clone() },
        Model::Mlp(m) => ModelMeta::Mlp { model: m.clone() },
        Model::Glm(g) => ModelMeta::Glm { model: g.clone() },
        Model::Baseline { mean } => ModelMeta::Baseline { mean: *mean },
    };
    let meta = Metadata {
        kind: snapshot.kind,
        version: snapshot.version,
        trained_at: snapshot.trained_at,
        window: snapshot.window.clone(),
        context: snapshot.context,
        model,
    };
    let meta = serde_json::to_vec(&meta).expect("metadata always serializes");

    let mut out = Vec::with_capacity(meta.len() + 64);
    out.extend_from_slice(MAGIC);
    out.write_u16::<LittleEndian>(FORMAT_VERSION).unwrap();
    out.write_u32::<LittleEndian>(meta.len() as u32).unwrap();
    out.write_all(&meta).unwrap();
    if let Model::Forest(forest) = &snapshot.model {
        write_trees(&mut out, &forest.trees);
    }
    out
}

fn write_trees(out: &mut Vec<u8>, trees: &[Tree]) {
    out.write_u32::<LittleEndian>(trees.len() as u32).unwrap();
    for tree in trees {
        out.write_u32::<LittleEndian>(tree.nodes().len() as u32).unwrap();
        for node in tree.nodes() {
            match *node {
                TreeNode::Split { feature, threshold, left, right } => {
                    out.push(0);
                    out.push(feature);
                    out.write_f64::<LittleEndian>(threshold).unwrap();
                    out.write_u32::<LittleEndian>(left).unwrap();
                    out.write_u32::<LittleEndian>(right).unwrap();
                }
                TreeNode::Leaf { prediction, sample_count } => {
                    out.push(1);
                    out.write_f64::<LittleEndian>(prediction).unwrap();
                    out.write_u32::<LittleEndian>(sample_count).unwrap();
                }
            }
        }
    }
}

fn remaining(cur: &Cursor<&[u8]>) -> usize {
    cur.get_ref().len() - cur.position() as usize
}

fn read_trees(cur: &mut Cursor<&[u8]>) -> Result<Vec<Tree>, CodecError> {
    let count = cur.read_u32::<LittleEndian>()? as usize;
    // Every tree needs at least a count and one leaf.
    if count.saturating_mul(4 + LEAF_BYTES) > remaining(cur) {
        return Err(CodecError::Truncated);
    }
    let mut trees = Vec::with_capacity(count);
    for _ in 0..count {
        let nodes = cur.read_u32::<LittleEndian>()? as usize;
        if nodes.saturating_mul(LEAF_BYTES.min(SPLIT_BYTES)) > remaining(cur) {
            return Err(CodecError::Truncated);
        }
        let mut arena = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            let node = match cur.read_u8()? {
                0 => TreeNode::Split {
                    feature: cur.read_u8()?,
                    threshold: cur.read_f64::<LittleEndian>()?,
                    left: cur.read_u32::<LittleEndian>()?,
                    right: cur.read_u32::<LittleEndian>()?,
                },
                1 => TreeNode::Leaf {
                    prediction: cur.read_f64::<LittleEndian>()?,
                    sample_count: cur.read_u32::<LittleEndian>()?,
                },
                tag => return Err(CodecError::Invalid(format!("unknown node tag {tag}"))),
            };
            arena.push(node);
        }
        trees.push(Tree::from_nodes(arena).map_err(|e| CodecError::Invalid(e.to_string()))?);
    }
    Ok(trees)
}

fn check_context(ctx: &NetworkContext) -> Result<(), CodecError> {
    ctx.validate().map_err(|e| CodecError::Invalid(e.to_string()))
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<ModelSnapshot, CodecError> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| CodecError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = cur.read_u16::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let meta_len = cur.read_u32::<LittleEndian>()?;
    if meta_len > MAX_METADATA || meta_len as usize > remaining(&cur) {
        return Err(CodecError::Truncated);
    }
    let start = cur.position() as usize;
    let meta_bytes = &bytes[start..start + meta_len as usize];
    cur.set_position((start + meta_len as usize) as u64);
    let meta: Metadata = serde_json::from_slice(meta_bytes).map_err(|e| CodecError::Metadata(e.to_string()))?;
    check_context(&meta.context)?;

    let model = match meta.model {
        ModelMeta::Forest { config, tree_seeds } => {
            config.validate().map_err(|e| CodecError::Invalid(e.to_string()))?;
            let trees = read_trees(&mut cur)?;
            if trees.is_empty() || trees.len() != config.tree_count || tree_seeds.len() != trees.len() {
                return Err(CodecError::Invalid("tree count does not match forest config".into()));
            }
            Model::Forest(Forest { trees, config, tree_seeds })
        }
        ModelMeta::Mlp { model } => {
            model.weights.validate().map_err(|e| CodecError::Invalid(e.to_string()))?;
            let s = &model.scaler;
            if s.means.len() != N_FEATURES
                || s.sigmas.len() != N_FEATURES
                || s.means.iter().chain(&s.sigmas).any(|v| !v.is_finite())
                || s.sigmas.iter().any(|&v| v < 0.0)
            {
                return Err(CodecError::Invalid("bad input standardization".into()));
            }
            Model::Mlp(model)
        }
        ModelMeta::Glm { model } => {
            model.validate().map_err(|e| CodecError::Invalid(e.to_string()))?;
            Model::Glm(model)
        }
        ModelMeta::Baseline { mean } => {
            if !mean.is_finite() {
                return Err(CodecError::Invalid("non-finite baseline mean".into()));
            }
            Model::Baseline { mean }
        }
    };
    if model.kind() != meta.kind {
        return Err(CodecError::Invalid("model payload does not match kind".into()));
    }
    let trailing = remaining(&cur);
    if trailing != 0 {
        return Err(CodecError::TrailingBytes(trailing));
    }
    Ok(ModelSnapshot {
        kind: meta.kind,
        version: meta.version,
        trained_at: meta.trained_at,
        window: meta.window,
        context: meta.context,
        model,
    })
}
