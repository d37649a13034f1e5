//! Model persistence.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "OPTIFRST"
//! version    u32
//! header     u64 length + JSON (format version, config, scaling, constants)
//! body       u64 length + binary trees in pre-order
//! ```
//!
//! Node encoding: `tag u8` (0 leaf, 1 LSH, 2 learned), `depth u32`,
//! `size u64`, then for LSH nodes `dim u32, a[dim] f64, b f64, w f64,
//! children u32, buckets[children] i64`, and for learned nodes
//! `children u32, dim u32, centres[children * dim] f64`. Children follow
//! their parent.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::data::MinMaxScaler;
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestConfig};
use crate::lsh_tree::E2LshFunction;
use crate::tree::{NodeKind, TreeNode};

pub const MAGIC: &[u8; 8] = b"OPTIFRST";
pub const FORMAT_VERSION: u32 = 1;

const TAG_LEAF: u8 = 0;
const TAG_LSH: u8 = 1;
const TAG_LEARNED: u8 = 2;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ForestConfig,
    psi_effective: usize,
    epsilon_used: usize,
    n_features: usize,
    c_psi: f64,
    scaler: Option<MinMaxScaler>,
    tree_count: usize,
}

fn corrupt(what: impl std::fmt::Display) -> Error {
    Error::Model(format!("corrupted or truncated file ({what})"))
}

pub fn encode(forest: &Forest) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        config: forest.config.clone(),
        psi_effective: forest.psi_effective,
        epsilon_used: forest.epsilon_used,
        n_features: forest.n_features,
        c_psi: forest.c_psi,
        scaler: forest.scaler.clone(),
        tree_count: forest.trees.len(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Model(e.to_string()))?;
    let mut body = Vec::new();
    for tree in &forest.trees {
        write_node(&mut body, tree)?;
    }

    let mut out = Vec::with_capacity(8 + 4 + 16 + header.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    out.write_u64::<LittleEndian>(header.len() as u64)?;
    out.extend_from_slice(&header);
    out.write_u64::<LittleEndian>(body.len() as u64)?;
    out.extend_from_slice(&body);
    Ok(out)
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        corrupt(e)
    }
}

fn write_node(out: &mut Vec<u8>, node: &TreeNode) -> Result<()> {
    let tag = match node.kind {
        NodeKind::Leaf => TAG_LEAF,
        NodeKind::Lsh { .. } => TAG_LSH,
        NodeKind::Learned { .. } => TAG_LEARNED,
    };
    out.write_u8(tag)?;
    out.write_u32::<LittleEndian>(node.depth as u32)?;
    out.write_u64::<LittleEndian>(node.size as u64)?;
    match &node.kind {
        NodeKind::Leaf => {}
        NodeKind::Lsh { function, buckets } => {
            out.write_u32::<LittleEndian>(function.a.len() as u32)?;
            for &x in &function.a {
                out.write_f64::<LittleEndian>(x)?;
            }
            out.write_f64::<LittleEndian>(function.b)?;
            out.write_f64::<LittleEndian>(function.w)?;
            out.write_u32::<LittleEndian>(buckets.len() as u32)?;
            for &k in buckets {
                out.write_i64::<LittleEndian>(k)?;
            }
        }
        NodeKind::Learned { centres } => {
            out.write_u32::<LittleEndian>(centres.len() as u32)?;
            out.write_u32::<LittleEndian>(centres.first().map_or(0, Vec::len) as u32)?;
            for &x in centres.iter().flatten() {
                out.write_f64::<LittleEndian>(x)?;
            }
        }
    }
    for child in &node.children {
        write_node(out, child)?;
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<Forest> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(|_| Error::Model("not a model file".into()))?;
    if &magic != MAGIC {
        return Err(Error::Model("not a model file (bad magic)".into()));
    }
    let version = cur.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_bytes = read_block(&mut cur)?;
    let header: Header = serde_json::from_slice(&header_bytes).map_err(corrupt)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let body = read_block(&mut cur)?;
    if (cur.position() as usize) != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }

    let mut body = Cursor::new(body.as_slice());
    let trees = (0..header.tree_count)
        .map(|_| read_node(&mut body, header.n_features, 0))
        .collect::<Result<Vec<_>>>()?;
    if (body.position() as usize) != body.get_ref().len() {
        return Err(corrupt("unexpected bytes after the last tree"));
    }
    Ok(Forest {
        trees,
        config: header.config,
        psi_effective: header.psi_effective,
        epsilon_used: header.epsilon_used,
        n_features: header.n_features,
        c_psi: header.c_psi,
        scaler: header.scaler,
    })
}

fn read_block(cur: &mut Cursor<&[u8]>) -> Result<Vec<u8>> {
    let len = cur.read_u64::<LittleEndian>()? as usize;
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if len > remaining {
        return Err(corrupt(format!("block of {len} bytes but {remaining} remain")));
    }
    let mut buf = vec![0u8; len];
    cur.read_exact(&mut buf)?;
    Ok(buf)
}

/// Guards allocation sizes read from the file.
fn bounded(cur: &Cursor<&[u8]>, count: usize, item_bytes: usize) -> Result<usize> {
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if count.saturating_mul(item_bytes) > remaining {
        return Err(corrupt("length field exceeds file size"));
    }
    Ok(count)
}

const MAX_NESTING: usize = 4096;

fn read_node(cur: &mut Cursor<&[u8]>, n_features: usize, nesting: usize) -> Result<TreeNode> {
    if nesting > MAX_NESTING {
        return Err(corrupt("tree nesting too deep"));
    }
    let tag = cur.read_u8()?;
    let depth = cur.read_u32::<LittleEndian>()? as usize;
    let size = cur.read_u64::<LittleEndian>()? as usize;
    let (kind, n_children) = match tag {
        TAG_LEAF => (NodeKind::Leaf, 0),
        TAG_LSH => {
            let dim = cur.read_u32::<LittleEndian>()? as usize;
            if dim != n_features {
                return Err(corrupt(format!("LSH node of dimension {dim}")));
            }
            let a = (0..bounded(cur, dim, 8)?)
                .map(|_| cur.read_f64::<LittleEndian>())
                .collect::<std::io::Result<Vec<_>>>()?;
            let b = cur.read_f64::<LittleEndian>()?;
            let w = cur.read_f64::<LittleEndian>()?;
            let n = cur_u32(cur)?;
            let n = bounded(cur, n, 8)?;
            let buckets = (0..n)
                .map(|_| cur.read_i64::<LittleEndian>())
                .collect::<std::io::Result<Vec<_>>>()?;
            (
                NodeKind::Lsh {
                    function: E2LshFunction::new(a, b, w),
                    buckets,
                },
                n,
            )
        }
        TAG_LEARNED => {
            let n = cur_u32(cur)?;
            let dim = cur.read_u32::<LittleEndian>()? as usize;
            if dim != n_features {
                return Err(corrupt(format!("learned node of dimension {dim}")));
            }
            bounded(cur, n.saturating_mul(dim), 8)?;
            let centres = (0..n)
                .map(|_| {
                    (0..dim)
                        .map(|_| cur.read_f64::<LittleEndian>())
                        .collect::<std::io::Result<Vec<_>>>()
                })
                .collect::<std::io::Result<Vec<_>>>()?;
            (NodeKind::Learned { centres }, n)
        }
        other => return Err(corrupt(format!("unknown node tag {other}"))),
    };
    if tag != TAG_LEAF && n_children == 0 {
        return Err(corrupt("internal node without children"));
    }
    let children = (0..n_children)
        .map(|_| read_node(cur, n_features, nesting + 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(TreeNode {
        kind,
        depth,
        size,
        children,
    })
}

fn cur_u32(cur: &mut Cursor<&[u8]>) -> Result<usize> {
    Ok(cur.read_u32::<LittleEndian>()? as usize)
}

pub fn save_model(forest: &Forest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(forest)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Forest> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
