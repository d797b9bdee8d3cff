//! Binary model format. See `docs/formats.md` for the byte layout.

use std::path::Path;

use super::graph::{Graph, GraphError, Node, Op, MAX_NODES};
use super::tensor::{Tensor, FRAC, MAX_RANK};
use crate::hash::{hash_parts, Digest};

pub const MAGIC: &[u8; 4] = b"OPML";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("invalid model graph: {0}")]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn parse_err(offset: usize, msg: impl Into<String>) -> ModelError {
    ModelError::Parse {
        offset,
        msg: msg.into(),
    }
}

pub fn to_bytes(graph: &Graph) -> Vec<u8> {
    let mut out = Vec::new();
    let mut blob = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(FRAC as u16).to_le_bytes());
    out.extend_from_slice(&(graph.len() as u32).to_le_bytes());
    out.extend_from_slice(&(graph.output_id() as u32).to_le_bytes());
    for node in graph.nodes() {
        out.push(node.op as u8);
        out.push(node.inputs.len() as u8);
        for &i in &node.inputs {
            out.extend_from_slice(&(i as u32).to_le_bytes());
        }
        match node.op {
            Op::Input => {
                let shape = node.input_shape.as_ref().expect("validated graph");
                out.push(shape.len() as u8);
                for &d in shape {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
            }
            Op::Const => {
                let bytes = node.value.as_ref().expect("validated graph").to_bytes();
                out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
                out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
                blob.extend_from_slice(&bytes);
            }
            _ => {}
        }
    }
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(&blob);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let s = self
            .pos
            .checked_add(n)
            .and_then(|end| self.bytes.get(self.pos..end))
            .ok_or_else(|| parse_err(self.pos, format!("truncated {what}")))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, ModelError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

enum Pending {
    Input(Vec<usize>),
    Const { at: usize, offset: usize, len: usize },
    None,
}

pub fn from_bytes(bytes: &[u8]) -> Result<Graph, ModelError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(parse_err(0, "bad magic"));
    }
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(parse_err(4, format!("unsupported version {version}")));
    }
    let frac = c.u16("frac")?;
    if frac as u32 != FRAC {
        return Err(parse_err(6, format!("unsupported frac {frac}")));
    }
    let count = c.u32("node count")? as usize;
    if count == 0 || count > MAX_NODES {
        return Err(parse_err(8, format!("node count {count} out of range")));
    }
    let output = c.u32("output id")? as usize;
    let mut skeleton = Vec::with_capacity(count);
    for _ in 0..count {
        let at = c.pos;
        let op_byte = c.u8("node op")?;
        let op = Op::from_u8(op_byte).ok_or_else(|| parse_err(at, format!("unknown op {op_byte}")))?;
        let n = c.u8("input count")? as usize;
        let inputs = (0..n)
            .map(|_| c.u32("input id").map(|v| v as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let payload = match op {
            Op::Input => {
                let rank = c.u8("input rank")? as usize;
                if rank == 0 || rank > MAX_RANK {
                    return Err(parse_err(c.pos - 1, format!("bad input rank {rank}")));
                }
                let dims = (0..rank)
                    .map(|_| c.u32("input dim").map(|v| v as usize))
                    .collect::<Result<Vec<_>, _>>()?;
                Pending::Input(dims)
            }
            Op::Const => {
                let at = c.pos;
                let offset = c.u32("const offset")? as usize;
                let len = c.u32("const length")? as usize;
                Pending::Const { at, offset, len }
            }
            _ => Pending::None,
        };
        skeleton.push((op, inputs, payload));
    }
    let blob_len = c.u32("blob length")? as usize;
    let blob_start = c.pos;
    let blob = c.take(blob_len, "constant blob")?;
    if c.pos != bytes.len() {
        return Err(parse_err(c.pos, "trailing bytes after blob"));
    }
    let mut nodes = Vec::with_capacity(count);
    for (op, inputs, payload) in skeleton {
        let (input_shape, value) = match payload {
            Pending::Input(dims) => (Some(dims), None),
            Pending::Const { at, offset, len } => {
                let slice = offset
                    .checked_add(len)
                    .and_then(|end| blob.get(offset..end))
                    .ok_or_else(|| parse_err(at, "constant outside blob"))?;
                let t =
                    Tensor::from_bytes(slice).map_err(|e| parse_err(blob_start + offset, format!("constant: {e}")))?;
                (None, Some(t))
            }
            Pending::None => (None, None),
        };
        nodes.push(Node {
            op,
            inputs,
            input_shape,
            value,
        });
    }
    Ok(Graph::new(nodes, output)?)
}

pub fn save(graph: &Graph, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, to_bytes(graph)).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Graph, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

/// Digest of the canonical model encoding.
pub fn model_digest(graph: &Graph) -> Digest {
    hash_parts(&[b"opml/model/v1", &to_bytes(graph)])
}
