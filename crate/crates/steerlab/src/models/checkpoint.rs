//! Checkpoint file format.
//!
//! Layout, all integers little-endian:
//!   magic "MLCKPT1" | version u16 | arch id string | seed u64 |
//!   strategy tag string | param count u32 | per parameter:
//!   name string, rank u32, dims u32*rank, data f32*len.
//! Strings are a u32 byte length followed by UTF-8 bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{assemble, ArchitectureId, ParamSet, Provenance};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 7] = b"MLCKPT1";
const VERSION: u16 = 1;

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    write_string(&mut buf, &params.arch.name());
    buf.extend_from_slice(&params.provenance.seed.to_le_bytes());
    write_string(&mut buf, &params.provenance.strategy);
    buf.extend_from_slice(&(params.params().len() as u32).to_le_bytes());
    for (name, tensor) in params.params() {
        write_string(&mut buf, name);
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let fail = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));

    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let magic = cur.take(7).ok_or_else(|| fail("truncated magic"))?;
    if magic != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = cur.u16().ok_or_else(|| fail("truncated version"))?;
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let arch = ArchitectureId::parse(&cur.string().ok_or_else(|| fail("truncated arch id"))?)?;
    let seed = cur.u64().ok_or_else(|| fail("truncated seed"))?;
    let strategy = cur.string().ok_or_else(|| fail("truncated strategy tag"))?;
    let count = cur.u32().ok_or_else(|| fail("truncated param count"))? as usize;

    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = cur.string().ok_or_else(|| fail("truncated param name"))?;
        let rank = cur.u32().ok_or_else(|| fail("truncated rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32().ok_or_else(|| fail("truncated dims"))? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = cur.take(len * 4).ok_or_else(|| fail("truncated tensor data"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push((name, Tensor::new(shape, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(fail("trailing bytes"));
    }
    assemble(arch, params, Provenance { strategy, seed })
}

fn write_string(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return None;
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
    }

    fn string(&mut self) -> Option<String> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return None;
        }
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).ok()
    }
}
