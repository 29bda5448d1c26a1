//! Binary embedding containers.
//!
//! Both formats are little-endian:
//!
//! ```text
//! EGRD | u16 version=1 | u16 reserved=0 | u32 height | u32 width | u32 dim | f32 x height*width*dim
//! ESET | u16 version=1 | u16 reserved=0 | u32 count  | u32 dim   |           f32 x count*dim
//! ```
//!
//! An embedding set carries
//! its per-record metadata in a JSON Lines sidecar next to the binary file,
//! one object per record in the same order.

use std::path::{Path, PathBuf};

use super::patches::{PatchEmbeddingSet, PatchRecord};
use crate::embedding::EmbeddingGrid;
use crate::error::{Error, Result};
use crate::fsutil;

pub const GRID_MAGIC: &[u8; 4] = b"EGRD";
pub const SET_MAGIC: &[u8; 4] = b"ESET";
pub const FORMAT_VERSION: u16 = 1;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(self.what, "truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.what, "size overflow"))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.what,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.what, "bad magic"));
        }
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                what: self.what,
                expected: FORMAT_VERSION as u32,
                found: version as u32,
            });
        }
        self.u16()?;
        Ok(())
    }
}

fn put_header(out: &mut Vec<u8>, magic: &[u8; 4]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
}

fn to_u32(v: usize, field: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{field} {v} exceeds u32")))
}

pub fn encode_grid(grid: &EmbeddingGrid) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + grid.data().len() * 4);
    put_header(&mut out, GRID_MAGIC);
    out.extend_from_slice(&to_u32(grid.height(), "height")?.to_le_bytes());
    out.extend_from_slice(&to_u32(grid.width(), "width")?.to_le_bytes());
    out.extend_from_slice(&to_u32(grid.dim(), "dim")?.to_le_bytes());
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<EmbeddingGrid> {
    let mut cur = Cursor {
        buf: bytes,
        pos: 0,
        what: "embedding grid file",
    };
    cur.header(GRID_MAGIC)?;
    let height = cur.u32()? as usize;
    let width = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    let count = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::format("embedding grid file", "size overflow"))?;
    let data = cur.f32s(count)?;
    cur.finish()?;
    EmbeddingGrid::new(height, width, dim, data)
}

pub fn write_grid(path: &Path, grid: &EmbeddingGrid) -> Result<()> {
    fsutil::write_atomic(path, &encode_grid(grid)?)
}

pub fn read_grid(path: &Path) -> Result<EmbeddingGrid> {
    decode_grid(&fsutil::read(path)?)
}

/// Metadata sidecar path for an embedding-set file: same stem, `.jsonl`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("jsonl")
}

pub fn encode_set(set: &PatchEmbeddingSet) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut bin = Vec::with_capacity(16 + set.len() * set.dim() * 4);
    put_header(&mut bin, SET_MAGIC);
    bin.extend_from_slice(&to_u32(set.len(), "count")?.to_le_bytes());
    bin.extend_from_slice(&to_u32(set.dim(), "dim")?.to_le_bytes());
    let mut meta = Vec::new();
    for r in set.records() {
        for v in &r.embedding {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        serde_json::to_writer(&mut meta, r)?;
        meta.push(b'\n');
    }
    Ok((bin, meta))
}

pub fn decode_set(bin: &[u8], meta: &[u8]) -> Result<PatchEmbeddingSet> {
    let mut cur = Cursor {
        buf: bin,
        pos: 0,
        what: "embedding set file",
    };
    cur.header(SET_MAGIC)?;
    let count = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    let data = cur.f32s(
        count
            .checked_mul(dim)
            .ok_or_else(|| Error::format("embedding set file", "size overflow"))?,
    )?;
    cur.finish()?;

    let text = std::str::from_utf8(meta)
        .map_err(|_| Error::format("embedding set sidecar", "not UTF-8"))?;
    let mut records = Vec::with_capacity(count);
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let mut rec: PatchRecord = serde_json::from_str(line).map_err(|e| {
            Error::format("embedding set sidecar", format!("line {}: {e}", i + 1))
        })?;
        if i >= count {
            return Err(Error::format(
                "embedding set sidecar",
                format!("more than {count} records"),
            ));
        }
        rec.embedding = data[i * dim..(i + 1) * dim].to_vec();
        records.push(rec);
    }
    if records.len() != count {
        return Err(Error::format(
            "embedding set sidecar",
            format!("{} records for {count} embeddings", records.len()),
        ));
    }
    PatchEmbeddingSet::new(dim, records)
}

pub fn write_set(path: &Path, set: &PatchEmbeddingSet) -> Result<()> {
    let (bin, meta) = encode_set(set)?;
    fsutil::write_atomic(path, &bin)?;
    fsutil::write_atomic(&sidecar_path(path), &meta)
}

pub fn read_set(path: &Path) -> Result<PatchEmbeddingSet> {
    let bin = fsutil::read(path)?;
    let meta = fsutil::read(&sidecar_path(path))?;
    decode_set(&bin, &meta)
}
