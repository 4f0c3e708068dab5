//! Embedding files.
//!
//! Text format: a `DIM <d>` header line, then one record per line,
//! `clip_id<TAB>class_id<TAB>v0,v1,...` with `-` for a missing class and
//! floats printed in Rust's shortest round-trip form, so save/load is
//! bit-exact. A binary variant mirrors the feature-cache layout with a
//! `(count, dim)` header; its floats are written as f64 so both builds
//! round-trip losslessly.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use protolearn_core::Real;

use crate::error::{HarnessError, Result};

/// One stored embedding record.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub class_id: Option<u32>,
    pub vector: Vec<Real>,
}

/// Provider mapping clip ids to embeddings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, EmbeddingRecord>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable { dim, entries: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, clip_id: String, class_id: Option<u32>, vector: Vec<Real>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(HarnessError::runtime(format!(
                "embedding for {clip_id} has dim {}, table expects {}",
                vector.len(),
                self.dim
            )));
        }
        self.entries.insert(clip_id, EmbeddingRecord { class_id, vector });
        Ok(())
    }

    pub fn get(&self, clip_id: &str) -> Result<&EmbeddingRecord> {
        self.entries
            .get(clip_id)
            .ok_or_else(|| HarnessError::runtime(format!("clip id {clip_id} not in embedding table")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &EmbeddingRecord)> {
        self.entries.iter()
    }
}

fn fmt_class(class_id: Option<u32>) -> String {
    class_id.map_or_else(|| "-".to_string(), |c| c.to_string())
}

/// Write the text format.
pub fn write_text(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("DIM {}\n", table.dim()));
    for (id, rec) in table.iter() {
        let values: Vec<String> = rec.vector.iter().map(|v| format!("{v}")).collect();
        out.push_str(&format!("{id}\t{}\t{}\n", fmt_class(rec.class_id), values.join(",")));
    }
    std::fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}

/// Load the text format (the `load_precomputed` entry point).
pub fn read_text(path: &Path) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| HarnessError::io(path, e))?
        .ok_or_else(|| HarnessError::runtime(format!("{}: empty embedding file", path.display())))?;
    let dim: usize = header
        .strip_prefix("DIM ")
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| HarnessError::runtime(format!("{}: bad header {header:?}", path.display())))?;
    let mut table = EmbeddingTable::new(dim);
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (id, class, values) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => {
                return Err(HarnessError::runtime(format!(
                    "{}:{}: malformed record",
                    path.display(),
                    lineno + 2
                )));
            }
        };
        let class_id = if class == "-" {
            None
        } else {
            Some(class.parse().map_err(|_| {
                HarnessError::runtime(format!("{}:{}: bad class id {class:?}", path.display(), lineno + 2))
            })?)
        };
        let vector: Vec<Real> = values
            .split(',')
            .map(|v| v.parse::<Real>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| {
                HarnessError::runtime(format!("{}:{}: bad float", path.display(), lineno + 2))
            })?;
        if vector.len() != dim {
            return Err(HarnessError::runtime(format!(
                "{}:{}: dim {} != header {dim}",
                path.display(),
                lineno + 2,
                vector.len()
            )));
        }
        table.insert(id.to_string(), class_id, vector)?;
    }
    Ok(table)
}

/// Binary variant: `(count, dim)` u32 header, then per record
/// `id_len u32 | id bytes | class u32 (MAX = none) | dim x f64`.
pub fn write_binary(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&(table.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(table.dim() as u32).to_le_bytes());
    for (id, rec) in table.iter() {
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        buf.extend_from_slice(&rec.class_id.unwrap_or(u32::MAX).to_le_bytes());
        for &v in &rec.vector {
            buf.extend_from_slice(&(v as f64).to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| HarnessError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(HarnessError::runtime(format!("{}: truncated", self.path.display())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_binary(path: &Path) -> Result<EmbeddingTable> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| HarnessError::io(path, e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0, path };
    let count = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let mut table = EmbeddingTable::new(dim);
    for _ in 0..count {
        let id_len = c.u32()? as usize;
        let id = String::from_utf8(c.take(id_len)?.to_vec())
            .map_err(|_| HarnessError::runtime(format!("{}: bad clip id", path.display())))?;
        let class = c.u32()?;
        let class_id = (class != u32::MAX).then_some(class);
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            vector.push(f64::from_le_bytes(c.take(8)?.try_into().unwrap()) as Real);
        }
        table.insert(id, class_id, vector)?;
    }
    Ok(table)
}
