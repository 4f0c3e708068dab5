//! Binary checkpoint format for the extractor, the adapter, and the
//! prototype store.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "PLCP" | version u32 | flags u8
//! [extractor]  config (6 fields) | frozen u8 | params
//! [adapter]    dim u32 | bias u8 | temperature f64 | params
//! store        dim u32 | session u32 | count u32 | {class u32, dim x f64}*
//! crc32 u32    over every preceding byte
//! ```
//!
//! Parameter payloads are always written as `f64`, so round trips are
//! bit-exact in both the default and the `f32` build. Encoding is fully
//! deterministic: encode(decode(x)) == x byte for byte.

use alloc::vec::Vec;

use crate::adapter::PrototypeAdapter;
use crate::classifier::PrototypeStore;
use crate::error::{CoreError, Result};
use crate::extractor::{EEConfig, EmbeddingExtractor};
use crate::optim::Param;
use crate::Real;

pub const MAGIC: [u8; 4] = *b"PLCP";
pub const VERSION: u32 = 1;

/// Everything a session needs to resume: models plus classifier state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub extractor: Option<EmbeddingExtractor>,
    pub adapter: Option<PrototypeAdapter>,
    pub store: PrototypeStore,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_real(out: &mut Vec<u8>, v: Real) {
    put_f64(out, v as f64);
}

fn put_params(out: &mut Vec<u8>, params: &[Param]) {
    put_u32(out, params.len() as u32);
    for p in params {
        out.push(p.shape.len() as u8);
        for &e in &p.shape {
            put_u32(out, e as u32);
        }
        put_u32(out, p.data.len() as u32);
        for &v in &p.data {
            put_real(out, v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::Corrupt("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
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

    fn real(&mut self) -> Result<Real> {
        Ok(self.f64()? as Real)
    }

    fn params(&mut self) -> Result<Vec<Param>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let rank = self.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u32()? as usize);
            }
            let len = self.u32()? as usize;
            if shape.iter().product::<usize>() != len {
                return Err(CoreError::Corrupt("parameter shape does not match payload"));
            }
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(self.real()?);
            }
            out.push(Param::new(alloc::format!("p{i}"), data, shape));
        }
        Ok(out)
    }
}

/// Serialize to bytes with a trailing CRC-32.
pub fn encode(cp: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    let flags = u8::from(cp.extractor.is_some()) | (u8::from(cp.adapter.is_some()) << 1);
    out.push(flags);

    if let Some(ee) = &cp.extractor {
        let c = ee.config();
        put_u32(&mut out, c.mel_bins as u32);
        put_u32(&mut out, c.embedding_dim as u32);
        put_u32(&mut out, c.num_classes as u32);
        put_u32(&mut out, c.base_width as u32);
        put_u32(&mut out, c.blocks_per_stage as u32);
        put_f64(&mut out, c.width_scale as f64);
        out.push(u8::from(ee.is_frozen()));
        put_params(&mut out, ee.params());
    }

    if let Some(adapter) = &cp.adapter {
        put_u32(&mut out, adapter.dim as u32);
        out.push(u8::from(adapter.bias));
        put_f64(&mut out, adapter.temperature as f64);
        put_params(&mut out, adapter.params());
    }

    put_u32(&mut out, cp.store.dim() as u32);
    put_u32(&mut out, cp.store.session_index());
    put_u32(&mut out, cp.store.len() as u32);
    for (class_id, proto) in cp.store.entries() {
        put_u32(&mut out, *class_id);
        for &v in proto {
            put_real(&mut out, v);
        }
    }

    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

/// Parse and validate bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 1 + 4 {
        return Err(CoreError::Corrupt("truncated checkpoint"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(CoreError::Corrupt("checksum mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CoreError::Corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CoreError::UnsupportedVersion(version));
    }
    let flags = r.u8()?;

    let extractor = if flags & 1 != 0 {
        // literal fields evaluate top to bottom, matching the write order
        let config = EEConfig {
            mel_bins: r.u32()? as usize,
            embedding_dim: r.u32()? as usize,
            num_classes: r.u32()? as usize,
            base_width: r.u32()? as usize,
            blocks_per_stage: r.u32()? as usize,
            width_scale: r.f64()? as Real,
        };
        let frozen = r.u8()? != 0;
        let params = r.params()?;
        Some(EmbeddingExtractor::from_parts(config, params, frozen)?)
    } else {
        None
    };

    let adapter = if flags & 2 != 0 {
        let dim = r.u32()? as usize;
        let bias = r.u8()? != 0;
        let temperature = r.f64()? as Real;
        let params = r.params()?;
        Some(PrototypeAdapter::from_parts(dim, bias, temperature, params)?)
    } else {
        None
    };

    let dim = r.u32()? as usize;
    let session_index = r.u32()?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let class_id = r.u32()?;
        let mut proto = Vec::with_capacity(dim);
        for _ in 0..dim {
            proto.push(r.real()?);
        }
        entries.push((class_id, proto));
    }
    if r.pos != body.len() {
        return Err(CoreError::Corrupt("trailing bytes after store section"));
    }
    let store = PrototypeStore::from_parts(dim, session_index, entries)?;
    Ok(Checkpoint { extractor, adapter, store })
}
