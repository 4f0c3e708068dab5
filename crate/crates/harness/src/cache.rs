//! Binary feature cache: one file per clip holding a little-endian
//! `(frames, bins)` u32 header followed by `frames * bins` f32 values,
//! row-major.

use std::io::{Read, Write};
use std::path::Path;

use protolearn_core::dsp::LogMelSpectrogram;
use protolearn_core::Real;

use crate::error::{HarnessError, Result};

pub fn write_feature(path: &Path, spect: &LogMelSpectrogram) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + spect.values.len() * 4);
    buf.extend_from_slice(&(spect.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(spect.bins as u32).to_le_bytes());
    for &v in &spect.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(&buf).map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_feature(path: &Path, frame_ms: Real, hop_ms: Real) -> Result<LogMelSpectrogram> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| HarnessError::io(path, e))?;
    if bytes.len() < 8 {
        return Err(HarnessError::runtime(format!("feature cache {} truncated", path.display())));
    }
    let frames = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let bins = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expect = 8 + frames * bins * 4;
    if bytes.len() != expect {
        return Err(HarnessError::runtime(format!(
            "feature cache {}: {} bytes, expected {expect}",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Real)
        .collect();
    Ok(LogMelSpectrogram { values, frames, bins, frame_ms, hop_ms })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.lms");
        let spect = LogMelSpectrogram {
            values: (0..6 * 4).map(|i| i as Real * 0.25 - 3.0).collect(),
            frames: 6,
            bins: 4,
            frame_ms: 25.0,
            hop_ms: 10.0,
        };
        write_feature(&path, &spect).unwrap();
        let back = read_feature(&path, 25.0, 10.0).unwrap();
        assert_eq!((back.frames, back.bins), (6, 4));
        for (a, b) in spect.values.iter().zip(&back.values) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn truncated_cache_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.lms");
        std::fs::write(&path, [1, 0, 0, 0, 2, 0, 0, 0, 9]).unwrap();
        assert!(read_feature(&path, 25.0, 10.0).is_err());
    }
}
