//! Single-channel WAV IO (16-bit integer and 32-bit float PCM).

use std::path::Path;

use protolearn_core::Real;

use crate::error::{HarnessError, Result};

/// Read a mono WAV file into `[-1, 1]` samples.
pub fn read_mono(path: &Path) -> Result<(Vec<Real>, u32)> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| HarnessError::runtime(format!("cannot open wav {}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(HarnessError::runtime(format!(
            "{} has {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<Real> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as Real / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| HarnessError::runtime(format!("bad sample in {}: {e}", path.display())))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as Real))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| HarnessError::runtime(format!("bad sample in {}: {e}", path.display())))?,
        (fmt, bits) => {
            return Err(HarnessError::runtime(format!(
                "{}: unsupported wav subformat {fmt:?}/{bits}",
                path.display()
            )));
        }
    };
    Ok((samples, spec.sample_rate))
}

/// Write samples in `[-1, 1]` as 16-bit PCM.
pub fn write_mono_16bit(path: &Path, samples: &[Real], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| HarnessError::runtime(format!("cannot create wav {}: {e}", path.display())))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0) as f64;
        writer
            .write_sample(v.round() as i16)
            .map_err(|e| HarnessError::runtime(format!("write {}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| HarnessError::runtime(format!("finalize {}: {e}", path.display())))?;
    Ok(())
}
