//! Log mel-spectrogram extraction.
//!
//! Clips are framed with a fixed length and hop, each frame is Hamming
//! windowed and zero padded to the next power of two, a radix-2 FFT gives
//! the power spectrum, a bank of triangular mel-scale filters smooths it,
//! and a floored natural log produces the final feature matrix.
//!
//! Conventions, all configurable: HTK mel scale `2595*log10(1 + f/700)`,
//! peak-normalized triangles, log floor `1e-10`, `fmin = 0`,
//! `fmax = sample_rate / 2`. Trailing samples shorter than one frame are
//! dropped.

pub mod fft;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math;
use crate::Real;

/// Energy floor applied before the log so silence stays finite.
pub const LOG_FLOOR: Real = 1e-10 as Real;

/// A mono audio clip with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub clip_id: String,
    pub class_id: Option<u32>,
    pub samples: Vec<Real>,
    pub sample_rate: u32,
}

/// Feature-extraction settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DspConfig {
    /// Frame length in milliseconds.
    pub frame_ms: Real,
    /// Hop between frame starts in milliseconds.
    pub hop_ms: Real,
    /// Number of mel bins.
    pub mel_bins: usize,
    /// Lowest filterbank frequency in Hz.
    pub fmin: Real,
    /// Highest filterbank frequency in Hz; `None` means Nyquist.
    pub fmax: Option<Real>,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig { frame_ms: 25.0, hop_ms: 10.0, mel_bins: 128, fmin: 0.0, fmax: None }
    }
}

/// Time x mel-bin matrix of log filterbank energies for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    /// Row-major `frames x bins` values.
    pub values: Vec<Real>,
    pub frames: usize,
    pub bins: usize,
    pub frame_ms: Real,
    pub hop_ms: Real,
}

impl LogMelSpectrogram {
    pub fn row(&self, t: usize) -> &[Real] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }
}

/// Hamming window `w[k] = 0.54 - 0.46*cos(2*pi*k/(n-1))`.
pub fn hamming_window(n: usize) -> Result<Vec<Real>> {
    if n < 2 {
        return Err(CoreError::invalid("hamming window needs n >= 2"));
    }
    Ok((0..n)
        .map(|k| 0.54 - 0.46 * math::cos(2.0 * math::PI * k as Real / (n - 1) as Real))
        .collect())
}

/// Split `samples` into frames of `frame_len` starting every `hop_len`
/// samples. Frames borrow the input; trailing samples that do not fill a
/// whole frame are dropped.
pub fn frame_signal(samples: &[Real], frame_len: usize, hop_len: usize) -> Result<Vec<&[Real]>> {
    if frame_len == 0 || hop_len == 0 {
        return Err(CoreError::invalid("frame and hop must be positive"));
    }
    if samples.len() < frame_len {
        return Err(CoreError::ClipTooShort { samples: samples.len(), needed: frame_len });
    }
    let count = 1 + (samples.len() - frame_len) / hop_len;
    Ok((0..count)
        .map(|i| &samples[i * hop_len..i * hop_len + frame_len])
        .collect())
}

/// Power spectrum `|DFT|^2` of a real frame zero-padded to `nfft`
/// (a power of two), at bins `0..=nfft/2`.
pub fn power_spectrum(frame: &[Real], nfft: usize) -> Result<Vec<Real>> {
    if !nfft.is_power_of_two() || nfft < frame.len() {
        return Err(CoreError::invalid("nfft must be a power of two >= frame length"));
    }
    let mut re = vec![0.0 as Real; nfft];
    let mut im = vec![0.0 as Real; nfft];
    re[..frame.len()].copy_from_slice(frame);
    fft::fft_in_place(&mut re, &mut im);
    Ok((0..=nfft / 2).map(|k| re[k] * re[k] + im[k] * im[k]).collect())
}

/// HTK mel scale.
pub fn hz_to_mel(f: Real) -> Real {
    2595.0 * math::log10(1.0 + f / 700.0)
}

pub fn mel_to_hz(m: Real) -> Real {
    700.0 * (math::powf(10.0, m / 2595.0) - 1.0)
}

/// A bank of triangular mel filters over FFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// Row-major `mel_bins x (nfft/2 + 1)` weights in `[0, 1]`.
    pub weights: Vec<Real>,
    pub mel_bins: usize,
    pub spectrum_bins: usize,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[Real] {
        &self.weights[m * self.spectrum_bins..(m + 1) * self.spectrum_bins]
    }
}

/// Triangular filters with peaks at `mel_bins` points equally spaced on
/// the mel scale between `fmin` and `fmax`. Rows are peak-normalized to 1
/// (rows too narrow to cover any FFT bin are left all-zero).
pub fn mel_filterbank(
    nfft: usize,
    mel_bins: usize,
    sample_rate: u32,
    fmin: Real,
    fmax: Real,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate as Real / 2.0;
    if mel_bins == 0 {
        return Err(CoreError::invalid("need at least one mel filter"));
    }
    if !(0.0 <= fmin && fmin < fmax && fmax <= nyquist) {
        return Err(CoreError::invalid(format_args!(
            "invalid frequency range [{fmin}, {fmax}] for sample rate {sample_rate}"
        )));
    }
    let spectrum_bins = nfft / 2 + 1;
    let mel_lo = hz_to_mel(fmin);
    let mel_hi = hz_to_mel(fmax);
    // mel_bins + 2 edge points; peaks are the interior ones
    let edges_hz: Vec<Real> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as Real / (mel_bins + 1) as Real))
        .collect();
    let bin_hz: Vec<Real> = (0..spectrum_bins)
        .map(|k| k as Real * sample_rate as Real / nfft as Real)
        .collect();

    let mut weights = vec![0.0 as Real; mel_bins * spectrum_bins];
    for m in 0..mel_bins {
        let (lo, center, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        let row = &mut weights[m * spectrum_bins..(m + 1) * spectrum_bins];
        for (k, &f) in bin_hz.iter().enumerate() {
            let up = if center > lo { (f - lo) / (center - lo) } else { 0.0 };
            let down = if hi > center { (hi - f) / (hi - center) } else { 0.0 };
            row[k] = Real::max(0.0, Real::min(up, down));
        }
        let peak = row.iter().copied().fold(0.0 as Real, Real::max);
        if peak > 0.0 {
            row.iter_mut().for_each(|w| *w /= peak);
        }
    }
    Ok(MelFilterbank { weights, mel_bins, spectrum_bins })
}

/// Full extraction pipeline for one clip.
pub fn log_mel(clip: &AudioClip, config: &DspConfig) -> Result<LogMelSpectrogram> {
    if clip.sample_rate == 0 {
        return Err(CoreError::invalid("sample rate must be positive"));
    }
    let sr = clip.sample_rate as Real;
    let frame_len = (sr * config.frame_ms / 1000.0 + 0.5) as usize;
    let hop_len = (sr * config.hop_ms / 1000.0 + 0.5) as usize;
    if frame_len < 2 || hop_len == 0 {
        return Err(CoreError::invalid("frame/hop too small for sample rate"));
    }
    let frames = frame_signal(&clip.samples, frame_len, hop_len)?;
    let nfft = fft::next_pow2(frame_len);
    let window = hamming_window(frame_len)?;
    let fmax = config.fmax.unwrap_or(sr / 2.0);
    let bank = mel_filterbank(nfft, config.mel_bins, clip.sample_rate, config.fmin, fmax)?;

    let mut values = vec![0.0 as Real; frames.len() * config.mel_bins];
    let mut windowed = vec![0.0 as Real; frame_len];
    for (t, frame) in frames.iter().enumerate() {
        for (w, (&s, &win)) in windowed.iter_mut().zip(frame.iter().zip(&window)) {
            *w = s * win;
        }
        let power = power_spectrum(&windowed, nfft)?;
        for m in 0..config.mel_bins {
            let e = math::dot(bank.row(m), &power);
            values[t * config.mel_bins + m] = math::ln(Real::max(e, LOG_FLOOR));
        }
    }
    Ok(LogMelSpectrogram {
        values,
        frames: frames.len(),
        bins: config.mel_bins,
        frame_ms: config.frame_ms,
        hop_ms: config.hop_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone_clip(freq: Real, secs: Real, sr: u32) -> AudioClip {
        let n = (secs * sr as Real) as usize;
        let samples = (0..n)
            .map(|i| 0.5 * math::sin(2.0 * math::PI * freq * i as Real / sr as Real))
            .collect();
        AudioClip { clip_id: String::from("tone"), class_id: None, samples, sample_rate: sr }
    }

    #[test]
    fn hamming_endpoints_and_midpoint() {
        let w = hamming_window(9).unwrap();
        assert!((w[0] - 0.08).abs() < 1e-12);
        assert!((w[8] - 0.08).abs() < 1e-12);
        assert!((w[4] - 1.0).abs() < 1e-12);
        assert!(hamming_window(1).is_err());
    }

    #[test]
    fn hamming_symmetry() {
        for n in [2usize, 5, 16, 401] {
            let w = hamming_window(n).unwrap();
            for k in 0..n {
                assert!((w[k] - w[n - 1 - k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frame_count_for_one_second_at_16k() {
        let samples = vec![0.0 as Real; 16000];
        let frames = frame_signal(&samples, 400, 160).unwrap();
        assert_eq!(frames.len(), 98);
    }

    #[test]
    fn framing_edge_cases() {
        let samples = vec![0.1 as Real; 400];
        let frames = frame_signal(&samples, 400, 160).unwrap();
        assert_eq!(frames.len(), 1);
        // non-overlapping tiling
        let samples = vec![0.1 as Real; 1200];
        let frames = frame_signal(&samples, 300, 300).unwrap();
        assert_eq!(frames.len(), 4);
        assert!(matches!(
            frame_signal(&samples[..100], 300, 300),
            Err(CoreError::ClipTooShort { .. })
        ));
    }

    #[test]
    fn frames_share_sample_offsets() {
        let samples: Vec<Real> = (0..1000).map(|i| i as Real).collect();
        let frames = frame_signal(&samples, 100, 40).unwrap();
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f[0], (i * 40) as Real);
            assert_eq!(f.len(), 100);
        }
    }

    #[test]
    fn dc_frame_concentrates_at_bin_zero() {
        let power = power_spectrum(&[1.0, 1.0, 1.0, 1.0], 4).unwrap();
        assert!((power[0] - 16.0).abs() < 1e-9);
        assert!(power[1].abs() < 1e-9);
        assert!(power[2].abs() < 1e-9);
    }

    #[test]
    fn mel_scale_reference_points() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        let m700 = hz_to_mel(700.0);
        assert!((m700 - 2595.0 * math::log10(2.0)).abs() < 1e-9);
        assert!((m700 - 781.18).abs() < 0.01);
        // inverse
        assert!((mel_to_hz(m700) - 700.0).abs() < 1e-6);
    }

    #[test]
    fn filterbank_row_properties() {
        let bank = mel_filterbank(512, 32, 16000, 0.0, 8000.0).unwrap();
        for m in 0..32 {
            let row = bank.row(m);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
            let peak = row.iter().copied().fold(0.0 as Real, Real::max);
            assert!((peak - 1.0).abs() < 1e-12, "filter {m} peak {peak}");
        }
        // each spectrum bin touched by at most two filters
        for k in 0..bank.spectrum_bins {
            let touching = (0..32).filter(|&m| bank.row(m)[k] > 0.0).count();
            assert!(touching <= 2, "bin {k} in {touching} filters");
        }
        assert!(mel_filterbank(512, 32, 16000, 4000.0, 1000.0).is_err());
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let clip = AudioClip {
            clip_id: String::from("quiet"),
            class_id: None,
            samples: vec![0.0; 16000],
            sample_rate: 16000,
        };
        let spec = log_mel(&clip, &DspConfig::default()).unwrap();
        assert!(spec.values.iter().all(|&v| (v - math::ln(LOG_FLOOR)).abs() < 1e-12));
    }

    #[test]
    fn default_shape_for_one_second_clip() {
        let clip = tone_clip(440.0, 1.0, 16000);
        let spec = log_mel(&clip, &DspConfig::default()).unwrap();
        assert_eq!((spec.frames, spec.bins), (98, 128));
        assert!(spec.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn doubling_amplitude_shifts_by_ln4() {
        let clip = tone_clip(440.0, 0.2, 16000);
        let mut loud = clip.clone();
        loud.samples.iter_mut().for_each(|s| *s *= 2.0);
        let a = log_mel(&clip, &DspConfig::default()).unwrap();
        let b = log_mel(&loud, &DspConfig::default()).unwrap();
        for (&x, &y) in a.values.iter().zip(&b.values) {
            if x > math::ln(LOG_FLOOR) + 1.0 {
                assert!((y - x - math::ln(4.0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn extraction_is_bit_deterministic() {
        let clip = tone_clip(523.25, 0.5, 16000);
        let a = log_mel(&clip, &DspConfig::default()).unwrap();
        let b = log_mel(&clip, &DspConfig::default()).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
