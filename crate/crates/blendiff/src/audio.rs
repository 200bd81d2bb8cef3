//! Speech waveforms and frame-aligned conditioning features.
//!
//! The conditioning stream is a log-mel spectrogram standardized per
//! dimension over the utterance, linearly interpolated to one row per
//! animation frame. Externally computed features can be ingested from
//! BTSR files instead.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::btsr;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MEL_SAMPLE_RATE: f64 = 16_000.0;

/// Mono waveform with samples in [-1, 1].
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl Waveform {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// Frame-aligned conditioning features: one row per animation frame.
#[derive(Debug, Clone)]
pub struct AudioFeatures {
    pub frames: Tensor,
    pub frame_rate: f64,
}

impl AudioFeatures {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

#[derive(Debug, Clone)]
pub struct MelConfig {
    pub n_mels: usize,
    pub win_seconds: f64,
    pub hop_seconds: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            n_mels: 40,
            win_seconds: 0.025,
            hop_seconds: 0.010,
        }
    }
}

// ---- WAV parsing ----

fn rd_u16(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::CorruptHeader("unexpected end of file".into()))
}

fn rd_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::CorruptHeader("unexpected end of file".into()))
}

/// Parse a RIFF/WAVE file: PCM 16-bit or IEEE float 32-bit, mono or
/// stereo (stereo channels are averaged).
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::CorruptHeader("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = rd_u32(bytes, pos + 4)? as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(Error::CorruptHeader(format!(
                "chunk {:?} of size {size} overruns file",
                String::from_utf8_lossy(id)
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::CorruptHeader("fmt chunk too small".into()));
                }
                fmt = Some((
                    rd_u16(bytes, body_start)?,
                    rd_u16(bytes, body_start + 2)?,
                    rd_u32(bytes, body_start + 4)?,
                    rd_u16(bytes, body_start + 14)?,
                ));
            }
            b"data" => data = Some(&bytes[body_start..body_start + size]),
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::CorruptHeader("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::CorruptHeader("missing data chunk".into()))?;
    if channels == 0 || channels > 2 {
        return Err(Error::UnsupportedEncoding(format!(
            "{channels} channels (mono or stereo only)"
        )));
    }
    let ch = channels as usize;
    let samples: Vec<f64> = match (format, bits) {
        (1, 16) => {
            let frame_bytes = 2 * ch;
            let n = data.len() / frame_bytes;
            (0..n)
                .map(|i| {
                    let mut acc = 0.0;
                    for c in 0..ch {
                        let at = i * frame_bytes + 2 * c;
                        let v = i16::from_le_bytes([data[at], data[at + 1]]);
                        acc += v as f64 / 32768.0;
                    }
                    acc / ch as f64
                })
                .collect()
        }
        (3, 32) => {
            let frame_bytes = 4 * ch;
            let n = data.len() / frame_bytes;
            (0..n)
                .map(|i| {
                    let mut acc = 0.0;
                    for c in 0..ch {
                        let at = i * frame_bytes + 4 * c;
                        let v = f32::from_le_bytes([
                            data[at],
                            data[at + 1],
                            data[at + 2],
                            data[at + 3],
                        ]);
                        acc += v as f64;
                    }
                    acc / ch as f64
                })
                .collect()
        }
        (f, b) => {
            return Err(Error::UnsupportedEncoding(format!(
                "format {f} with {b} bits (PCM16 or float32 only)"
            )))
        }
    };
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::CorruptHeader("non-finite samples".into()));
    }
    Ok(Waveform {
        samples,
        sample_rate: rate as f64,
    })
}

pub fn load_wav(path: &Path) -> Result<Waveform> {
    parse_wav(&std::fs::read(path)?)
}

/// Serialize as 16-bit PCM mono. Useful for fixtures.
pub fn encode_wav_pcm16(w: &Waveform) -> Vec<u8> {
    let n = w.samples.len();
    let data_len = 2 * n;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    let rate = w.sample_rate as u32;
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

// ---- features ----

/// Linear resampling to the target rate.
pub fn resample(w: &Waveform, target_rate: f64) -> Waveform {
    if (w.sample_rate - target_rate).abs() < 1e-9 || w.samples.is_empty() {
        return Waveform {
            samples: w.samples.clone(),
            sample_rate: target_rate,
        };
    }
    let n_out = ((w.samples.len() as f64) * target_rate / w.sample_rate).round() as usize;
    let mut out = Vec::with_capacity(n_out);
    let last = w.samples.len() - 1;
    for i in 0..n_out {
        let t = i as f64 * w.sample_rate / target_rate;
        let i0 = (t.floor() as usize).min(last);
        let i1 = (i0 + 1).min(last);
        let frac = t - i0 as f64;
        out.push(w.samples[i0] * (1.0 - frac) + w.samples[i1] * frac);
    }
    Waveform {
        samples: out,
        sample_rate: target_rate,
    }
}

/// Triangular mel filterbank on FFT bin center frequencies.
/// Returns `n_mels` rows of `n_bins` weights.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let f_max = sample_rate / 2.0;
    let to_mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let from_mel = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let mel_points: Vec<f64> = (0..n_mels + 2)
        .map(|i| from_mel(to_mel(f_max) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_freq = |b: usize| b as f64 * sample_rate / n_fft as f64;
    let mut bank = vec![vec![0.0; n_bins]; n_mels];
    for (m, bank_row) in bank.iter_mut().enumerate() {
        let (lo, mid, hi) = (mel_points[m], mel_points[m + 1], mel_points[m + 2]);
        for (b, w) in bank_row.iter_mut().enumerate() {
            let f = bin_freq(b);
            if f > lo && f < mid {
                *w = (f - lo) / (mid - lo);
            } else if f >= mid && f < hi {
                *w = (hi - f) / (hi - mid);
            }
        }
    }
    bank
}

/// Raw log-mel energies: one row per analysis frame, before
/// standardization. The waveform is resampled to 16 kHz internally.
pub fn log_mel_energies(w: &Waveform, cfg: &MelConfig) -> Result<Tensor> {
    let w = resample(w, MEL_SAMPLE_RATE);
    let win = (cfg.win_seconds * MEL_SAMPLE_RATE).round() as usize;
    let hop = (cfg.hop_seconds * MEL_SAMPLE_RATE).round() as usize;
    if w.samples.len() < win {
        return Err(Error::TooShort(format!(
            "waveform has {} samples but one window needs {win}",
            w.samples.len()
        )));
    }
    let n_frames = (w.samples.len() - win) / hop + 1;
    let n_fft = win.next_power_of_two();
    let bank = mel_filterbank(cfg.n_mels, n_fft, MEL_SAMPLE_RATE);

    let hann: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut out = Tensor::zeros(vec![n_frames, cfg.n_mels]);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for frame in 0..n_frames {
        for slot in buf.iter_mut() {
            *slot = Complex::new(0.0, 0.0);
        }
        let start = frame * hop;
        for i in 0..win {
            buf[i] = Complex::new(w.samples[start + i] * hann[i], 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        for (m, filter) in bank.iter().enumerate() {
            let e: f64 = filter.iter().zip(&power).map(|(f, p)| f * p).sum();
            out.set(frame, m, (e + 1e-10).ln());
        }
    }
    Ok(out)
}

/// Standardize each column to mean 0 and unit variance over the rows.
/// Constant columns become exactly zero.
pub fn standardize_columns(features: &Tensor) -> Tensor {
    let (n, d) = (features.rows(), features.cols());
    let mut out = features.clone();
    for c in 0..d {
        let mut mean = 0.0;
        for r in 0..n {
            mean += features.at(r, c);
        }
        mean /= n as f64;
        let mut var = 0.0;
        for r in 0..n {
            let dv = features.at(r, c) - mean;
            var += dv * dv;
        }
        var /= n as f64;
        if var.sqrt() < 1e-12 {
            for r in 0..n {
                out.set(r, c, 0.0);
            }
        } else {
            let inv = 1.0 / var.sqrt();
            for r in 0..n {
                out.set(r, c, (features.at(r, c) - mean) * inv);
            }
        }
    }
    out
}

/// Standardized log-mel features, still at the analysis frame rate.
pub fn mel_features(w: &Waveform, cfg: &MelConfig) -> Result<Tensor> {
    Ok(standardize_columns(&log_mel_energies(w, cfg)?))
}

/// Linearly interpolate a feature matrix along time to exactly
/// `target_frames` rows; endpoints map to endpoints.
pub fn interpolate_to_frames(
    features: &Tensor,
    target_frames: usize,
    frame_rate: f64,
) -> Result<AudioFeatures> {
    let (rows, d) = (features.rows(), features.cols());
    if rows == 0 || target_frames == 0 {
        return Err(Error::EmptyInput(
            "interpolation needs at least one input row and one output row".into(),
        ));
    }
    if rows == target_frames {
        return Ok(AudioFeatures {
            frames: features.clone(),
            frame_rate,
        });
    }
    let mut out = Tensor::zeros(vec![target_frames, d]);
    for i in 0..target_frames {
        let t = if target_frames == 1 {
            0.0
        } else {
            i as f64 * (rows - 1) as f64 / (target_frames - 1) as f64
        };
        let i0 = (t.floor() as usize).min(rows - 1);
        let i1 = (i0 + 1).min(rows - 1);
        let frac = t - i0 as f64;
        for c in 0..d {
            out.set(
                i,
                c,
                features.at(i0, c) * (1.0 - frac) + features.at(i1, c) * frac,
            );
        }
    }
    Ok(AudioFeatures {
        frames: out,
        frame_rate,
    })
}

/// Load a rank-2 BTSR feature file.
pub fn load_features(path: &Path) -> Result<Tensor> {
    let t = btsr::load(path)?;
    if t.rank() != 2 {
        return Err(Error::FormatError(format!(
            "feature file must be rank 2, got rank {}",
            t.rank()
        )));
    }
    Ok(t)
}

/// Shift features in time by a fractional number of rows with linear
/// interpolation; out-of-range samples clamp to the edges. Used by the
/// training augmentation.
pub fn shift_rows_fractional(features: &Tensor, shift: f64) -> Tensor {
    let (n, d) = (features.rows(), features.cols());
    let mut out = Tensor::zeros(vec![n, d]);
    let last = (n - 1) as f64;
    for i in 0..n {
        let t = (i as f64 - shift).clamp(0.0, last);
        let i0 = t.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        let frac = t - i0 as f64;
        for c in 0..d {
            out.set(
                i,
                c,
                features.at(i0, c) * (1.0 - frac) + features.at(i1, c) * frac,
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, seconds: f64, rate: f64) -> Waveform {
        let n = (seconds * rate) as usize;
        Waveform {
            samples: (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate).sin() * 0.5)
                .collect(),
            sample_rate: rate,
        }
    }

    #[test]
    fn pcm16_scaling() {
        let w = Waveform {
            samples: vec![0.5, -0.25, 0.0],
            sample_rate: 16000.0,
        };
        let parsed = parse_wav(&encode_wav_pcm16(&w)).unwrap();
        assert!((parsed.samples[0] - 0.5).abs() < 1e-4);
        assert!((parsed.samples[1] + 0.25).abs() < 1e-4);
        assert_eq!(parsed.sample_rate, 16000.0);
    }

    #[test]
    fn raw_pcm16_value_half() {
        // sample value 16384 -> 0.5
        let mut bytes = encode_wav_pcm16(&Waveform {
            samples: vec![0.0],
            sample_rate: 8000.0,
        });
        let at = bytes.len() - 2;
        bytes[at..].copy_from_slice(&16384i16.to_le_bytes());
        let parsed = parse_wav(&bytes).unwrap();
        assert!((parsed.samples[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn stereo_averages() {
        // hand-build a stereo float32 file with L=0.2, R=0.4
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36u32 + 8).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&3u16.to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes());
        out.extend_from_slice(&16000u32.to_le_bytes());
        out.extend_from_slice(&(16000u32 * 8).to_le_bytes());
        out.extend_from_slice(&8u16.to_le_bytes());
        out.extend_from_slice(&32u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&8u32.to_le_bytes());
        out.extend_from_slice(&0.2f32.to_le_bytes());
        out.extend_from_slice(&0.4f32.to_le_bytes());
        let parsed = parse_wav(&out).unwrap();
        assert_eq!(parsed.samples.len(), 1);
        assert!((parsed.samples[0] - 0.3).abs() < 1e-7);
    }

    #[test]
    fn truncated_chunk_is_corrupt() {
        let mut bytes = encode_wav_pcm16(&tone(440.0, 0.1, 16000.0));
        bytes.truncate(bytes.len() - 10);
        match parse_wav(&bytes) {
            Err(Error::CorruptHeader(_)) => {}
            other => panic!("expected CorruptHeader, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_bits_rejected() {
        let mut bytes = encode_wav_pcm16(&tone(440.0, 0.01, 16000.0));
        bytes[34] = 24; // bits per sample
        match parse_wav(&bytes) {
            Err(Error::UnsupportedEncoding(_)) => {}
            other => panic!("expected UnsupportedEncoding, got {other:?}"),
        }
    }

    #[test]
    fn one_second_gives_98_frames() {
        let w = tone(440.0, 1.0, 16000.0);
        let m = log_mel_energies(&w, &MelConfig::default()).unwrap();
        assert_eq!(m.rows(), 98);
        assert_eq!(m.cols(), 40);
    }

    #[test]
    fn silence_standardizes_to_zero() {
        let w = Waveform {
            samples: vec![0.0; 16000],
            sample_rate: 16000.0,
        };
        let raw = log_mel_energies(&w, &MelConfig::default()).unwrap();
        // all rows identical
        for r in 1..raw.rows() {
            for c in 0..raw.cols() {
                assert!((raw.at(r, c) - raw.at(0, c)).abs() < 1e-12);
            }
        }
        let m = mel_features(&w, &MelConfig::default()).unwrap();
        assert_eq!(m.max_abs(), 0.0);
    }

    #[test]
    fn pure_tone_peaks_in_expected_band() {
        let cfg = MelConfig::default();
        let w = tone(440.0, 0.5, 16000.0);
        let m = log_mel_energies(&w, &cfg).unwrap();

        // oracle: the filter whose triangular response at 440 Hz is
        // largest, computed directly from the filterbank geometry
        let n_fft = 512;
        let bank = mel_filterbank(cfg.n_mels, n_fft, MEL_SAMPLE_RATE);
        let bin = (440.0 / (MEL_SAMPLE_RATE / n_fft as f64)).round() as usize;
        let expected_band = (0..cfg.n_mels)
            .max_by(|&a, &b| bank[a][bin].partial_cmp(&bank[b][bin]).unwrap())
            .unwrap();

        for r in 0..m.rows() {
            let row = m.row(r);
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert_eq!(argmax, expected_band, "frame {r}");
        }
    }

    #[test]
    fn too_short_waveform() {
        let w = Waveform {
            samples: vec![0.0; 100],
            sample_rate: 16000.0,
        };
        assert!(matches!(
            mel_features(&w, &MelConfig::default()),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn standardization_moments() {
        let w = tone(313.0, 0.7, 16000.0);
        let m = mel_features(&w, &MelConfig::default()).unwrap();
        let n = m.rows() as f64;
        for c in 0..m.cols() {
            let mean: f64 = (0..m.rows()).map(|r| m.at(r, c)).sum::<f64>() / n;
            let var: f64 = (0..m.rows()).map(|r| (m.at(r, c) - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "column {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "column {c} var {var}");
        }
    }

    #[test]
    fn interpolation_midpoint() {
        let f = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0]]);
        let out = interpolate_to_frames(&f, 3, 60.0).unwrap();
        assert_eq!(out.frames.row(0), &[1.0, 2.0]);
        assert_eq!(out.frames.row(1), &[2.0, 4.0]);
        assert_eq!(out.frames.row(2), &[3.0, 6.0]);
    }

    #[test]
    fn interpolation_identity_when_sizes_match() {
        let f = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![5.0]]);
        let out = interpolate_to_frames(&f, 3, 60.0).unwrap();
        assert_eq!(out.frames, f);
    }

    #[test]
    fn interpolation_matches_direct_evaluator() {
        let mut rng = crate::rng::Rng::new(9);
        let rows: Vec<Vec<f64>> = (0..7).map(|_| rng.normal_vec(3)).collect();
        let f = Tensor::from_rows(&rows);
        let out = interpolate_to_frames(&f, 60, 60.0).unwrap();
        for i in 0..60 {
            let t = i as f64 * 6.0 / 59.0;
            let i0 = t.floor() as usize;
            let i1 = (i0 + 1).min(6);
            let frac = t - i0 as f64;
            for c in 0..3 {
                let want = rows[i0][c] * (1.0 - frac) + rows[i1][c] * frac;
                assert!((out.frames.at(i, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_rejects_empty() {
        let f = Tensor::zeros(vec![0, 4]);
        assert!(matches!(
            interpolate_to_frames(&f, 5, 60.0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn double_interpolation_preserves_original_samples() {
        let mut rng = crate::rng::Rng::new(4);
        let rows: Vec<Vec<f64>> = (0..5).map(|_| rng.normal_vec(2)).collect();
        let f = Tensor::from_rows(&rows);
        // 5 -> 9 -> 5: original sample points land on grid nodes
        let up = interpolate_to_frames(&f, 9, 60.0).unwrap();
        let down = interpolate_to_frames(&up.frames, 5, 60.0).unwrap();
        for r in 0..5 {
            for c in 0..2 {
                assert!((down.frames.at(r, c) - f.at(r, c)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn feature_file_roundtrip_and_rank_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.btsr");
        let t = Tensor::new(vec![3, 2], vec![0.5, 1.0, -0.25, 2.0, 0.0, 4.0]);
        btsr::save(&path, &t).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(back, t);

        let bad = dir.path().join("bad.btsr");
        btsr::save(&bad, &Tensor::zeros(vec![2, 2, 2])).unwrap();
        assert!(matches!(load_features(&bad), Err(Error::FormatError(_))));
    }

    #[test]
    fn fractional_shift_clamps_edges() {
        let f = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]);
        let s = shift_rows_fractional(&f, 0.5);
        assert_eq!(s.at(0, 0), 0.0); // clamped
        assert!((s.at(1, 0) - 0.5).abs() < 1e-12);
        assert!((s.at(2, 0) - 1.5).abs() < 1e-12);
    }
}
