//! 16 kHz mono audio and its 80-bin log-mel analysis.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use uconv_core::features::{frame_count, FeatureMatrix, FEATURE_DIM, HOP_SAMPLES, SAMPLE_RATE, WINDOW_SAMPLES};

use crate::{Error, Result};

pub const FFT_SIZE: usize = 512;
pub const MEL_LOW_HZ: f64 = 0.0;
pub const MEL_HIGH_HZ: f64 = 8000.0;
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono samples in `[-1, 1]` at 16 kHz, at least one analysis window long.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate as usize != SAMPLE_RATE {
            return Err(Error::SampleRate(sample_rate));
        }
        frame_count(samples.len())?;
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
}

/// Reads 16-bit PCM mono 16 kHz WAV.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::format(
            path,
            format!(
                "expected 16-bit PCM mono, got {} channel(s) of {}-bit {:?}",
                spec.channels, spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono 16 kHz WAV, clipping to `[-1, 1]`.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filter `i` over the FFT bins it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilter {
    pub first_bin: usize,
    pub weights: Vec<f64>,
    pub center_hz: f64,
}

/// 80 triangles evenly spaced on the HTK mel scale between 0 and 8 kHz,
/// evaluated at the centre frequency of each of the 257 FFT bins.
pub fn mel_filterbank() -> Vec<MelFilter> {
    let lo = hz_to_mel(MEL_LOW_HZ);
    let hi = hz_to_mel(MEL_HIGH_HZ);
    let step = (hi - lo) / (FEATURE_DIM + 1) as f64;
    let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
    (0..FEATURE_DIM)
        .map(|i| {
            let (left, center, right) = (
                lo + step * i as f64,
                lo + step * (i + 1) as f64,
                lo + step * (i + 2) as f64,
            );
            let mut first_bin = None;
            let mut weights = Vec::new();
            for k in 0..=FFT_SIZE / 2 {
                let m = hz_to_mel(k as f64 * bin_hz);
                let w = if m <= left || m >= right {
                    0.0
                } else if m <= center {
                    (m - left) / (center - left)
                } else {
                    (right - m) / (right - center)
                };
                if w > 0.0 {
                    first_bin.get_or_insert(k);
                    weights.push(w);
                } else if first_bin.is_some() {
                    break;
                }
            }
            MelFilter {
                first_bin: first_bin.unwrap_or(0),
                weights,
                center_hz: mel_to_hz(center),
            }
        })
        .collect()
}

/// Reusable log-mel analyser: periodic Hann window of 400 samples, 512-point
/// FFT, power spectrum, mel filterbank, natural log floored at 1e-10.
pub struct LogMel {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
}

impl std::fmt::Debug for LogMel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMel").field("filters", &self.filters.len()).finish()
    }
}

impl Default for LogMel {
    fn default() -> Self {
        Self::new()
    }
}

impl LogMel {
    pub fn new() -> Self {
        let window = (0..WINDOW_SAMPLES)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / WINDOW_SAMPLES as f64).cos())
            .collect();
        Self {
            fft: FftPlanner::new().plan_fft_forward(FFT_SIZE),
            window,
            filters: mel_filterbank(),
        }
    }

    pub fn filters(&self) -> &[MelFilter] {
        &self.filters
    }

    pub fn extract(&self, audio: &AudioBuffer) -> Result<FeatureMatrix> {
        let samples = audio.samples();
        let frames = frame_count(samples.len())?;
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; FFT_SIZE / 2 + 1];
        let mut out = Vec::with_capacity(frames * FEATURE_DIM);
        for t in 0..frames {
            let start = t * HOP_SAMPLES;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = match self.window.get(i) {
                    Some(w) => Complex::new(samples[start + i] * w, 0.0),
                    None => Complex::new(0.0, 0.0),
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for f in &self.filters {
                let energy: f64 = f.weights.iter().zip(&power[f.first_bin..]).map(|(w, p)| w * p).sum();
                out.push(energy.max(LOG_FLOOR).ln());
            }
        }
        Ok(FeatureMatrix::from_rows(frames, out)?)
    }
}

/// One-shot log-mel extraction.
pub fn extract_logmel(audio: &AudioBuffer) -> Result<FeatureMatrix> {
    LogMel::new().extract(audio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use uconv_core::features::normalize;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn frame_counts() {
        let frames = |n| {
            extract_logmel(&AudioBuffer::new(vec![0.0; n], 16_000).unwrap())
                .unwrap()
                .len()
        };
        assert_eq!(frames(480_000), 2998);
        assert_eq!(frames(400), 1);
        assert_eq!(frames(559), 1);
        assert_eq!(frames(560), 2);
        assert!(matches!(
            AudioBuffer::new(vec![0.0; 399], 16_000),
            Err(Error::Core(uconv_core::Error::TooShort { len: 399, min: 400 }))
        ));
        assert!(matches!(
            AudioBuffer::new(vec![0.0; 400], 8_000),
            Err(Error::SampleRate(8_000))
        ));
    }

    #[test]
    fn silence_hits_the_floor() {
        let f = extract_logmel(&AudioBuffer::new(vec![0.0; 800], 16_000).unwrap()).unwrap();
        assert!(f.frames().data().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn every_filter_covers_a_bin() {
        let filters = mel_filterbank();
        assert_eq!(filters.len(), FEATURE_DIM);
        for pair in filters.windows(2) {
            assert!(pair[0].center_hz < pair[1].center_hz);
        }
        assert!(filters.iter().all(|f| f.weights.iter().any(|&w| w > 0.0)));
        let last = filters.last().unwrap();
        assert!(last.first_bin + last.weights.len() <= FFT_SIZE / 2 + 1);
    }

    #[test]
    fn gain_shifts_every_value_by_log_c_squared() {
        let x = noise(4000, 7);
        let base = extract_logmel(&AudioBuffer::new(x.clone(), 16_000).unwrap()).unwrap();
        for c in [0.25, 1.7] {
            let scaled = AudioBuffer::new(x.iter().map(|v| v * c).collect(), 16_000).unwrap();
            let shifted = extract_logmel(&scaled).unwrap();
            let shift = (c * c).ln();
            for (a, b) in base.frames().data().iter().zip(shifted.frames().data()) {
                assert!((b - a - shift).abs() < 1e-9, "{a} {b}");
            }
            let (na, nb) = (normalize(&base), normalize(&shifted));
            for (a, b) in na.frames().data().iter().zip(nb.frames().data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sine_peaks_in_the_filter_centred_nearest_its_frequency() {
        let hz = 1000.0;
        let samples: Vec<f64> = (0..8000)
            .map(|n| 0.5 * (2.0 * PI * hz * n as f64 / 16_000.0).sin())
            .collect();
        let f = extract_logmel(&AudioBuffer::new(samples, 16_000).unwrap()).unwrap();
        let mut mean = [0.0; FEATURE_DIM];
        for row in f.frames().data().chunks_exact(FEATURE_DIM) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        let peak = (0..FEATURE_DIM).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
        let nearest = mel_filterbank()
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (hz_to_mel(a.1.center_hz) - hz_to_mel(hz))
                    .abs()
                    .total_cmp(&(hz_to_mel(b.1.center_hz) - hz_to_mel(hz)).abs())
            })
            .unwrap()
            .0;
        assert_eq!(peak, nearest);
    }

    #[test]
    fn htk_mel_round_trip() {
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        for hz in [0.0, 440.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }
}
