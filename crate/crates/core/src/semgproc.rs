//! Framing of the raw 8-channel EMG stream and STFT spectrograms.
//!
//! A window is 1248 samples at 2000 Hz (624 ms). The STFT slides a 256-point
//! periodic Hamming window by 32 samples, giving exactly
//! (1248 - 256) / 32 + 1 = 32 time frames at 7.8125 Hz bin resolution; the
//! spectrogram keeps the lowest 64 bins by default (DC through ~492 Hz).

use std::sync::{Arc, LazyLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sync::TimedStream;

pub const SEMG_CHANNELS: usize = 8;
pub const WINDOW_SAMPLES: usize = 1248;
pub const SEMG_RATE_HZ: f64 = 2000.0;
pub const STFT_SEGMENT: usize = 256;
pub const STFT_HOP: usize = 32;
pub const STFT_FRAMES: usize = (WINDOW_SAMPLES - STFT_SEGMENT) / STFT_HOP + 1;
pub const DEFAULT_BINS: usize = 64;
/// Frequency spacing of STFT bins: 2000 / 256 Hz.
pub const FREQ_RESOLUTION_HZ: f64 = SEMG_RATE_HZ / STFT_SEGMENT as f64;
/// One-sided bin count of a 256-point transform.
pub const ONE_SIDED_BINS: usize = STFT_SEGMENT / 2 + 1;
/// Default window stride for training-data generation (78 ms).
pub const DEFAULT_FRAME_STRIDE: usize = 156;

static FFT_FORWARD: LazyLock<Arc<dyn Fft<f64>>> =
    LazyLock::new(|| FftPlanner::new().plan_fft_forward(STFT_SEGMENT));

/// One framed EMG window: 8 channels x 1248 samples, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SemgWindow {
    pub start_time: f64,
    pub end_time: f64,
    samples: Vec<f64>,
}

impl SemgWindow {
    pub fn new(start_time: f64, end_time: f64, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != SEMG_CHANNELS * WINDOW_SAMPLES {
            return Err(Error::ShapeMismatch {
                expected: format!("{SEMG_CHANNELS}x{WINDOW_SAMPLES} samples"),
                got: format!("{} values", samples.len()),
            });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("EMG window contains non-finite samples".into()));
        }
        Ok(SemgWindow { start_time, end_time, samples })
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.samples[ch * WINDOW_SAMPLES..(ch + 1) * WINDOW_SAMPLES]
    }
}

/// STFT output: 8 channels x 32 time frames x `bins` frequency bins,
/// row-major, nonnegative. The standard network input uses 64 bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<f64>,
    bins: usize,
}

impl Spectrogram {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn value(&self, ch: usize, frame: usize, bin: usize) -> f64 {
        self.data[(ch * STFT_FRAMES + frame) * self.bins + bin]
    }

    /// True for the 8x32x64 shape the estimator consumes.
    pub fn is_standard_shape(&self) -> bool {
        self.bins == DEFAULT_BINS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpectroKind {
    #[default]
    Magnitude,
    Power,
    /// ln(1 + magnitude), keeps values nonnegative.
    LogMagnitude,
}

/// Which frequency bins the spectrogram keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqSelect {
    /// The lowest `n` bins (DC upward). The standard shape uses 64.
    FirstBins(usize),
    /// All bins strictly below the given frequency in Hz.
    BelowHz(f64),
}

impl Default for FreqSelect {
    fn default() -> Self {
        FreqSelect::FirstBins(DEFAULT_BINS)
    }
}

impl FreqSelect {
    pub fn bin_count(&self) -> Result<usize> {
        match *self {
            FreqSelect::FirstBins(n) => {
                if n == 0 || n > ONE_SIDED_BINS {
                    return Err(Error::InvalidInput(format!(
                        "bin count {n} outside 1..={ONE_SIDED_BINS}"
                    )));
                }
                Ok(n)
            }
            FreqSelect::BelowHz(hz) => {
                if !(hz.is_finite() && hz > 0.0) {
                    return Err(Error::InvalidInput(format!("cutoff {hz} Hz must be positive")));
                }
                let n = (hz / FREQ_RESOLUTION_HZ).ceil() as usize;
                Ok(n.clamp(1, ONE_SIDED_BINS))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct StftConfig {
    pub kind: SpectroKind,
    pub freq: FreqSelect,
    /// Subtract each 256-sample segment's mean before windowing.
    pub remove_mean: bool,
}

/// Periodic Hamming window: w[n] = 0.54 - 0.46 cos(2 pi n / len). The
/// periodic form keeps a constant input confined to bins 0 and 1 exactly.
pub fn hamming_window(len: usize) -> Vec<f64> {
    let step = 2.0 * std::f64::consts::PI / len as f64;
    (0..len).map(|n| 0.54 - 0.46 * (step * n as f64).cos()).collect()
}

/// Slides 1248-sample windows over the stream with the given stride;
/// trailing partial windows are dropped. Window count is
/// floor((len - 1248) / stride) + 1.
pub fn frame_stream(stream: &TimedStream, stride: usize) -> Result<Vec<SemgWindow>> {
    if stream.arity() != SEMG_CHANNELS {
        return Err(Error::ShapeMismatch {
            expected: format!("{SEMG_CHANNELS}-channel EMG stream"),
            got: format!("{} channels", stream.arity()),
        });
    }
    if stride == 0 {
        return Err(Error::InvalidInput("frame stride must be at least 1".into()));
    }
    let n = stream.len();
    if n < WINDOW_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "EMG stream too short: {n} samples, a window needs {WINDOW_SAMPLES}"
        )));
    }
    let count = (n - WINDOW_SAMPLES) / stride + 1;
    let times = stream.times();
    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        let mut samples = vec![0.0; SEMG_CHANNELS * WINDOW_SAMPLES];
        for i in 0..WINDOW_SAMPLES {
            let row = stream.value(start + i);
            for ch in 0..SEMG_CHANNELS {
                samples[ch * WINDOW_SAMPLES + i] = row[ch];
            }
        }
        windows.push(SemgWindow {
            start_time: times[start],
            end_time: times[start + WINDOW_SAMPLES - 1],
            samples,
        });
    }
    Ok(windows)
}

/// Magnitude STFT of one window (or power / log-magnitude per config).
pub fn stft(w: &SemgWindow, cfg: &StftConfig) -> Result<Spectrogram> {
    let bins = cfg.freq.bin_count()?;
    let window = hamming_window(STFT_SEGMENT);
    let fft = FFT_FORWARD.clone();
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0, 0.0); STFT_SEGMENT];
    let mut data = vec![0.0; SEMG_CHANNELS * STFT_FRAMES * bins];
    for ch in 0..SEMG_CHANNELS {
        let sig = w.channel(ch);
        for t in 0..STFT_FRAMES {
            let seg = &sig[t * STFT_HOP..t * STFT_HOP + STFT_SEGMENT];
            let mean = if cfg.remove_mean {
                seg.iter().sum::<f64>() / STFT_SEGMENT as f64
            } else {
                0.0
            };
            for (b, (&s, &wn)) in buf.iter_mut().zip(seg.iter().zip(window.iter())) {
                *b = Complex::new((s - mean) * wn, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            let out = &mut data[(ch * STFT_FRAMES + t) * bins..(ch * STFT_FRAMES + t + 1) * bins];
            for (o, c) in out.iter_mut().zip(buf.iter()) {
                let mag = c.norm();
                *o = match cfg.kind {
                    SpectroKind::Magnitude => mag,
                    SpectroKind::Power => mag * mag,
                    SpectroKind::LogMagnitude => mag.ln_1p(),
                };
            }
        }
    }
    Ok(Spectrogram { data, bins })
}
