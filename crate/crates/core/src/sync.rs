//! Alignment of the three native-rate streams (EMG at 2000 Hz, glove angles
//! at 120 Hz, region pressure at 40 Hz) into supervised samples.
//!
//! Each sample is anchored at the END time of its EMG window, so labels never
//! depend on data after the anchor. Glove angles are linearly interpolated at
//! the anchor; pressure takes the temporally nearest frame. Anchors outside
//! the shared range of the glove and pressure streams are dropped, and no
//! value is ever extrapolated.

use crate::error::{Error, Result};
use crate::handkin::{glove_to_rotations, GloveAngles, JointRotations, NUM_GLOVE_CHANNELS};
use crate::pressure::{labels, RegionLabels, RegionPressure, NUM_REGIONS};
use crate::semgproc::{frame_stream, SemgWindow, DEFAULT_FRAME_STRIDE};

/// Multi-channel time series with strictly increasing timestamps and a fixed
/// number of values per tick, stored flat row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedStream {
    times: Vec<f64>,
    data: Vec<f64>,
    arity: usize,
}

impl TimedStream {
    pub fn new(times: Vec<f64>, data: Vec<f64>, arity: usize) -> Result<Self> {
        if arity == 0 {
            return Err(Error::InvalidInput("stream arity must be at least 1".into()));
        }
        if data.len() != times.len() * arity {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({} ticks x arity {arity})", times.len() * arity, times.len()),
                got: format!("{} values", data.len()),
            });
        }
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::InvalidInput(format!("timestamp {i} = {t} is not finite")));
            }
            if i > 0 && t <= times[i - 1] {
                return Err(Error::InvalidInput(format!(
                    "timestamps must be strictly increasing, got {} then {t} at tick {i}",
                    times[i - 1]
                )));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("stream payload contains non-finite values".into()));
        }
        Ok(TimedStream { times, data, arity })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Payload row at tick `i`.
    pub fn value(&self, i: usize) -> &[f64] {
        &self.data[i * self.arity..(i + 1) * self.arity]
    }

    pub fn first_time(&self) -> Option<f64> {
        self.times.first().copied()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("timed stream"));
        }
        Ok(())
    }

    /// Index of the first tick with time >= t (may be len()).
    fn lower_bound(&self, t: f64) -> usize {
        self.times.partition_point(|&x| x < t)
    }

    /// Componentwise linear interpolation at `t`; exact when `t` hits a
    /// source timestamp. `t` must lie within [first, last].
    pub fn sample_linear(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.require_nonempty()?;
        debug_assert_eq!(out.len(), self.arity);
        let (first, last) = (self.times[0], self.times[self.len() - 1]);
        if !(t >= first && t <= last) {
            return Err(Error::OutOfRange { target: t, first, last });
        }
        let i = self.lower_bound(t);
        if i < self.len() && self.times[i] == t {
            out.copy_from_slice(self.value(i));
            return Ok(());
        }
        // first <= t < times[i], and t != times[0], so 1 <= i <= len-1
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let u = (t - t0) / (t1 - t0);
        let (v0, v1) = (self.value(i - 1), self.value(i));
        for ((o, &a), &b) in out.iter_mut().zip(v0).zip(v1) {
            *o = a + (b - a) * u;
        }
        Ok(())
    }

    /// Payload of the temporally closest tick; ties break to the earlier one.
    pub fn sample_nearest(&self, t: f64) -> Result<&[f64]> {
        self.require_nonempty()?;
        Ok(self.value(self.nearest_index(t)))
    }

    fn nearest_index(&self, t: f64) -> usize {
        let i = self.lower_bound(t);
        if i == 0 {
            return 0;
        }
        if i == self.len() {
            return self.len() - 1;
        }
        if t - self.times[i - 1] <= self.times[i] - t {
            i - 1
        } else {
            i
        }
    }
}

/// Resamples every channel by linear interpolation at the given target
/// timestamps. Targets must be strictly increasing and inside the source
/// range; there is no extrapolation.
pub fn linear_resample(s: &TimedStream, targets: &[f64]) -> Result<TimedStream> {
    s.require_nonempty()?;
    let mut data = vec![0.0; targets.len() * s.arity()];
    for (k, &t) in targets.iter().enumerate() {
        s.sample_linear(t, &mut data[k * s.arity()..(k + 1) * s.arity()])?;
    }
    TimedStream::new(targets.to_vec(), data, s.arity())
}

/// Resamples by nearest neighbor at the given target timestamps (ties break
/// to the earlier sample). Targets must be strictly increasing.
pub fn nearest_resample(s: &TimedStream, targets: &[f64]) -> Result<TimedStream> {
    s.require_nonempty()?;
    let mut data = Vec::with_capacity(targets.len() * s.arity());
    for &t in targets {
        data.extend_from_slice(s.sample_nearest(t)?);
    }
    TimedStream::new(targets.to_vec(), data, s.arity())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramingConfig {
    /// EMG samples between consecutive window starts.
    pub stride: usize,
}

impl Default for FramingConfig {
    fn default() -> Self {
        FramingConfig { stride: DEFAULT_FRAME_STRIDE }
    }
}

/// One supervised sample: every part refers to the anchor timestamp, which is
/// the end time of the EMG window.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSample {
    pub anchor: f64,
    pub window: SemgWindow,
    pub rotations: JointRotations,
    pub pressure: RegionPressure,
    pub labels: RegionLabels,
}

/// Builds aligned samples from an 8-channel EMG stream, a 20-channel glove
/// angle stream, and a 9-channel region pressure stream (already clipped and
/// floored). Windows whose anchor falls outside the shared glove/pressure
/// time range are dropped; if nothing survives the result is a no-overlap
/// error.
pub fn assemble_dataset(
    emg: &TimedStream,
    pose: &TimedStream,
    pressure: &TimedStream,
    cfg: &FramingConfig,
) -> Result<Vec<AlignedSample>> {
    if pose.arity() != NUM_GLOVE_CHANNELS {
        return Err(Error::ShapeMismatch {
            expected: format!("{NUM_GLOVE_CHANNELS}-channel glove stream"),
            got: format!("{} channels", pose.arity()),
        });
    }
    if pressure.arity() != NUM_REGIONS {
        return Err(Error::ShapeMismatch {
            expected: format!("{NUM_REGIONS}-region pressure stream"),
            got: format!("{} channels", pressure.arity()),
        });
    }
    emg.require_nonempty()?;
    pose.require_nonempty()?;
    pressure.require_nonempty()?;

    let lo = pose.first_time().unwrap().max(pressure.first_time().unwrap());
    let hi = pose.last_time().unwrap().min(pressure.last_time().unwrap());
    if lo > hi || hi < emg.first_time().unwrap() || lo > emg.last_time().unwrap() {
        return Err(Error::NoOverlap);
    }

    let windows = frame_stream(emg, cfg.stride)?;
    let mut out = Vec::new();
    let mut angles = [0.0; NUM_GLOVE_CHANNELS];
    for window in windows {
        let anchor = window.end_time;
        if anchor < lo || anchor > hi {
            continue;
        }
        pose.sample_linear(anchor, &mut angles)?;
        let rotations = glove_to_rotations(&GloveAngles::from_slice(&angles)?);
        let mut p = [0.0; NUM_REGIONS];
        p.copy_from_slice(pressure.sample_nearest(anchor)?);
        let pressure = RegionPressure::new_clipped(anchor, p)?;
        let labels = labels(&pressure);
        out.push(AlignedSample { anchor, window, rotations, pressure, labels });
    }
    if out.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(out)
}
