//! Deterministic synthetic multimodal sessions: EMG, glove angles, and
//! region pressure with shared latent structure, for pipeline validation and
//! desk-scale training.
//!
//! A session walks through a sequence of postures from a 22-action
//! vocabulary. Each posture segment repeats a press cycle: a latent
//! activation envelope a(t) that rests, rises (raised cosine), holds at a
//! per-cycle peak, and falls. Pressure is the posture's region mask times
//! a(t) times a force amplitude, passed through the real clip/floor rule.
//! EMG is a fixed bank of 35 to 413 Hz sinusoids, amplitude-modulated per
//! channel by posture-specific weights times a(t), plus a uniform noise
//! floor. Glove angles blend smoothly between posture prototypes while the
//! envelope is in its rest phase. Everything is a pure function of the seed.

use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::handkin::{DEFAULT_ANGLE_BOUND, NUM_GLOVE_CHANNELS};
use crate::pressure::{clip_floor_value, NUM_REGIONS};
use crate::semgproc::SEMG_CHANNELS;
use crate::sync::TimedStream;

/// Fractions of one press cycle: rest gap, raised-cosine rise, hold, fall.
pub const CYCLE_GAP: f64 = 0.25;
pub const CYCLE_RISE: f64 = 0.20;
pub const CYCLE_HOLD: f64 = 0.30;
pub const CYCLE_FALL: f64 = 0.25;
/// Seconds spent blending glove angles into a new segment's prototype.
/// Shorter than the rest gap of a default cycle, so posture transitions
/// finish while pressure is zero.
pub const POSE_BLEND_S: f64 = 0.4;
/// Sinusoids per EMG channel.
const CARRIER_BANK: usize = 10;

static EMBEDDED_LIBRARY: LazyLock<PostureLibrary> = LazyLock::new(|| {
    PostureLibrary::from_json_str(include_str!("../assets/postures.json"))
        .expect("embedded posture asset is valid")
});

pub fn default_posture_library() -> &'static PostureLibrary {
    &EMBEDDED_LIBRARY
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostureKind {
    Plane,
    Pinch,
    Grasp,
}

/// One vocabulary entry: a prototype glove pose, the regions that bear
/// pressure, and per-channel EMG gains.
#[derive(Debug, Clone, PartialEq)]
pub struct Posture {
    pub name: String,
    pub abbrev: Option<String>,
    pub kind: PostureKind,
    pub mask: [bool; NUM_REGIONS],
    pub pose: [f64; NUM_GLOVE_CHANNELS],
    pub emg_weights: [f64; SEMG_CHANNELS],
}

#[derive(Deserialize)]
struct PostureSpec {
    name: String,
    abbrev: Option<String>,
    kind: PostureKind,
    regions: Vec<usize>,
    pose: Vec<f64>,
    emg_weights: Vec<f64>,
}

#[derive(Deserialize)]
struct LibrarySpec {
    version: u32,
    postures: Vec<PostureSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostureLibrary {
    postures: Vec<Posture>,
}

impl PostureLibrary {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: LibrarySpec = serde_json::from_str(s)?;
        if spec.version != 1 {
            return Err(Error::InvalidInput(format!(
                "unsupported posture library version {}",
                spec.version
            )));
        }
        if spec.postures.is_empty() {
            return Err(Error::Empty("posture library"));
        }
        let mut postures = Vec::with_capacity(spec.postures.len());
        for p in spec.postures {
            if p.regions.is_empty() {
                return Err(Error::InvalidInput(format!("posture {} has an empty mask", p.name)));
            }
            let mut mask = [false; NUM_REGIONS];
            for &r in &p.regions {
                if r >= NUM_REGIONS {
                    return Err(Error::InvalidInput(format!(
                        "posture {} references region {r}, want < {NUM_REGIONS}",
                        p.name
                    )));
                }
                mask[r] = true;
            }
            if p.pose.len() != NUM_GLOVE_CHANNELS {
                return Err(Error::ShapeMismatch {
                    expected: format!("{NUM_GLOVE_CHANNELS} pose angles"),
                    got: format!("{} for posture {}", p.pose.len(), p.name),
                });
            }
            let mut pose = [0.0; NUM_GLOVE_CHANNELS];
            for (slot, &a) in pose.iter_mut().zip(&p.pose) {
                if !a.is_finite() || a.abs() > DEFAULT_ANGLE_BOUND {
                    return Err(Error::InvalidInput(format!(
                        "posture {} pose angle {a} outside +/-{DEFAULT_ANGLE_BOUND}",
                        p.name
                    )));
                }
                *slot = a;
            }
            if p.emg_weights.len() != SEMG_CHANNELS {
                return Err(Error::ShapeMismatch {
                    expected: format!("{SEMG_CHANNELS} EMG weights"),
                    got: format!("{} for posture {}", p.emg_weights.len(), p.name),
                });
            }
            let mut emg_weights = [0.0; SEMG_CHANNELS];
            for (slot, &w) in emg_weights.iter_mut().zip(&p.emg_weights) {
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::InvalidInput(format!(
                        "posture {} EMG weight {w} outside [0, 1]",
                        p.name
                    )));
                }
                *slot = w;
            }
            postures.push(Posture {
                name: p.name,
                abbrev: p.abbrev,
                kind: p.kind,
                mask,
                pose,
                emg_weights,
            });
        }
        for i in 1..postures.len() {
            for j in 0..i {
                if postures[i].name == postures[j].name {
                    return Err(Error::InvalidInput(format!(
                        "duplicate posture name {}",
                        postures[i].name
                    )));
                }
            }
        }
        Ok(PostureLibrary { postures })
    }

    pub fn len(&self) -> usize {
        self.postures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postures.is_empty()
    }

    pub fn get(&self, i: usize) -> &Posture {
        &self.postures[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Posture> {
        self.postures.iter()
    }

    /// Index of the posture whose name or abbreviation matches exactly.
    pub fn find(&self, name: &str) -> Result<usize> {
        self.postures
            .iter()
            .position(|p| p.name == name || p.abbrev.as_deref() == Some(name))
            .ok_or_else(|| Error::UnknownPosture(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.postures.iter().map(|p| p.name.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeConfig {
    /// Press cycle period in seconds.
    pub period_s: f64,
    /// Per-cycle hold peaks are drawn uniformly from [peak_min, peak_max].
    pub peak_min: f64,
    pub peak_max: f64,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        EnvelopeConfig { period_s: 3.2, peak_min: 0.55, peak_max: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Uniform EMG noise floor amplitude (signal units).
    pub emg_floor: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { emg_floor: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateConfig {
    pub emg_hz: f64,
    pub pose_hz: f64,
    pub pressure_hz: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig { emg_hz: 2000.0, pose_hz: 120.0, pressure_hz: 40.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub duration_s: f64,
    /// Posture names (or abbreviations); the session is split evenly.
    pub postures: Vec<String>,
    /// Peak force in newtons applied to every masked region.
    pub amplitude_n: f64,
    pub envelope: EnvelopeConfig,
    pub noise: NoiseConfig,
    pub rates: RateConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            // one full press cycle per vocabulary entry
            duration_s: 70.4,
            postures: default_posture_library().names(),
            amplitude_n: 14.0,
            envelope: EnvelopeConfig::default(),
            noise: NoiseConfig::default(),
            rates: RateConfig::default(),
        }
    }
}

/// One contiguous stretch of the session spent in a single posture,
/// `[start, end)` in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PostureSegment {
    pub library_index: usize,
    pub name: String,
    pub start: f64,
    pub end: f64,
}

/// Ground truth the generator used: segment layout plus the activation
/// envelope sampled at the EMG and pressure tick times.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLatents {
    pub segments: Vec<PostureSegment>,
    pub envelope_emg: Vec<f64>,
    pub envelope_pressure: Vec<f64>,
}

impl SessionLatents {
    pub fn segment_at(&self, t: f64) -> Option<&PostureSegment> {
        self.segments.iter().find(|s| t >= s.start && t < s.end)
    }

    /// Library index of the posture active at `t`.
    pub fn posture_at(&self, t: f64) -> Option<usize> {
        self.segment_at(t).map(|s| s.library_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub emg: TimedStream,
    pub pose: TimedStream,
    pub pressure: TimedStream,
    pub latents: SessionLatents,
}

/// a(ts) for segment-relative time ts, given the per-cycle hold peaks.
fn envelope_value(ts: f64, period: f64, peaks: &[f64]) -> f64 {
    let cycle = ((ts / period) as usize).min(peaks.len().saturating_sub(1));
    let peak = peaks[cycle];
    let u = (ts - cycle as f64 * period) / period;
    if u < CYCLE_GAP {
        0.0
    } else if u < CYCLE_GAP + CYCLE_RISE {
        let x = (u - CYCLE_GAP) / CYCLE_RISE;
        peak * 0.5 * (1.0 - (std::f64::consts::PI * x).cos())
    } else if u < CYCLE_GAP + CYCLE_RISE + CYCLE_HOLD {
        peak
    } else {
        let x = (u - CYCLE_GAP - CYCLE_RISE - CYCLE_HOLD) / CYCLE_FALL;
        peak * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
    }
}

/// Fixed carrier frequency for channel `c`, bank slot `k`: 35 to 413 Hz.
fn carrier_freq(c: usize, k: usize) -> f64 {
    35.0 + k as f64 * 41.0 + c as f64 * 1.3
}

fn validate(cfg: &SynthConfig, lib: &PostureLibrary) -> Result<Vec<usize>> {
    if !(cfg.duration_s.is_finite() && cfg.duration_s > 0.0) {
        return Err(Error::InvalidInput(format!("duration {} s must be positive", cfg.duration_s)));
    }
    if cfg.postures.is_empty() {
        return Err(Error::Empty("posture sequence"));
    }
    let indices: Vec<usize> =
        cfg.postures.iter().map(|n| lib.find(n)).collect::<Result<_>>()?;
    let seg_len = cfg.duration_s / cfg.postures.len() as f64;
    if seg_len < POSE_BLEND_S {
        return Err(Error::InvalidInput(format!(
            "segments of {seg_len:.3} s are shorter than the {POSE_BLEND_S} s pose blend"
        )));
    }
    let e = &cfg.envelope;
    if !(e.period_s.is_finite() && e.period_s > 0.0) {
        return Err(Error::InvalidInput(format!("cycle period {} s must be positive", e.period_s)));
    }
    if !(0.0..=1.0).contains(&e.peak_min)
        || !(0.0..=1.0).contains(&e.peak_max)
        || e.peak_min > e.peak_max
    {
        return Err(Error::InvalidInput(format!(
            "peak range [{}, {}] must satisfy 0 <= min <= max <= 1",
            e.peak_min, e.peak_max
        )));
    }
    if !(cfg.amplitude_n.is_finite() && cfg.amplitude_n >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "force amplitude {} N must be nonnegative",
            cfg.amplitude_n
        )));
    }
    if !(cfg.noise.emg_floor.is_finite() && cfg.noise.emg_floor >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "EMG noise floor {} must be nonnegative",
            cfg.noise.emg_floor
        )));
    }
    for (name, hz) in [
        ("EMG", cfg.rates.emg_hz),
        ("pose", cfg.rates.pose_hz),
        ("pressure", cfg.rates.pressure_hz),
    ] {
        if !(hz.is_finite() && hz > 0.0) {
            return Err(Error::InvalidInput(format!("{name} rate {hz} Hz must be positive")));
        }
        if (cfg.duration_s * hz) as usize == 0 {
            return Err(Error::InvalidInput(format!(
                "duration {} s yields no {name} ticks at {hz} Hz",
                cfg.duration_s
            )));
        }
    }
    Ok(indices)
}

/// Generates a full session. Identical configs produce bitwise-identical
/// streams and latents.
pub fn generate_session(cfg: &SynthConfig) -> Result<SynthSession> {
    let lib = default_posture_library();
    let indices = validate(cfg, lib)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    // draw order is fixed: carrier phases, then per-segment cycle peaks,
    // then per-sample EMG noise
    let mut phases = [[0.0; CARRIER_BANK]; SEMG_CHANNELS];
    for row in &mut phases {
        for p in row.iter_mut() {
            *p = rng.random_range(0.0..std::f64::consts::TAU);
        }
    }

    let n_seg = indices.len();
    let seg_len = cfg.duration_s / n_seg as f64;
    let period = cfg.envelope.period_s;
    let cycles_per_seg = (seg_len / period).ceil().max(1.0) as usize;
    let (lo, hi) = (cfg.envelope.peak_min, cfg.envelope.peak_max);
    let mut peaks: Vec<Vec<f64>> = Vec::with_capacity(n_seg);
    for _ in 0..n_seg {
        let row = (0..cycles_per_seg)
            .map(|_| if lo == hi { lo } else { rng.random_range(lo..hi) })
            .collect();
        peaks.push(row);
    }

    let segments: Vec<PostureSegment> = indices
        .iter()
        .enumerate()
        .map(|(s, &li)| PostureSegment {
            library_index: li,
            name: lib.get(li).name.clone(),
            start: s as f64 * seg_len,
            end: (s + 1) as f64 * seg_len,
        })
        .collect();
    // segment index for a tick time; ticks never reach duration_s
    let seg_of = |t: f64| ((t / seg_len) as usize).min(n_seg - 1);
    let env_at = |t: f64| {
        let s = seg_of(t);
        envelope_value(t - segments[s].start, period, &peaks[s])
    };

    // EMG at its native rate
    let n_emg = (cfg.duration_s * cfg.rates.emg_hz) as usize;
    let carrier_amp = (2.0 / CARRIER_BANK as f64).sqrt();
    let mut emg_times = Vec::with_capacity(n_emg);
    let mut emg_data = Vec::with_capacity(n_emg * SEMG_CHANNELS);
    let mut envelope_emg = Vec::with_capacity(n_emg);
    for i in 0..n_emg {
        let t = i as f64 / cfg.rates.emg_hz;
        let a = env_at(t);
        let w = &lib.get(indices[seg_of(t)]).emg_weights;
        emg_times.push(t);
        envelope_emg.push(a);
        for (c, &wc) in w.iter().enumerate() {
            let mut carrier = 0.0;
            for (k, &phi) in phases[c].iter().enumerate() {
                carrier += (std::f64::consts::TAU * carrier_freq(c, k) * t + phi).sin();
            }
            let noise = cfg.noise.emg_floor * rng.random_range(-1.0..1.0);
            emg_data.push(wc * a * carrier_amp * carrier + noise);
        }
    }
    let emg = TimedStream::new(emg_times, emg_data, SEMG_CHANNELS)?;

    // glove angles: hold each prototype, raised-cosine blend at segment entry
    let n_pose = (cfg.duration_s * cfg.rates.pose_hz) as usize;
    let mut pose_times = Vec::with_capacity(n_pose);
    let mut pose_data = Vec::with_capacity(n_pose * NUM_GLOVE_CHANNELS);
    let rest = [0.0; NUM_GLOVE_CHANNELS];
    for i in 0..n_pose {
        let t = i as f64 / cfg.rates.pose_hz;
        let s = seg_of(t);
        let to = &lib.get(indices[s]).pose;
        let ts = t - segments[s].start;
        pose_times.push(t);
        if ts < POSE_BLEND_S {
            let from = if s == 0 { &rest } else { &lib.get(indices[s - 1]).pose };
            let u = 0.5 * (1.0 - (std::f64::consts::PI * ts / POSE_BLEND_S).cos());
            for ch in 0..NUM_GLOVE_CHANNELS {
                pose_data.push(from[ch] + (to[ch] - from[ch]) * u);
            }
        } else {
            pose_data.extend_from_slice(to);
        }
    }
    let pose = TimedStream::new(pose_times, pose_data, NUM_GLOVE_CHANNELS)?;

    // region pressure through the real clip/floor rule
    let n_p = (cfg.duration_s * cfg.rates.pressure_hz) as usize;
    let mut p_times = Vec::with_capacity(n_p);
    let mut p_data = Vec::with_capacity(n_p * NUM_REGIONS);
    let mut envelope_pressure = Vec::with_capacity(n_p);
    for i in 0..n_p {
        let t = i as f64 / cfg.rates.pressure_hz;
        let a = env_at(t);
        let mask = &lib.get(indices[seg_of(t)]).mask;
        p_times.push(t);
        envelope_pressure.push(a);
        for &m in mask.iter() {
            p_data.push(if m { clip_floor_value(cfg.amplitude_n * a) } else { 0.0 });
        }
    }
    let pressure = TimedStream::new(p_times, p_data, NUM_REGIONS)?;

    Ok(SynthSession {
        emg,
        pose,
        pressure,
        latents: SessionLatents { segments, envelope_emg, envelope_pressure },
    })
}
