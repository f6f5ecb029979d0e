//! FSR calibration, 9-region pressure aggregation, clipping/flooring, and
//! binary contact labels.
//!
//! Regions are ordered [thumb, index, middle, ring, pinky, palm upper-right,
//! palm upper-left, palm lower-right, palm lower-left]. A region's value is
//! the maximum over its member sensors; fingertip regions additionally take
//! the dedicated fingertip FSR into the max. Values are clipped to 20 N and
//! floored below 0.2 N, so stored pressures live in {0} ∪ [0.2, 20].

use std::sync::LazyLock;

use serde::Deserialize;

use crate::error::{Error, Result};

pub const NUM_REGIONS: usize = 9;
pub const NUM_GLOVE_NODES: usize = 65;
pub const NUM_FSR: usize = 5;
/// Clip ceiling in newtons.
pub const P_MAX: f64 = 20.0;
/// Noise floor in newtons; smaller values are treated as no contact.
pub const P_FLOOR: f64 = 0.2;
/// Glove nodes that must be assigned to a region.
pub const REGION_RELEVANT_NODES: usize = 16;

pub const REGION_NAMES: [&str; NUM_REGIONS] = [
    "thumb", "index", "middle", "ring", "pinky", "palm_ur", "palm_ul", "palm_lr", "palm_ll",
];

static EMBEDDED_REGION_MAP: LazyLock<RegionMap> = LazyLock::new(|| {
    RegionMap::from_json_str(include_str!("../assets/region_map.json"))
        .expect("embedded region map asset is valid")
});

pub fn default_region_map() -> &'static RegionMap {
    &EMBEDDED_REGION_MAP
}

/// Sensor-to-region assignment: 16 of the 65 glove nodes plus the 5
/// fingertip FSRs map into the 9 regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    glove_node_regions: [Option<u8>; NUM_GLOVE_NODES],
    fsr_regions: [u8; NUM_FSR],
}

#[derive(Deserialize)]
struct RegionMapSpec {
    version: u32,
    #[serde(default)]
    region_names: Option<Vec<String>>,
    glove_node_regions: Vec<Option<u8>>,
    fsr_regions: Vec<u8>,
}

impl RegionMap {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: RegionMapSpec = serde_json::from_str(s)?;
        if spec.version != 1 {
            return Err(Error::InvalidInput(format!(
                "unsupported region map version {}",
                spec.version
            )));
        }
        if let Some(names) = &spec.region_names {
            if names.len() != NUM_REGIONS {
                return Err(Error::InvalidInput(format!(
                    "region_names has {} entries, want {NUM_REGIONS}",
                    names.len()
                )));
            }
        }
        if spec.glove_node_regions.len() != NUM_GLOVE_NODES {
            return Err(Error::InvalidInput(format!(
                "glove_node_regions has {} entries, want {NUM_GLOVE_NODES}",
                spec.glove_node_regions.len()
            )));
        }
        let mut glove_node_regions = [None; NUM_GLOVE_NODES];
        let mut assigned = 0;
        for (i, r) in spec.glove_node_regions.iter().enumerate() {
            if let Some(region) = r {
                if *region as usize >= NUM_REGIONS {
                    return Err(Error::InvalidInput(format!(
                        "glove node {i} maps to region {region}, want < {NUM_REGIONS}"
                    )));
                }
                assigned += 1;
            }
            glove_node_regions[i] = *r;
        }
        if assigned != REGION_RELEVANT_NODES {
            return Err(Error::InvalidInput(format!(
                "{assigned} glove nodes assigned to regions, want exactly {REGION_RELEVANT_NODES}"
            )));
        }
        if spec.fsr_regions.len() != NUM_FSR {
            return Err(Error::InvalidInput(format!(
                "fsr_regions has {} entries, want {NUM_FSR}",
                spec.fsr_regions.len()
            )));
        }
        let mut fsr_regions = [0u8; NUM_FSR];
        for (i, &r) in spec.fsr_regions.iter().enumerate() {
            // FSRs sit on fingertips; they must map to the 5 fingertip regions
            if r as usize >= 5 {
                return Err(Error::InvalidInput(format!(
                    "FSR {i} maps to region {r}, want a fingertip region (< 5)"
                )));
            }
            fsr_regions[i] = r;
        }
        Ok(RegionMap { glove_node_regions, fsr_regions })
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn glove_node_region(&self, node: usize) -> Option<usize> {
        self.glove_node_regions[node].map(|r| r as usize)
    }

    pub fn fsr_region(&self, fsr: usize) -> usize {
        self.fsr_regions[fsr] as usize
    }
}

/// One raw pressure frame: 65 glove node readings plus 5 fingertip FSR
/// readings, all in newtons (post-calibration), nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPressureFrame {
    pub time: f64,
    pub nodes: [f64; NUM_GLOVE_NODES],
    pub fsr: [f64; NUM_FSR],
}

impl RawPressureFrame {
    pub fn new(time: f64, nodes: [f64; NUM_GLOVE_NODES], fsr: [f64; NUM_FSR]) -> Result<Self> {
        if !time.is_finite() {
            return Err(Error::InvalidInput(format!("frame time {time} is not finite")));
        }
        for (i, v) in nodes.iter().chain(fsr.iter()).enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "pressure reading {i} = {v} must be finite and nonnegative"
                )));
            }
        }
        Ok(RawPressureFrame { time, nodes, fsr })
    }
}

/// 9-region pressure vector in newtons.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPressure {
    pub time: f64,
    pub p: [f64; NUM_REGIONS],
}

impl RegionPressure {
    /// Accepts only clipped-and-floored values: {0} ∪ [0.2, 20].
    pub fn new_clipped(time: f64, p: [f64; NUM_REGIONS]) -> Result<Self> {
        for (i, v) in p.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 || *v > P_MAX || (*v > 0.0 && *v < P_FLOOR) {
                return Err(Error::InvalidInput(format!(
                    "region {i} pressure {v} N outside {{0}} ∪ [{P_FLOOR}, {P_MAX}]"
                )));
            }
        }
        Ok(RegionPressure { time, p })
    }
}

/// Binary contact status per region: C_i = (P_i > 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabels {
    pub c: [bool; NUM_REGIONS],
}

/// Monotone conductance-to-force mapping fitted through the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    slope: f64,
    quad: f64,
    residual_rms: f64,
    fit_range: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitFamily {
    /// force = slope * conductance
    #[default]
    LinearOrigin,
    /// force = slope * conductance + quad * conductance^2
    QuadraticOrigin,
}

impl CalibrationCurve {
    pub fn apply(&self, conductance: f64) -> f64 {
        self.slope * conductance + self.quad * conductance * conductance
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn residual_rms(&self) -> f64 {
        self.residual_rms
    }
}

/// Least-squares fit of force against conductance, anchored at the origin
/// (zero conductance reads zero force). Requires at least two distinct
/// positive conductance values; the fitted curve must be monotone
/// nondecreasing over the sampled range.
pub fn fit_calibration(samples: &[(f64, f64)], family: FitFamily) -> Result<CalibrationCurve> {
    let mut g_max: f64 = 0.0;
    let mut distinct: Vec<f64> = Vec::new();
    for &(g, f) in samples {
        if !g.is_finite() || !f.is_finite() || g < 0.0 {
            return Err(Error::InvalidInput(format!(
                "calibration sample ({g}, {f}) must be finite with nonnegative conductance"
            )));
        }
        g_max = g_max.max(g);
        if g > 0.0 && !distinct.iter().any(|&d| d == g) {
            distinct.push(g);
        }
    }
    if distinct.len() < 2 {
        return Err(Error::InvalidInput(
            "calibration needs at least two distinct positive conductance values".into(),
        ));
    }

    let (slope, quad) = match family {
        FitFamily::LinearOrigin => {
            let sgg: f64 = samples.iter().map(|(g, _)| g * g).sum();
            let sgf: f64 = samples.iter().map(|(g, f)| g * f).sum();
            (sgf / sgg, 0.0)
        }
        FitFamily::QuadraticOrigin => {
            let s2: f64 = samples.iter().map(|(g, _)| g.powi(2)).sum();
            let s3: f64 = samples.iter().map(|(g, _)| g.powi(3)).sum();
            let s4: f64 = samples.iter().map(|(g, _)| g.powi(4)).sum();
            let sgf: f64 = samples.iter().map(|(g, f)| g * f).sum();
            let sg2f: f64 = samples.iter().map(|(g, f)| g * g * f).sum();
            let det = s2 * s4 - s3 * s3;
            if det.abs() <= 1e-12 * s2 * s4 {
                return Err(Error::InvalidInput(
                    "calibration samples are degenerate for a quadratic fit".into(),
                ));
            }
            ((s4 * sgf - s3 * sg2f) / det, (s2 * sg2f - s3 * sgf) / det)
        }
    };

    // derivative slope + 2*quad*g is linear in g; endpoint checks cover the range
    let d0 = slope;
    let d1 = slope + 2.0 * quad * g_max;
    let scale = d0.abs().max(d1.abs()).max(1e-300);
    if d0 < -1e-9 * scale || d1 < -1e-9 * scale {
        return Err(Error::InvalidInput(
            "calibration fit is not monotone nondecreasing over the sampled range".into(),
        ));
    }

    let n = samples.len() as f64;
    let ss: f64 = samples
        .iter()
        .map(|&(g, f)| {
            let r = slope * g + quad * g * g - f;
            r * r
        })
        .sum();
    Ok(CalibrationCurve { slope, quad, residual_rms: (ss / n).sqrt(), fit_range: (0.0, g_max) })
}

/// Maps a conductance frame to forces through the calibration curve.
pub fn calibrate_frame(frame: &RawPressureFrame, curve: &CalibrationCurve) -> Result<RawPressureFrame> {
    let mut nodes = frame.nodes;
    let mut fsr = frame.fsr;
    for v in nodes.iter_mut().chain(fsr.iter_mut()) {
        *v = curve.apply(*v);
    }
    RawPressureFrame::new(frame.time, nodes, fsr)
}

/// Per-region maximum over member sensors (pre-clip). Fingertip regions
/// take the max of their glove tip nodes and the dedicated FSR.
pub fn aggregate_regions(frame: &RawPressureFrame, map: &RegionMap) -> RegionPressure {
    let mut p = [0.0f64; NUM_REGIONS];
    for (node, &v) in frame.nodes.iter().enumerate() {
        if let Some(region) = map.glove_node_region(node) {
            p[region] = p[region].max(v);
        }
    }
    for (i, &v) in frame.fsr.iter().enumerate() {
        let region = map.fsr_region(i);
        p[region] = p[region].max(v);
    }
    RegionPressure { time: frame.time, p }
}

/// Clips to the 20 N ceiling and floors sub-0.2 N readings to zero.
pub fn clip_floor(pre: &RegionPressure) -> RegionPressure {
    let mut p = pre.p;
    for v in &mut p {
        if *v > P_MAX {
            *v = P_MAX;
        } else if *v < P_FLOOR {
            *v = 0.0;
        }
    }
    RegionPressure { time: pre.time, p }
}

/// Scalar form of [`clip_floor`] for stream-level use.
pub fn clip_floor_value(v: f64) -> f64 {
    if v > P_MAX {
        P_MAX
    } else if v < P_FLOOR {
        0.0
    } else {
        v
    }
}

pub fn labels(p: &RegionPressure) -> RegionLabels {
    let mut c = [false; NUM_REGIONS];
    for (ci, &v) in c.iter_mut().zip(p.p.iter()) {
        *ci = v > 0.0;
    }
    RegionLabels { c }
}
