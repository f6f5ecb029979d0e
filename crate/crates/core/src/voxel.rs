//! Joint-to-grid scaling and 3D Gaussian heatmap volumes.
//!
//! Joints are min-max scaled so the training set's per-axis extrema land on
//! [12, 36], centered inside the 48³ grid. Each of the 21 joints is then
//! rendered as a peak-1 Gaussian over integer voxel coordinates, one channel
//! per joint. Volume layout is row-major [channel][x][y][z].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::handkin::{JointSet, NUM_JOINTS};

/// Voxels per axis.
pub const GRID: usize = 48;
/// Scaled coordinate of each axis minimum.
pub const GRID_LO: f64 = 12.0;
/// Scaled coordinate of each axis maximum.
pub const GRID_HI: f64 = 36.0;
/// Default Gaussian standard deviation in voxels.
pub const DEFAULT_SIGMA: f64 = 1.0;

pub const VOXELS_PER_CHANNEL: usize = GRID * GRID * GRID;
pub const VOLUME_LEN: usize = NUM_JOINTS * VOXELS_PER_CHANNEL;

/// Per-axis extrema of a training set's joint coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl ScalerStats {
    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            if !self.min[axis].is_finite() || !self.max[axis].is_finite() {
                return Err(Error::InvalidInput(format!(
                    "scaler axis {axis} has non-finite bounds"
                )));
            }
            if self.max[axis] <= self.min[axis] {
                return Err(Error::DegenerateAxis { axis, value: self.min[axis] });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scaler stats serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let stats: ScalerStats = serde_json::from_str(s)?;
        stats.validate()?;
        Ok(stats)
    }
}

/// Joint positions in grid-voxel coordinates. `out_of_range` marks poses
/// whose source coordinates fell outside the fitted extrema (they
/// extrapolate linearly, never clamp).
#[derive(Debug, Clone, PartialEq)]
pub struct GridJoints {
    pub coords: [[f64; 3]; NUM_JOINTS],
    pub out_of_range: bool,
}

impl GridJoints {
    pub fn as_flat(&self) -> Vec<f64> {
        self.coords.iter().flatten().copied().collect()
    }

    pub fn from_flat(v: &[f64], out_of_range: bool) -> Result<Self> {
        if v.len() != NUM_JOINTS * 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} coordinates", NUM_JOINTS * 3),
                got: format!("{}", v.len()),
            });
        }
        let mut coords = [[0.0; 3]; NUM_JOINTS];
        for (j, c) in coords.iter_mut().enumerate() {
            *c = [v[3 * j], v[3 * j + 1], v[3 * j + 2]];
        }
        Ok(GridJoints { coords, out_of_range })
    }
}

/// 21-channel Gaussian heatmap volume over the 48³ grid, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapVolume {
    data: Vec<f64>,
}

impl HeatmapVolume {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        &self.data[k * VOXELS_PER_CHANNEL..(k + 1) * VOXELS_PER_CHANNEL]
    }

    pub fn value(&self, k: usize, x: usize, y: usize, z: usize) -> f64 {
        self.data[((k * GRID + x) * GRID + y) * GRID + z]
    }

    /// Non-overlapping average pooling by `factor` per spatial axis;
    /// returns (pooled grid size, channel-major data).
    pub fn pooled(&self, factor: usize) -> Result<(usize, Vec<f64>)> {
        if factor == 0 || GRID % factor != 0 {
            return Err(Error::InvalidInput(format!(
                "pool factor {factor} must divide the grid size {GRID}"
            )));
        }
        let g = GRID / factor;
        let inv = 1.0 / (factor * factor * factor) as f64;
        let mut out = vec![0.0; NUM_JOINTS * g * g * g];
        for k in 0..NUM_JOINTS {
            let ch = self.channel(k);
            for x in 0..g {
                for y in 0..g {
                    for z in 0..g {
                        let mut acc = 0.0;
                        for dx in 0..factor {
                            let xi = (x * factor + dx) * GRID;
                            for dy in 0..factor {
                                let yi = (xi + y * factor + dy) * GRID + z * factor;
                                for dz in 0..factor {
                                    acc += ch[yi + dz];
                                }
                            }
                        }
                        out[((k * g + x) * g + y) * g + z] = acc * inv;
                    }
                }
            }
        }
        Ok((g, out))
    }
}

/// Per-axis extrema over every joint of every pose.
pub fn fit_scaler<'a, I>(joint_sets: I) -> Result<ScalerStats>
where
    I: IntoIterator<Item = &'a JointSet>,
{
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    let mut seen = false;
    for js in joint_sets {
        seen = true;
        for j in &js.joints {
            for axis in 0..3 {
                min[axis] = min[axis].min(j[axis]);
                max[axis] = max[axis].max(j[axis]);
            }
        }
    }
    if !seen {
        return Err(Error::Empty("fit_scaler needs at least one pose"));
    }
    let stats = ScalerStats { min, max };
    stats.validate()?;
    Ok(stats)
}

/// Affine map per axis: dataset min -> 12, dataset max -> 36. Inputs outside
/// the fitted extrema extrapolate and set the out-of-range flag.
pub fn scale_joints(j: &JointSet, s: &ScalerStats) -> Result<GridJoints> {
    s.validate()?;
    let mut coords = [[0.0; 3]; NUM_JOINTS];
    let mut out_of_range = false;
    for (out, q) in coords.iter_mut().zip(j.joints.iter()) {
        for axis in 0..3 {
            let v = q[axis];
            if v < s.min[axis] || v > s.max[axis] {
                out_of_range = true;
            }
            out[axis] = GRID_LO
                + (v - s.min[axis]) / (s.max[axis] - s.min[axis]) * (GRID_HI - GRID_LO);
        }
    }
    Ok(GridJoints { coords, out_of_range })
}

/// Inverse of [`scale_joints`] (for tests and diagnostics).
pub fn unscale_joints(g: &GridJoints, s: &ScalerStats, canonical: bool) -> Result<JointSet> {
    s.validate()?;
    let mut joints = [[0.0; 3]; NUM_JOINTS];
    for (out, c) in joints.iter_mut().zip(g.coords.iter()) {
        for axis in 0..3 {
            out[axis] = s.min[axis]
                + (c[axis] - GRID_LO) / (GRID_HI - GRID_LO) * (s.max[axis] - s.min[axis]);
        }
    }
    JointSet::new(joints, canonical)
}

/// Renders each joint as a separable Gaussian over integer voxel centers:
/// channel k holds exp(-|v - j_k|^2 / (2 sigma^2)). Peak is exactly 1 when a
/// joint coincides with a voxel center; every value is in [0, 1] because
/// each axis factor is at most 1.
pub fn voxelize(j: &GridJoints, sigma: f64) -> Result<HeatmapVolume> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    let inv2s2 = 1.0 / (2.0 * sigma * sigma);
    let mut data = vec![0.0; VOLUME_LEN];
    data.par_chunks_mut(VOXELS_PER_CHANNEL)
        .zip(j.coords.par_iter())
        .for_each(|(ch, joint)| {
            let mut wx = [0.0; GRID];
            let mut wy = [0.0; GRID];
            let mut wz = [0.0; GRID];
            for i in 0..GRID {
                let fi = i as f64;
                wx[i] = (-(fi - joint[0]) * (fi - joint[0]) * inv2s2).exp();
                wy[i] = (-(fi - joint[1]) * (fi - joint[1]) * inv2s2).exp();
                wz[i] = (-(fi - joint[2]) * (fi - joint[2]) * inv2s2).exp();
            }
            let mut idx = 0;
            for x in 0..GRID {
                for y in 0..GRID {
                    let wxy = wx[x] * wy[y];
                    for z in 0..GRID {
                        ch[idx] = wxy * wz[z];
                        idx += 1;
                    }
                }
            }
        });
    Ok(HeatmapVolume { data })
}
