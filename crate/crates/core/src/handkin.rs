//! Hand skeleton model, glove-angle conversion, forward kinematics, and
//! canonicalization of externally detected poses.
//!
//! Joint layout (21 joints): index 0 is the root (wrist); each finger
//! contributes a 4-joint chain in the order thumb, index, middle, ring,
//! pinky. Within a chain the joints are base (CMC for the thumb, MCP
//! otherwise), then two intermediate joints, then the tip. The first three
//! joints of every chain articulate, giving 15 rotation slots; tips are
//! leaves. Segment `parent(j) -> j` has rest direction `rest_dirs[j-1]` and
//! length `bone_lengths[j-1]`, both expressed in the parent's frame.
//!
//! Conventions: flat rest pose in the xy-plane, fingers fanned around +y,
//! palm normal +z. Abduction rotates about z, flexion about x, applied
//! intrinsically as R = Rz(abduction) * Ry(free) * Rx(flexion). The palm
//! segments (root to each finger base) never rotate, so the triangle used
//! for canonicalization is pose-invariant.

use std::sync::LazyLock;

use nalgebra::{Rotation3, Unit, Vector3};
use serde::Deserialize;

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 21;
pub const NUM_SEGMENTS: usize = 20;
pub const NUM_ARTICULATED: usize = 15;
pub const NUM_GLOVE_CHANNELS: usize = 20;
pub const NUM_FINGERS: usize = 5;

/// Root joint index.
pub const ROOT: usize = 0;
/// Index-finger MCP joint index (canonicalization anchor).
pub const INDEX_MCP: usize = 5;
/// Middle-finger MCP joint index (scale reference, canonicalization anchor).
pub const MIDDLE_MCP: usize = 9;

/// Default validation bound on glove angles (radians).
pub const DEFAULT_ANGLE_BOUND: f64 = std::f64::consts::PI;

static EMBEDDED_SKELETON: LazyLock<HandSkeleton> = LazyLock::new(|| {
    HandSkeleton::from_json_str(include_str!("../assets/skeleton.json"))
        .expect("embedded skeleton asset is valid")
});

/// The default skeleton with the published relative bone lengths.
pub fn default_skeleton() -> &'static HandSkeleton {
    &EMBEDDED_SKELETON
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandSkeleton {
    parents: [i8; NUM_JOINTS],
    bone_lengths: [f64; NUM_SEGMENTS],
    rest_dirs: [[f64; 3]; NUM_SEGMENTS],
}

#[derive(Deserialize)]
struct SkeletonSpec {
    version: u32,
    #[serde(default)]
    joint_names: Option<Vec<String>>,
    parents: Vec<i32>,
    bone_lengths: Vec<f64>,
    rest_directions: Vec<[f64; 3]>,
}

impl HandSkeleton {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: SkeletonSpec = serde_json::from_str(s)?;
        if spec.version != 1 {
            return Err(Error::InvalidInput(format!(
                "unsupported skeleton version {}",
                spec.version
            )));
        }
        if let Some(names) = &spec.joint_names {
            if names.len() != NUM_JOINTS {
                return Err(Error::InvalidInput(format!(
                    "joint_names has {} entries, want {NUM_JOINTS}",
                    names.len()
                )));
            }
        }
        if spec.parents.len() != NUM_JOINTS {
            return Err(Error::InvalidInput(format!(
                "parents has {} entries, want {NUM_JOINTS}",
                spec.parents.len()
            )));
        }
        if spec.parents[0] != -1 {
            return Err(Error::InvalidInput("joint 0 must be the root (parent -1)".into()));
        }
        let mut parents = [-1i8; NUM_JOINTS];
        for (j, &p) in spec.parents.iter().enumerate().skip(1) {
            // parent index strictly below the child keeps the tree acyclic,
            // connected to the single root, and traversable in index order
            if p < 0 || p as usize >= j {
                return Err(Error::InvalidInput(format!(
                    "joint {j} has parent {p}; parents must satisfy 0 <= parent < joint"
                )));
            }
            parents[j] = p as i8;
        }
        if spec.bone_lengths.len() != NUM_SEGMENTS {
            return Err(Error::InvalidInput(format!(
                "bone_lengths has {} entries, want {NUM_SEGMENTS}",
                spec.bone_lengths.len()
            )));
        }
        let mut bone_lengths = [0.0; NUM_SEGMENTS];
        for (i, &l) in spec.bone_lengths.iter().enumerate() {
            if !l.is_finite() || l <= 0.0 {
                return Err(Error::InvalidInput(format!("bone length {i} = {l} must be > 0")));
            }
            bone_lengths[i] = l;
        }
        if bone_lengths[MIDDLE_MCP - 1] != 1.0 {
            return Err(Error::InvalidInput(format!(
                "root-to-middle-MCP length must be exactly 1.0 (the scale reference), got {}",
                bone_lengths[MIDDLE_MCP - 1]
            )));
        }
        if spec.rest_directions.len() != NUM_SEGMENTS {
            return Err(Error::InvalidInput(format!(
                "rest_directions has {} entries, want {NUM_SEGMENTS}",
                spec.rest_directions.len()
            )));
        }
        let mut rest_dirs = [[0.0; 3]; NUM_SEGMENTS];
        for (i, d) in spec.rest_directions.iter().enumerate() {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if !n.is_finite() || n < 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "rest direction {i} = {d:?} is not a usable direction"
                )));
            }
            rest_dirs[i] = [d[0] / n, d[1] / n, d[2] / n];
        }
        Ok(HandSkeleton { parents, bone_lengths, rest_dirs })
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        let p = self.parents[joint];
        (p >= 0).then_some(p as usize)
    }

    /// Length of the segment ending at `joint` (1..=20).
    pub fn bone_length(&self, joint: usize) -> f64 {
        self.bone_lengths[joint - 1]
    }

    pub fn bone_lengths(&self) -> &[f64; NUM_SEGMENTS] {
        &self.bone_lengths
    }

    pub fn rest_dir(&self, joint: usize) -> [f64; 3] {
        self.rest_dirs[joint - 1]
    }

    /// Plane normal of the (root, middle-MCP, index-MCP) triangle in the
    /// rest pose; the canonical frame aligns detector poses to this.
    fn reference_normal(&self) -> Result<Vector3<f64>> {
        let mid = Vector3::from(self.rest_dirs[MIDDLE_MCP - 1]);
        let idx = Vector3::from(self.rest_dirs[INDEX_MCP - 1]);
        let n = mid.cross(&idx);
        if n.norm() < 1e-9 {
            return Err(Error::DegeneratePose(
                "skeleton rest pose has collinear root/middle-MCP/index-MCP".into(),
            ));
        }
        Ok(n.normalize())
    }
}

/// Raw glove readout: 20 angles in radians, finger-major
/// [thumb, index, middle, ring, pinky], each finger contributing
/// [abduction, flexion1, flexion2, flexion3]. For the thumb the slots are
/// CMC abduction/flexion, MCP flexion, IP flexion; for the other fingers
/// MCP abduction/flexion, PIP flexion, DIP flexion.
#[derive(Debug, Clone, PartialEq)]
pub struct GloveAngles(pub [f64; NUM_GLOVE_CHANNELS]);

impl GloveAngles {
    pub fn new(angles: [f64; NUM_GLOVE_CHANNELS]) -> Result<Self> {
        for (i, a) in angles.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::InvalidInput(format!("glove angle {i} is not finite ({a})")));
            }
        }
        Ok(GloveAngles(angles))
    }

    pub fn from_slice(angles: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_GLOVE_CHANNELS] = angles.try_into().map_err(|_| {
            Error::ShapeMismatch {
                expected: format!("{NUM_GLOVE_CHANNELS} glove angles"),
                got: format!("{}", angles.len()),
            }
        })?;
        Self::new(arr)
    }

    /// Channels outside ±bound. Validation only; values are never clamped.
    pub fn out_of_bounds(&self, bound: f64) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, a)| a.abs() > bound)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-joint rotation parameters for the 15 articulated joints, ordered
/// along the tree (finger-major, base to distal). Each row is
/// [x flexion, y, z abduction] Euler angles composed as Rz * Ry * Rx.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRotations(pub [[f64; 3]; NUM_ARTICULATED]);

impl JointRotations {
    pub fn new(theta: [[f64; 3]; NUM_ARTICULATED]) -> Result<Self> {
        for (r, row) in theta.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "rotation ({r},{c}) is not finite ({v})"
                    )));
                }
            }
        }
        Ok(JointRotations(theta))
    }

    pub fn zeros() -> Self {
        JointRotations([[0.0; 3]; NUM_ARTICULATED])
    }

    pub fn as_flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != NUM_ARTICULATED * 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} rotation values", NUM_ARTICULATED * 3),
                got: format!("{}", v.len()),
            });
        }
        let mut theta = [[0.0; 3]; NUM_ARTICULATED];
        for r in 0..NUM_ARTICULATED {
            theta[r] = [v[3 * r], v[3 * r + 1], v[3 * r + 2]];
        }
        Self::new(theta)
    }
}

/// 21 joint positions. `canonical` marks poses in the reference frame
/// (root at the origin, unit root-to-middle-MCP distance, rest-pose plane).
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet {
    pub joints: [[f64; 3]; NUM_JOINTS],
    pub canonical: bool,
}

impl JointSet {
    pub fn new(joints: [[f64; 3]; NUM_JOINTS], canonical: bool) -> Result<Self> {
        for (j, p) in joints.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("joint {j} is not finite ({p:?})")));
            }
        }
        Ok(JointSet { joints, canonical })
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (self.joints[a], self.joints[b]);
        ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (pa[2] - pb[2]).powi(2)).sqrt()
    }

    /// Geometric canonicality check: root at origin and unit scale.
    pub fn looks_canonical(&self, tol: f64) -> bool {
        let r = self.joints[ROOT];
        let root_norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        root_norm <= tol && (self.distance(ROOT, MIDDLE_MCP) - 1.0).abs() <= tol
    }

    pub fn as_flat(&self) -> Vec<f64> {
        self.joints.iter().flatten().copied().collect()
    }
}

/// True if `joint` (1..=20) carries a rotation slot (all but the tips).
pub fn is_articulated(joint: usize) -> bool {
    joint >= 1 && joint < NUM_JOINTS && (joint - 1) % 4 < 3
}

/// Rotation row of an articulated joint.
pub fn rotation_row_of_joint(joint: usize) -> Option<usize> {
    is_articulated(joint).then(|| (joint - 1) / 4 * 3 + (joint - 1) % 4)
}

/// Scatters glove channels into rotation slots: per finger, abduction goes
/// to the base joint's z component, the three flexions to the x components
/// of the three articulated joints. Everything else stays zero, so the map
/// is linear.
pub fn glove_to_rotations(a: &GloveAngles) -> JointRotations {
    let mut theta = [[0.0; 3]; NUM_ARTICULATED];
    for f in 0..NUM_FINGERS {
        let ch = 4 * f;
        let row = 3 * f;
        theta[row][2] = a.0[ch]; // abduction
        theta[row][0] = a.0[ch + 1];
        theta[row + 1][0] = a.0[ch + 2];
        theta[row + 2][0] = a.0[ch + 3];
    }
    JointRotations(theta)
}

fn euler_zyx(r: &[f64; 3]) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), r[2])
        * Rotation3::from_axis_angle(&Vector3::y_axis(), r[1])
        * Rotation3::from_axis_angle(&Vector3::x_axis(), r[0])
}

/// Composes per-joint rotations down the tree; each child sits at its
/// parent plus the parent's accumulated frame applied to the rest offset.
/// The output is canonical by construction (root at origin, palm rigid).
pub fn forward_kinematics(theta: &JointRotations, skel: &HandSkeleton) -> JointSet {
    let mut frames = [Rotation3::identity(); NUM_JOINTS];
    let mut joints = [[0.0f64; 3]; NUM_JOINTS];
    for child in 1..NUM_JOINTS {
        let p = skel.parents[child] as usize;
        let offset = Vector3::from(skel.rest_dir(child)) * skel.bone_length(child);
        let world = frames[p] * offset;
        joints[child] = [
            joints[p][0] + world[0],
            joints[p][1] + world[1],
            joints[p][2] + world[2],
        ];
        frames[child] = match rotation_row_of_joint(child) {
            Some(row) => frames[p] * euler_zyx(&theta.0[row]),
            None => frames[p],
        };
    }
    JointSet { joints, canonical: true }
}

/// Rotation taking unit vector `a` onto unit vector `b`.
fn align_rotation(a: &Vector3<f64>, b: &Vector3<f64>) -> Rotation3<f64> {
    let cross = a.cross(b);
    let sin = cross.norm();
    let cos = a.dot(b);
    if sin < 1e-14 {
        if cos > 0.0 {
            return Rotation3::identity();
        }
        // antiparallel: rotate by pi about any axis orthogonal to a
        let helper = if a[0].abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let axis = Unit::new_normalize(a.cross(&helper));
        return Rotation3::from_axis_angle(&axis, std::f64::consts::PI);
    }
    Rotation3::from_axis_angle(&Unit::new_normalize(cross), sin.atan2(cos))
}

/// Similarity-transforms a detector pose into the reference frame: root
/// translated to the origin, root-to-middle-MCP rescaled to 1 and rotated
/// onto the skeleton's rest direction, then the (root, middle-MCP,
/// index-MCP) plane spun about that axis onto the rest-pose plane.
pub fn canonicalize(raw: &JointSet, skel: &HandSkeleton) -> Result<JointSet> {
    let q0 = Vector3::from(raw.joints[ROOT]);
    let v_mid = Vector3::from(raw.joints[MIDDLE_MCP]) - q0;
    let v_idx = Vector3::from(raw.joints[INDEX_MCP]) - q0;
    let s = v_mid.norm();
    let idx_norm = v_idx.norm();
    if s < 1e-15 || idx_norm < 1e-15 {
        return Err(Error::DegeneratePose(
            "anchor joints coincide (root, middle-MCP, index-MCP)".into(),
        ));
    }
    let normal = v_mid.cross(&v_idx);
    if normal.norm() < 1e-9 * s * idx_norm {
        return Err(Error::DegeneratePose(
            "anchor joints are collinear; pose plane is undefined".into(),
        ));
    }

    let mid_ref = Vector3::from(skel.rest_dir(MIDDLE_MCP));
    let r1 = align_rotation(&(v_mid / s), &mid_ref);
    let n_ref = skel.reference_normal()?;
    let n1 = r1 * normal.normalize();
    // both normals are orthogonal to mid_ref, so a spin about it aligns them
    let phi = mid_ref.dot(&n1.cross(&n_ref)).atan2(n1.dot(&n_ref));
    let r2 = Rotation3::from_axis_angle(&Unit::new_unchecked(mid_ref), phi);
    let rot = r2 * r1;

    let mut joints = [[0.0f64; 3]; NUM_JOINTS];
    for (out, q) in joints.iter_mut().zip(raw.joints.iter()) {
        let v = rot * ((Vector3::from(*q) - q0) / s);
        *out = [v[0], v[1], v[2]];
    }
    Ok(JointSet { joints, canonical: true })
}
