//! `pimforce infer`: run a checkpoint on fresh recordings.
//!
//! EMG comes from an 8-channel CSV. The pose source is either a glove
//! recording (20 flexion angles, posture recovered through forward
//! kinematics) or a detector output (21 joint positions as 63 columns or
//! a static JSON pose). Detector poses must declare their frame:
//! `--detector` runs canonicalization on raw camera-space positions,
//! `--canonical` asserts they are already root-centered and unit-scaled.
//! Output is one row per EMG window: contact probability and decoded
//! force for each of the nine regions.

use anyhow::{bail, Context, Result};
use clap::Args;
use pimforce_core::handkin::{
    canonicalize, default_skeleton, forward_kinematics, glove_to_rotations, GloveAngles,
    JointSet, NUM_GLOVE_CHANNELS, NUM_JOINTS,
};
use pimforce_core::io::load_checkpoint;
use pimforce_core::nn::{emg_batch, hand_batch, pressure_from_probs};
use pimforce_core::pressure::{NUM_REGIONS, REGION_NAMES};
use pimforce_core::semgproc::{frame_stream, stft, Spectrogram};
use pimforce_core::sync::TimedStream;
use pimforce_core::voxel::{scale_joints, voxelize, HeatmapVolume};
use pimforce_core::io::{read_stream_file, write_stream, write_stream_file};
use serde::Deserialize;
use std::path::PathBuf;

/// How far a pose may drift from root-centered unit scale before
/// `--canonical` refuses it.
const CANONICAL_TOL: f64 = 1e-6;

/// Full heatmap volumes are large; voxelize at most this many per batch.
const CHUNK: usize = 16;

#[derive(Args)]
pub struct InferArgs {
    /// Checkpoint file from `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// 8-channel EMG CSV.
    #[arg(long)]
    emg: PathBuf,
    /// Pose source: CSV stream (20 glove angles or 63 joint coordinates)
    /// or JSON static pose ({"angles": [...]} or {"joints": [[x,y,z], ...]}).
    #[arg(long)]
    pose: PathBuf,
    /// Pose positions are raw detector output; canonicalize them.
    #[arg(long, conflicts_with = "canonical")]
    detector: bool,
    /// Pose positions are already canonical; verify and use as-is.
    #[arg(long)]
    canonical: bool,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A pose signal resolved to joint rotations or raw positions per query time.
enum PoseSource {
    /// 20-angle glove stream.
    GloveStream(TimedStream),
    /// 63-coordinate position stream.
    JointStream(TimedStream),
    /// One pose held for the whole recording.
    StaticAngles([f64; NUM_GLOVE_CHANNELS]),
    StaticJoints([[f64; 3]; NUM_JOINTS]),
}

#[derive(Deserialize)]
struct StaticPoseFile {
    angles: Option<Vec<f64>>,
    joints: Option<Vec<[f64; 3]>>,
}

fn load_pose(path: &PathBuf) -> Result<PoseSource> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let parsed: StaticPoseFile =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        match (parsed.angles, parsed.joints) {
            (Some(a), None) => {
                if a.len() != NUM_GLOVE_CHANNELS {
                    bail!("{}: expected {NUM_GLOVE_CHANNELS} angles, got {}", path.display(), a.len());
                }
                let mut angles = [0.0; NUM_GLOVE_CHANNELS];
                angles.copy_from_slice(&a);
                Ok(PoseSource::StaticAngles(angles))
            }
            (None, Some(j)) => {
                if j.len() != NUM_JOINTS {
                    bail!("{}: expected {NUM_JOINTS} joints, got {}", path.display(), j.len());
                }
                let mut joints = [[0.0; 3]; NUM_JOINTS];
                joints.copy_from_slice(&j);
                Ok(PoseSource::StaticJoints(joints))
            }
            _ => bail!("{}: provide exactly one of \"angles\" or \"joints\"", path.display()),
        }
    } else {
        let (stream, _) = read_stream_file(path)?;
        match stream.arity() {
            NUM_GLOVE_CHANNELS => Ok(PoseSource::GloveStream(stream)),
            n if n == 3 * NUM_JOINTS => Ok(PoseSource::JointStream(stream)),
            other => bail!(
                "{}: pose stream must have {} angle or {} coordinate channels, got {}",
                path.display(),
                NUM_GLOVE_CHANNELS,
                3 * NUM_JOINTS,
                other
            ),
        }
    }
}

fn joints_from_flat(flat: &[f64]) -> [[f64; 3]; NUM_JOINTS] {
    let mut joints = [[0.0; 3]; NUM_JOINTS];
    for (j, chunk) in joints.iter_mut().zip(flat.chunks_exact(3)) {
        j.copy_from_slice(chunk);
    }
    joints
}

/// Turns detector positions into a canonical joint set according to the
/// declared frame flag.
fn resolve_joints(
    joints: [[f64; 3]; NUM_JOINTS],
    detector: bool,
    canonical: bool,
) -> Result<JointSet> {
    let skel = default_skeleton();
    if detector {
        return Ok(canonicalize(&JointSet::new(joints, false)?, skel)?);
    }
    if canonical {
        let set = JointSet::new(joints, true)?;
        if !set.looks_canonical(CANONICAL_TOL) {
            bail!(
                "pose is not canonical (root off origin or wrong scale); \
                 pass --detector to canonicalize raw positions"
            );
        }
        return Ok(set);
    }
    bail!("joint-position poses need --detector or --canonical to declare their frame");
}

pub fn run(args: InferArgs) -> Result<()> {
    let (mut model, meta) = load_checkpoint(&args.ckpt)?;
    let skel = default_skeleton();

    let (emg, _) = read_stream_file(&args.emg)?;
    let windows = frame_stream(&emg, meta.pipeline.stride)?;
    let pose = load_pose(&args.pose)?;

    if matches!(pose, PoseSource::GloveStream(_) | PoseSource::StaticAngles(_))
        && (args.detector || args.canonical)
    {
        bail!("--detector/--canonical apply to joint positions; glove angles are always canonicalized through forward kinematics");
    }

    // Pose range gates which EMG windows survive, mirroring training
    // alignment. Static poses cover everything.
    let (pose_lo, pose_hi) = match &pose {
        PoseSource::GloveStream(s) | PoseSource::JointStream(s) => {
            (s.first_time().unwrap_or(0.0), s.last_time().unwrap_or(0.0))
        }
        _ => (f64::NEG_INFINITY, f64::INFINITY),
    };
    let windows: Vec<_> =
        windows.into_iter().filter(|w| w.end_time >= pose_lo && w.end_time <= pose_hi).collect();
    if windows.is_empty() {
        bail!("no EMG windows overlap the pose recording");
    }

    let pool = meta.model.hand_input_pool;
    let mut times = Vec::with_capacity(windows.len());
    let mut rows = Vec::with_capacity(windows.len() * 2 * NUM_REGIONS);

    for chunk in windows.chunks(CHUNK) {
        let mut specs: Vec<Spectrogram> = Vec::with_capacity(chunk.len());
        let mut vols: Vec<HeatmapVolume> = Vec::with_capacity(chunk.len());
        for w in chunk {
            specs.push(stft(w, &meta.pipeline.stft)?);
            let anchor = w.end_time;
            let joints = match &pose {
                PoseSource::GloveStream(s) => {
                    let mut angles = [0.0; NUM_GLOVE_CHANNELS];
                    s.sample_linear(anchor, &mut angles)?;
                    let rot = glove_to_rotations(&GloveAngles::from_slice(&angles)?);
                    forward_kinematics(&rot, skel)
                }
                PoseSource::StaticAngles(angles) => {
                    let rot = glove_to_rotations(&GloveAngles::from_slice(angles)?);
                    forward_kinematics(&rot, skel)
                }
                PoseSource::JointStream(s) => {
                    let mut flat = [0.0; 3 * NUM_JOINTS];
                    s.sample_linear(anchor, &mut flat)?;
                    resolve_joints(joints_from_flat(&flat), args.detector, args.canonical)?
                }
                PoseSource::StaticJoints(joints) => {
                    resolve_joints(*joints, args.detector, args.canonical)?
                }
            };
            let grid = scale_joints(&joints, &meta.scaler)?;
            vols.push(voxelize(&grid, meta.pipeline.sigma)?);
        }
        let emg_t = emg_batch(&specs)?;
        let hand_t = hand_batch(&vols, pool)?;
        let probs = model.forward(&emg_t, &hand_t, false)?;
        for (i, w) in chunk.iter().enumerate() {
            let row = &probs.data()[i * NUM_REGIONS..(i + 1) * NUM_REGIONS];
            times.push(w.end_time);
            rows.extend_from_slice(row);
            rows.extend_from_slice(&pressure_from_probs(row));
        }
    }

    let out_stream = TimedStream::new(times, rows, 2 * NUM_REGIONS)?;
    let labels: Vec<String> = REGION_NAMES
        .iter()
        .map(|r| format!("prob_{r}"))
        .chain(REGION_NAMES.iter().map(|r| format!("force_{r}")))
        .collect();
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    match &args.out {
        Some(path) => {
            write_stream_file(path, &out_stream, &label_refs)?;
            println!("infer: wrote {} ({} frames)", path.display(), out_stream.len());
        }
        None => write_stream(std::io::stdout().lock(), &out_stream, &label_refs)?,
    }
    Ok(())
}
