//! Core library for a multimodal hand-pressure estimation pipeline.
//!
//! The pipeline turns three sensor streams (8-channel surface EMG at
//! 2000 Hz, 20-channel glove joint angles at 120 Hz, and glove/fingertip
//! pressure frames at 40 Hz) into supervised training samples and a learned
//! estimator of per-region hand pressure:
//!
//! * [`semgproc`] frames the EMG stream and computes STFT spectrograms.
//! * [`handkin`] converts glove angles to joint rotations, runs forward
//!   kinematics over a 21-joint skeleton, and canonicalizes external poses.
//! * [`voxel`] scales joints into a 48³ grid and renders Gaussian heatmaps.
//! * [`pressure`] calibrates, aggregates, clips, and labels pressure frames.
//! * [`sync`] aligns the three native-rate streams into anchored samples.
//! * [`nn`] is a self-contained f64 tensor/layer library with the fused
//!   EMG + pose network, its joint loss, Adam, and the training loop.
//! * [`eval`] implements the regression/classification metrics and
//!   per-region / per-posture breakdowns.
//! * [`synthgen`] generates deterministic synthetic sessions end to end.
//! * [`io`] holds the binary tensor container, dataset directory layout,
//!   and checkpoint archive.

pub mod error;
pub mod eval;
pub mod handkin;
pub mod io;
pub mod nn;
pub mod pressure;
pub mod semgproc;
pub mod sync;
pub mod synthgen;
pub mod voxel;

pub use error::{Error, Result};
pub use handkin::{GloveAngles, HandSkeleton, JointRotations, JointSet};
pub use nn::{ModelConfig, PiMForceModel, TrainConfig, TrainingSet};
pub use pressure::{RegionLabels, RegionMap, RegionPressure};
pub use semgproc::{SemgWindow, Spectrogram, StftConfig};
pub use sync::{AlignedSample, FramingConfig, TimedStream};
pub use synthgen::{SynthConfig, SynthSession};
pub use voxel::{GridJoints, HeatmapVolume, ScalerStats};
