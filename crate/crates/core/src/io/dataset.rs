//! On-disk dataset directory.
//!
//! ```text
//! <dir>/
//!   manifest.json   sample count, preprocessing settings, provenance hash
//!   emg.pimf        f32 [n, 8, 32, 64] spectrograms
//!   theta.pimf      f64 [n, 15, 3] joint rotations
//!   hand.pimf       f32 [n, 21, g, g, g] heatmaps, only when materialized
//!   contact.pimf    f64 [n, 9] of 0/1
//!   force.pimf      f64 [n, 9] newtons
//!   keys.json       optional: one group key per sample (posture names)
//! ```
//!
//! Rotations are always stored; heatmaps are optional because a full 48-grid
//! volume is 9 MB per sample. When they are absent, [`Dataset::to_training_set`]
//! voxelizes from the rotations, which reproduces the stored-heatmap route
//! bitwise. Loading cross-checks every tensor against the manifest, so a
//! mismatched or hand-edited directory fails loudly instead of training on
//! garbage.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::handkin::{
    default_skeleton, forward_kinematics, JointRotations, NUM_ARTICULATED, NUM_JOINTS,
};
use crate::nn::train::EMG_SAMPLE_LEN;
use crate::nn::TrainingSet;
use crate::pressure::NUM_REGIONS;
use crate::semgproc::{stft, StftConfig, DEFAULT_BINS, DEFAULT_FRAME_STRIDE, SEMG_CHANNELS, STFT_FRAMES};
use crate::sync::AlignedSample;
use crate::voxel::{fit_scaler, scale_joints, voxelize, ScalerStats, DEFAULT_SIGMA, GRID};

use super::tensorfile::{TensorData, TensorFile};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMG_FILE: &str = "emg.pimf";
pub const THETA_FILE: &str = "theta.pimf";
pub const HAND_FILE: &str = "hand.pimf";
pub const CONTACT_FILE: &str = "contact.pimf";
pub const FORCE_FILE: &str = "force.pimf";
pub const KEYS_FILE: &str = "keys.json";

pub const MANIFEST_VERSION: u32 = 1;

const THETA_LEN: usize = NUM_ARTICULATED * 3;

/// Settings that turn aligned samples into tensors. Echoed verbatim into the
/// dataset manifest and again into checkpoints trained from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub stft: StftConfig,
    /// EMG samples between consecutive window anchors.
    pub stride: usize,
    /// Gaussian width of the joint heatmaps, in voxels.
    pub sigma: f64,
    /// Materialize heatmap volumes into the dataset instead of voxelizing
    /// from rotations at load time.
    pub store_heatmaps: bool,
    /// Average-pool factor applied to stored heatmaps (1 keeps the full
    /// 48-voxel grid). Unused when heatmaps stay on the fly.
    pub hand_pool: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stft: StftConfig::default(),
            stride: DEFAULT_FRAME_STRIDE,
            sigma: DEFAULT_SIGMA,
            store_heatmaps: false,
            hand_pool: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidInput("window stride must be positive".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidInput(format!("sigma {} must be positive", self.sigma)));
        }
        if self.hand_pool == 0 || GRID % self.hand_pool != 0 {
            return Err(Error::InvalidInput(format!(
                "heatmap pool {} must divide the grid size {GRID}",
                self.hand_pool
            )));
        }
        self.stft.freq.bin_count()?;
        Ok(())
    }

    /// Stored heatmap grid side length.
    pub fn hand_grid(&self) -> usize {
        GRID / self.hand_pool
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub n_samples: usize,
    pub pipeline: PipelineConfig,
    /// Joint scaler fitted on this dataset's poses; inference must reuse it.
    pub scaler: ScalerStats,
    /// SHA-256 of the generating configuration text, hex encoded.
    pub source_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// A materialized dataset: manifest plus sample-major tensors in the on-disk
/// layout (channel-major within each sample).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub emg: Vec<f32>,
    pub theta: Vec<f64>,
    pub hand: Option<Vec<f32>>,
    pub contact: Vec<f64>,
    pub force: Vec<f64>,
    pub keys: Option<Vec<String>>,
}

/// Turns aligned samples into a dataset: STFT per window, forward kinematics
/// per pose, a scaler fitted over every pose in the set, and optionally
/// materialized heatmaps.
pub fn build_dataset(
    samples: &[AlignedSample],
    pipeline: &PipelineConfig,
    keys: Option<Vec<String>>,
    source_sha256: String,
) -> Result<Dataset> {
    pipeline.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("aligned sample set"));
    }
    if let Some(k) = &keys {
        if k.len() != samples.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} group keys", samples.len()),
                got: format!("{}", k.len()),
            });
        }
    }
    let n = samples.len();
    let mut emg = Vec::with_capacity(n * EMG_SAMPLE_LEN);
    let mut theta = Vec::with_capacity(n * THETA_LEN);
    let mut contact = Vec::with_capacity(n * NUM_REGIONS);
    let mut force = Vec::with_capacity(n * NUM_REGIONS);
    let skel = default_skeleton();
    let mut poses = Vec::with_capacity(n);
    for s in samples {
        let spec = stft(&s.window, &pipeline.stft)?;
        if !spec.is_standard_shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{DEFAULT_BINS}-bin spectrograms"),
                got: format!("{} bins from the configured frequency selection", spec.bins()),
            });
        }
        emg.extend(spec.data().iter().map(|&v| v as f32));
        theta.extend(s.rotations.as_flat());
        poses.push(forward_kinematics(&s.rotations, skel));
        contact.extend(s.labels.c.iter().map(|&b| f64::from(b)));
        force.extend_from_slice(&s.pressure.p);
    }
    let scaler = fit_scaler(poses.iter())?;
    let hand = if pipeline.store_heatmaps {
        let g = pipeline.hand_grid();
        let mut buf = Vec::with_capacity(n * NUM_JOINTS * g * g * g);
        for pose in &poses {
            let grid = scale_joints(pose, &scaler)?;
            let vol = voxelize(&grid, pipeline.sigma)?;
            let (_, pooled) = vol.pooled(pipeline.hand_pool)?;
            buf.extend(pooled.iter().map(|&v| v as f32));
        }
        Some(buf)
    } else {
        None
    };
    Ok(Dataset {
        manifest: DatasetManifest {
            version: MANIFEST_VERSION,
            n_samples: n,
            pipeline: pipeline.clone(),
            scaler,
            source_sha256,
        },
        emg,
        theta,
        hand,
        contact,
        force,
        keys,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.n_samples == 0
    }

    fn check(&self) -> Result<()> {
        let m = &self.manifest;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("manifest version {} unsupported", m.version)));
        }
        m.pipeline.validate()?;
        m.scaler.validate()?;
        let n = m.n_samples;
        if n == 0 {
            return Err(Error::Empty("dataset"));
        }
        let g = m.pipeline.hand_grid();
        let hand_ok = match &self.hand {
            Some(h) => m.pipeline.store_heatmaps && h.len() == n * NUM_JOINTS * g * g * g,
            None => !m.pipeline.store_heatmaps,
        };
        if self.emg.len() != n * EMG_SAMPLE_LEN
            || self.theta.len() != n * THETA_LEN
            || !hand_ok
            || self.contact.len() != n * NUM_REGIONS
            || self.force.len() != n * NUM_REGIONS
            || self.keys.as_ref().is_some_and(|k| k.len() != n)
        {
            return Err(Error::ShapeMismatch {
                expected: format!("tensors sized for {n} samples"),
                got: "inconsistent buffer lengths".into(),
            });
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.check()?;
        fs::create_dir_all(dir)?;
        let n = self.len();
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self.manifest)? + "\n",
        )?;
        TensorFile::new_f32(
            vec![n, SEMG_CHANNELS, STFT_FRAMES, DEFAULT_BINS],
            self.emg.clone(),
        )?
        .write(&dir.join(EMG_FILE))?;
        TensorFile::new_f64(vec![n, NUM_ARTICULATED, 3], self.theta.clone())?
            .write(&dir.join(THETA_FILE))?;
        if let Some(h) = &self.hand {
            let g = self.manifest.pipeline.hand_grid();
            TensorFile::new_f32(vec![n, NUM_JOINTS, g, g, g], h.clone())?
                .write(&dir.join(HAND_FILE))?;
        }
        TensorFile::new_f64(vec![n, NUM_REGIONS], self.contact.clone())?
            .write(&dir.join(CONTACT_FILE))?;
        TensorFile::new_f64(vec![n, NUM_REGIONS], self.force.clone())?
            .write(&dir.join(FORCE_FILE))?;
        if let Some(k) = &self.keys {
            fs::write(dir.join(KEYS_FILE), serde_json::to_string(k)? + "\n")?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest: DatasetManifest =
            serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("manifest version {} unsupported", manifest.version)));
        }
        manifest.pipeline.validate()?;
        manifest.scaler.validate()?;
        let n = manifest.n_samples;
        let g = manifest.pipeline.hand_grid();
        let emg = expect_f32(
            TensorFile::read(&dir.join(EMG_FILE))?,
            &[n, SEMG_CHANNELS, STFT_FRAMES, DEFAULT_BINS],
            "emg",
        )?;
        let theta =
            expect_f64(TensorFile::read(&dir.join(THETA_FILE))?, &[n, NUM_ARTICULATED, 3], "theta")?;
        let hand = if manifest.pipeline.store_heatmaps {
            Some(expect_f32(
                TensorFile::read(&dir.join(HAND_FILE))?,
                &[n, NUM_JOINTS, g, g, g],
                "hand",
            )?)
        } else {
            if dir.join(HAND_FILE).exists() {
                return Err(Error::Format(
                    "manifest says heatmaps are on the fly, but hand.pimf exists".into(),
                ));
            }
            None
        };
        let contact =
            expect_f64(TensorFile::read(&dir.join(CONTACT_FILE))?, &[n, NUM_REGIONS], "contact")?;
        let force =
            expect_f64(TensorFile::read(&dir.join(FORCE_FILE))?, &[n, NUM_REGIONS], "force")?;
        let keys_path = dir.join(KEYS_FILE);
        let keys = if keys_path.exists() {
            let k: Vec<String> = serde_json::from_str(&fs::read_to_string(&keys_path)?)?;
            Some(k)
        } else {
            None
        };
        let ds = Dataset { manifest, emg, theta, hand, contact, force, keys };
        ds.check()?;
        Ok(ds)
    }

    /// Converts to the channels-last training cache at the given pool factor.
    ///
    /// Stored heatmaps must already be at that pool; on-the-fly datasets
    /// voxelize from rotations here. Both routes produce bitwise-identical
    /// training sets for the same underlying samples.
    pub fn to_training_set(&self, pool: usize) -> Result<TrainingSet> {
        self.check()?;
        let n = self.len();
        let mut emg_cl = Vec::with_capacity(self.emg.len());
        for s in 0..n {
            let row = &self.emg[s * EMG_SAMPLE_LEN..(s + 1) * EMG_SAMPLE_LEN];
            for t in 0..STFT_FRAMES {
                for k in 0..DEFAULT_BINS {
                    for ch in 0..SEMG_CHANNELS {
                        emg_cl.push(row[(ch * STFT_FRAMES + t) * DEFAULT_BINS + k]);
                    }
                }
            }
        }
        let hand_cl = match &self.hand {
            Some(stored) => {
                if self.manifest.pipeline.hand_pool != pool {
                    return Err(Error::InvalidInput(format!(
                        "dataset stores heatmaps at pool {}, requested {pool}; rebuild without \
                         stored heatmaps to repool",
                        self.manifest.pipeline.hand_pool
                    )));
                }
                let g = self.manifest.pipeline.hand_grid();
                let vol_len = NUM_JOINTS * g * g * g;
                let mut out = Vec::with_capacity(stored.len());
                for s in 0..n {
                    let row = &stored[s * vol_len..(s + 1) * vol_len];
                    transpose_volume(row, g, &mut out);
                }
                out
            }
            None => {
                let skel = default_skeleton();
                let sigma = self.manifest.pipeline.sigma;
                let g = GRID / pool.max(1);
                let mut out = Vec::with_capacity(n * g * g * g * NUM_JOINTS);
                for s in 0..n {
                    let rot = JointRotations::from_flat(
                        &self.theta[s * THETA_LEN..(s + 1) * THETA_LEN],
                    )?;
                    let pose = forward_kinematics(&rot, skel);
                    let grid = scale_joints(&pose, &self.manifest.scaler)?;
                    let vol = voxelize(&grid, sigma)?;
                    let (gg, pooled) = vol.pooled(pool)?;
                    let narrowed: Vec<f32> = pooled.iter().map(|&v| v as f32).collect();
                    transpose_volume(&narrowed, gg, &mut out);
                }
                out
            }
        };
        TrainingSet::from_raw(pool, emg_cl, hand_cl, self.contact.clone(), self.force.clone())
    }
}

/// Channel-major [21][g][g][g] to channels-last [g][g][g][21].
fn transpose_volume(row: &[f32], g: usize, out: &mut Vec<f32>) {
    let voxels = g * g * g;
    for v in 0..voxels {
        for k in 0..NUM_JOINTS {
            out.push(row[k * voxels + v]);
        }
    }
}

fn expect_f32(t: TensorFile, dims: &[usize], what: &str) -> Result<Vec<f32>> {
    if t.dims != dims {
        return Err(Error::ShapeMismatch {
            expected: format!("{what} dims {dims:?}"),
            got: format!("{:?}", t.dims),
        });
    }
    match t.data {
        TensorData::F32(v) => Ok(v),
        TensorData::F64(_) => Err(Error::Format(format!("{what} must be f32"))),
    }
}

fn expect_f64(t: TensorFile, dims: &[usize], what: &str) -> Result<Vec<f64>> {
    if t.dims != dims {
        return Err(Error::ShapeMismatch {
            expected: format!("{what} dims {dims:?}"),
            got: format!("{:?}", t.dims),
        });
    }
    match t.data {
        TensorData::F64(v) => Ok(v),
        TensorData::F32(_) => Err(Error::Format(format!("{what} must be f64"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pressure::{labels, RegionPressure};
    use crate::sync::{assemble_dataset, FramingConfig};
    use crate::synthgen::{generate_session, SynthConfig};

    fn session_samples(duration_s: f64) -> Vec<AlignedSample> {
        let cfg = SynthConfig {
            duration_s,
            postures: vec!["Palm-Press".into(), "TI-Pinch".into()],
            ..SynthConfig::default()
        };
        let session = generate_session(&cfg).unwrap();
        assemble_dataset(
            &session.emg,
            &session.pose,
            &session.pressure,
            &FramingConfig::default(),
        )
        .unwrap()
    }

    fn pipeline(pool: usize, store: bool) -> PipelineConfig {
        PipelineConfig { store_heatmaps: store, hand_pool: pool, ..PipelineConfig::default() }
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn build_shapes_and_manifest() {
        let samples = session_samples(4.0);
        let ds = build_dataset(&samples, &pipeline(6, true), None, sha256_hex(b"{}")).unwrap();
        let n = samples.len();
        assert!(n > 10, "expected a few dozen windows, got {n}");
        assert_eq!(ds.len(), n);
        assert_eq!(ds.emg.len(), n * EMG_SAMPLE_LEN);
        assert_eq!(ds.theta.len(), n * THETA_LEN);
        assert_eq!(ds.hand.as_ref().unwrap().len(), n * NUM_JOINTS * 8 * 8 * 8);
        assert_eq!(ds.contact.len(), n * NUM_REGIONS);
        // scaler covers every pose: min strictly below max on every axis
        for a in 0..3 {
            assert!(ds.manifest.scaler.min[a] < ds.manifest.scaler.max[a]);
        }
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let samples = session_samples(3.0);
        let keys: Vec<String> = samples.iter().map(|_| "Palm-Press".to_string()).collect();
        let ds =
            build_dataset(&samples, &pipeline(6, true), Some(keys), sha256_hex(b"{}")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert!(back.emg == ds.emg, "emg tensors differ");
        assert!(back.theta == ds.theta, "theta tensors differ");
        assert!(back.hand == ds.hand, "hand tensors differ");
        assert!(back.contact == ds.contact, "contact tensors differ");
        assert!(back.force == ds.force, "force tensors differ");
        assert_eq!(back.keys, ds.keys);
    }

    #[test]
    fn stored_and_on_the_fly_training_sets_match_bitwise() {
        let samples = session_samples(3.0);
        let stored =
            build_dataset(&samples, &pipeline(6, true), None, sha256_hex(b"{}")).unwrap();
        let fly = build_dataset(&samples, &pipeline(1, false), None, sha256_hex(b"{}")).unwrap();
        let a = stored.to_training_set(6).unwrap();
        let b = fly.to_training_set(6).unwrap();
        assert_eq!(a.emg_data(), b.emg_data());
        assert_eq!(a.hand_data(), b.hand_data());
        assert_eq!(a.contact_data(), b.contact_data());
        assert_eq!(a.force_data(), b.force_data());
    }

    #[test]
    fn to_training_set_matches_the_incremental_route() {
        let samples = session_samples(3.0);
        let pl = pipeline(1, false);
        let ds = build_dataset(&samples, &pl, None, sha256_hex(b"{}")).unwrap();

        let mut direct = TrainingSet::new(6).unwrap();
        let skel = default_skeleton();
        for s in &samples {
            let spec = stft(&s.window, &pl.stft).unwrap();
            let pose = forward_kinematics(&s.rotations, skel);
            let grid = scale_joints(&pose, &ds.manifest.scaler).unwrap();
            let vol = voxelize(&grid, pl.sigma).unwrap();
            let pressure = RegionPressure::new_clipped(s.anchor, s.pressure.p).unwrap();
            direct.push_sample(&spec, &vol, &pressure, &labels(&pressure)).unwrap();
        }
        let via_dataset = ds.to_training_set(6).unwrap();
        assert_eq!(via_dataset.emg_data(), direct.emg_data());
        assert_eq!(via_dataset.hand_data(), direct.hand_data());
        assert_eq!(via_dataset.contact_data(), direct.contact_data());
        assert_eq!(via_dataset.force_data(), direct.force_data());
    }

    #[test]
    fn stored_pool_must_match_requested_pool() {
        let samples = session_samples(3.0);
        let ds = build_dataset(&samples, &pipeline(6, true), None, sha256_hex(b"{}")).unwrap();
        assert!(ds.to_training_set(4).is_err());
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let samples = session_samples(3.0);
        assert!(matches!(
            build_dataset(&[], &pipeline(1, false), None, String::new()),
            Err(Error::Empty(_))
        ));
        let wrong_keys = Some(vec!["a".to_string()]);
        assert!(build_dataset(&samples, &pipeline(1, false), wrong_keys, String::new()).is_err());
        let mut bad = pipeline(1, false);
        bad.stride = 0;
        assert!(build_dataset(&samples, &bad, None, String::new()).is_err());
        let mut narrow = pipeline(1, false);
        narrow.stft.freq = crate::semgproc::FreqSelect::FirstBins(32);
        assert!(build_dataset(&samples, &narrow, None, String::new()).is_err());
    }

    #[test]
    fn load_rejects_tampered_directories() {
        let samples = session_samples(3.0);
        let ds = build_dataset(&samples, &pipeline(6, true), None, sha256_hex(b"{}")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let n = ds.len();

        // shrink the force tensor
        let orig_force = fs::read(dir.path().join(FORCE_FILE)).unwrap();
        let smaller =
            TensorFile::new_f64(vec![n - 1, NUM_REGIONS], vec![0.0; (n - 1) * NUM_REGIONS])
                .unwrap();
        smaller.write(&dir.path().join(FORCE_FILE)).unwrap();
        assert!(Dataset::load(dir.path()).is_err());
        fs::write(dir.path().join(FORCE_FILE), orig_force).unwrap();

        // wrong dtype for the emg tensor
        let orig_emg = fs::read(dir.path().join(EMG_FILE)).unwrap();
        let wrong = TensorFile::new_f64(
            vec![n, SEMG_CHANNELS, STFT_FRAMES, DEFAULT_BINS],
            vec![0.0; n * EMG_SAMPLE_LEN],
        )
        .unwrap();
        wrong.write(&dir.path().join(EMG_FILE)).unwrap();
        assert!(Dataset::load(dir.path()).is_err());
        fs::write(dir.path().join(EMG_FILE), orig_emg).unwrap();
        assert!(Dataset::load(dir.path()).is_ok());

        // missing tensor
        fs::remove_file(dir.path().join(THETA_FILE)).unwrap();
        assert!(Dataset::load(dir.path()).is_err());
    }

    #[test]
    fn on_the_fly_manifest_rejects_stray_hand_file() {
        let samples = session_samples(3.0);
        let ds = build_dataset(&samples, &pipeline(1, false), None, sha256_hex(b"{}")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert!(!dir.path().join(HAND_FILE).exists());
        TensorFile::new_f32(vec![1], vec![0.0])
            .unwrap()
            .write(&dir.path().join(HAND_FILE))
            .unwrap();
        assert!(Dataset::load(dir.path()).is_err());
    }
}
