//! `pimforce preprocess`: raw stream CSVs in, tensor dataset out.
//!
//! Expects `emg.csv`, `pose.csv`, `pressure.csv` in the input directory.
//! The pressure file may hold either the 9 aggregated region channels
//! (as `synth` writes) or raw 70-channel glove frames (65 taxel
//! conductances plus 5 fingertip FSRs); raw frames optionally pass
//! through a fitted calibration curve before aggregation. Region values
//! are clipped to 20 N and floored at 0.2 N either way.

use anyhow::{bail, Context, Result};
use clap::Args;
use pimforce_core::io::{build_dataset, sha256_hex, PipelineConfig};
use pimforce_core::pressure::{
    aggregate_regions, calibrate_frame, clip_floor, clip_floor_value, default_region_map,
    fit_calibration, labels, CalibrationCurve, FitFamily, RawPressureFrame, NUM_FSR,
    NUM_GLOVE_NODES, NUM_REGIONS,
};
use pimforce_core::io::read_stream_file;
use pimforce_core::sync::{assemble_dataset, FramingConfig, TimedStream};
use serde::Deserialize;
use std::path::{Path, PathBuf};

use crate::config::{load_or_default, to_json_pretty};

#[derive(Args)]
pub struct PreprocessArgs {
    /// Directory holding emg.csv, pose.csv, pressure.csv.
    #[arg(long = "in")]
    input: PathBuf,
    /// Directory to write the dataset into (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Pipeline config JSON; missing fields use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// EMG samples between window starts (overrides config).
    #[arg(long)]
    stride: Option<usize>,
    /// Heatmap Gaussian width in voxels (overrides config).
    #[arg(long)]
    sigma: Option<f64>,
    /// Materialize heatmap volumes on disk instead of voxelizing at load
    /// time (overrides config).
    #[arg(long, value_name = "BOOL")]
    store_heatmaps: Option<bool>,
    /// Pooling factor applied to stored heatmaps (overrides config).
    #[arg(long)]
    pool: Option<usize>,
    /// Latents JSON from `synth`; tags each sample with its posture name.
    #[arg(long)]
    latents: Option<PathBuf>,
    /// Conductance-to-force calibration samples CSV (columns
    /// conductance,force). Only valid with raw 70-channel pressure input.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Curve family for calibration fitting.
    #[arg(long, value_parser = ["linear", "quadratic"], default_value = "linear")]
    calibration_family: String,
}

#[derive(Deserialize)]
struct SegmentEcho {
    name: String,
    start: f64,
    end: f64,
}

#[derive(Deserialize)]
struct LatentsEcho {
    segments: Vec<SegmentEcho>,
}

fn posture_key(segments: &[SegmentEcho], t: f64) -> String {
    segments
        .iter()
        .find(|s| t >= s.start && t < s.end)
        .map(|s| s.name.clone())
        .unwrap_or_else(|| "unknown".to_string())
}

fn load_calibration(path: &Path, family: FitFamily) -> Result<CalibrationCurve> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 && line.chars().next().is_some_and(|c| c.is_alphabetic()) {
            continue; // header row
        }
        let mut parts = line.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            bail!("{}: line {}: expected two columns", path.display(), i + 1);
        };
        let g: f64 = a
            .trim()
            .parse()
            .with_context(|| format!("{}: line {}: bad conductance", path.display(), i + 1))?;
        let f: f64 = b
            .trim()
            .parse()
            .with_context(|| format!("{}: line {}: bad force", path.display(), i + 1))?;
        samples.push((g, f));
    }
    Ok(fit_calibration(&samples, family)?)
}

/// Reduces the pressure stream to the 9 region channels, whatever form it
/// arrived in.
fn regionize_pressure(
    stream: &TimedStream,
    curve: Option<&CalibrationCurve>,
) -> Result<TimedStream> {
    match stream.arity() {
        NUM_REGIONS => {
            if curve.is_some() {
                bail!(
                    "calibration requires raw {}-channel pressure input, got {} aggregated channels",
                    NUM_GLOVE_NODES + NUM_FSR,
                    NUM_REGIONS
                );
            }
            let data: Vec<f64> = stream.data().iter().map(|&v| clip_floor_value(v)).collect();
            Ok(TimedStream::new(stream.times().to_vec(), data, NUM_REGIONS)?)
        }
        raw if raw == NUM_GLOVE_NODES + NUM_FSR => {
            let map = default_region_map();
            let mut data = Vec::with_capacity(stream.len() * NUM_REGIONS);
            for i in 0..stream.len() {
                let row = stream.value(i);
                let mut nodes = [0.0; NUM_GLOVE_NODES];
                let mut fsr = [0.0; NUM_FSR];
                nodes.copy_from_slice(&row[..NUM_GLOVE_NODES]);
                fsr.copy_from_slice(&row[NUM_GLOVE_NODES..]);
                let mut frame = RawPressureFrame::new(stream.times()[i], nodes, fsr)?;
                if let Some(c) = curve {
                    frame = calibrate_frame(&frame, c)?;
                }
                let region = clip_floor(&aggregate_regions(&frame, map));
                data.extend_from_slice(&region.p);
            }
            Ok(TimedStream::new(stream.times().to_vec(), data, NUM_REGIONS)?)
        }
        other => bail!(
            "pressure stream must have {} region or {} raw channels, got {}",
            NUM_REGIONS,
            NUM_GLOVE_NODES + NUM_FSR,
            other
        ),
    }
}

pub fn run(args: PreprocessArgs) -> Result<()> {
    let mut pl: PipelineConfig = load_or_default(args.config.as_deref())?;
    if let Some(s) = args.stride {
        pl.stride = s;
    }
    if let Some(s) = args.sigma {
        pl.sigma = s;
    }
    if let Some(b) = args.store_heatmaps {
        pl.store_heatmaps = b;
    }
    if let Some(p) = args.pool {
        pl.hand_pool = p;
    }

    let family = match args.calibration_family.as_str() {
        "quadratic" => FitFamily::QuadraticOrigin,
        _ => FitFamily::LinearOrigin,
    };
    let curve = match &args.calibration {
        Some(p) => Some(load_calibration(p, family)?),
        None => None,
    };

    let (emg, _) = read_stream_file(&args.input.join("emg.csv"))?;
    let (pose, _) = read_stream_file(&args.input.join("pose.csv"))?;
    let (pressure_raw, _) = read_stream_file(&args.input.join("pressure.csv"))?;
    let pressure = regionize_pressure(&pressure_raw, curve.as_ref())?;

    let samples = assemble_dataset(&emg, &pose, &pressure, &FramingConfig { stride: pl.stride })?;

    let keys = match &args.latents {
        None => None,
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?;
            let echo: LatentsEcho = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", p.display()))?;
            Some(samples.iter().map(|s| posture_key(&echo.segments, s.anchor)).collect())
        }
    };

    // The manifest records a digest of the effective pipeline config so a
    // dataset can be traced back to the exact settings that built it.
    let config_json = to_json_pretty(&pl)?;
    let dataset = build_dataset(&samples, &pl, keys, sha256_hex(config_json.as_bytes()))?;
    dataset.save(&args.out)?;

    let contacts: usize = samples
        .iter()
        .map(|s| labels(&s.pressure).c.iter().filter(|&&b| b).count())
        .sum();
    println!("effective pipeline config:\n{config_json}");
    println!(
        "preprocess: wrote {} ({} samples, {} contact cells, heatmaps {})",
        args.out.display(),
        dataset.len(),
        contacts,
        if pl.store_heatmaps { "stored" } else { "on the fly" }
    );
    Ok(())
}
