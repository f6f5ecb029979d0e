//! `pimforce synth`: generate a synthetic recording session.
//!
//! Output directory layout:
//!   emg.csv       8-channel surface EMG at the configured rate
//!   pose.csv      20 glove flexion angles
//!   pressure.csv  9 region pressures, already clipped and floored
//!   latents.json  effective config plus the hidden truth (posture
//!                 schedule, force envelope) that produced the streams

use anyhow::{Context, Result};
use clap::Args;
use pimforce_core::pressure::REGION_NAMES;
use pimforce_core::synthgen::{generate_session, SynthConfig};
use pimforce_core::io::write_stream_file;
use serde::Serialize;
use std::path::PathBuf;

use crate::config::{load_or_default, to_json_pretty};

#[derive(Args)]
pub struct SynthArgs {
    /// Session config JSON; missing fields use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generator seed (overrides config).
    #[arg(long)]
    seed: Option<u64>,
    /// Session length in seconds (overrides config).
    #[arg(long)]
    duration: Option<f64>,
    /// Comma-separated posture names or abbreviations (overrides config).
    #[arg(long, value_delimiter = ',')]
    postures: Option<Vec<String>>,
    /// Peak press force in newtons (overrides config).
    #[arg(long)]
    amplitude: Option<f64>,
    /// Directory to write the session into (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct SegmentEcho<'a> {
    name: &'a str,
    start: f64,
    end: f64,
}

#[derive(Serialize)]
struct LatentsEcho<'a> {
    config: &'a SynthConfig,
    segments: Vec<SegmentEcho<'a>>,
    envelope_pressure: &'a [f64],
}

pub fn run(args: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = load_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(d) = args.duration {
        cfg.duration_s = d;
    }
    if let Some(p) = args.postures {
        cfg.postures = p;
    }
    if let Some(a) = args.amplitude {
        cfg.amplitude_n = a;
    }

    let session = generate_session(&cfg)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let emg_labels: Vec<String> = (0..8).map(|i| format!("emg{i}")).collect();
    let pose_labels: Vec<String> = (0..20).map(|i| format!("angle{i}")).collect();
    fn as_strs(v: &[String]) -> Vec<&str> {
        v.iter().map(String::as_str).collect()
    }

    write_stream_file(&args.out.join("emg.csv"), &session.emg, &as_strs(&emg_labels))?;
    write_stream_file(&args.out.join("pose.csv"), &session.pose, &as_strs(&pose_labels))?;
    write_stream_file(&args.out.join("pressure.csv"), &session.pressure, &REGION_NAMES)?;

    let echo = LatentsEcho {
        config: &cfg,
        segments: session
            .latents
            .segments
            .iter()
            .map(|s| SegmentEcho { name: &s.name, start: s.start, end: s.end })
            .collect(),
        envelope_pressure: &session.latents.envelope_pressure,
    };
    std::fs::write(args.out.join("latents.json"), to_json_pretty(&echo)?)
        .with_context(|| format!("writing {}", args.out.join("latents.json").display()))?;

    println!(
        "synth: wrote {} ({} EMG samples, {} pose frames, {} pressure frames, {} segments)",
        args.out.display(),
        session.emg.len(),
        session.pose.len(),
        session.pressure.len(),
        session.latents.segments.len()
    );
    Ok(())
}
