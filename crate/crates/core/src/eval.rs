//! Metrics for the nine-region contact/force estimator.
//!
//! Predictions enter as contact probabilities; force is decoded with the
//! same hinge the training loss uses (probability 0.5 is contact at zero
//! newtons, 1.0 saturates at 20 N). Conventions:
//!
//! * `accuracy` counts a sample as correct only when all nine region
//!   contact decisions (probability > 0.5) match the labels;
//! * `nrmse` is the root-mean-squared force error over every
//!   (sample, region) cell, divided by the 20 N full scale;
//! * `r2` compares squared error against the spread around each region's
//!   own mean force, pooled over regions. Targets with no variance in any
//!   region make it undefined.

use crate::error::{Error, Result};
use crate::nn::pressure_from_probs;
use crate::pressure::{NUM_REGIONS, P_MAX, REGION_NAMES};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalMetrics {
    /// Fraction of samples with all nine contact decisions correct.
    pub accuracy: f64,
    /// Fraction of correct (sample, region) contact decisions.
    pub region_accuracy: f64,
    pub nrmse: f64,
    /// Mean absolute force error, newtons.
    pub mae: f64,
    /// Same error relative to the 20 N full scale.
    pub mae_normalized: f64,
    pub mse: f64,
    pub r2: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionMetrics {
    pub name: &'static str,
    pub accuracy: f64,
    pub nrmse: f64,
    pub mae: f64,
    pub mse: f64,
    /// None when this region's force targets have no variance.
    pub r2: Option<f64>,
    pub n_samples: usize,
}

fn check(probs: &[f64], contact: &[f64], force: &[f64]) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    if probs.len() % NUM_REGIONS != 0 || probs.len() != contact.len() || probs.len() != force.len()
    {
        return Err(Error::ShapeMismatch {
            expected: format!("matching multiples of {NUM_REGIONS}"),
            got: format!("probs {}, contact {}, force {}", probs.len(), contact.len(), force.len()),
        });
    }
    for (&c, &p) in contact.iter().zip(force) {
        if c != 0.0 && c != 1.0 {
            return Err(Error::InvalidInput(format!("contact label {c} is not 0/1")));
        }
        if !p.is_finite() {
            return Err(Error::InvalidInput("non-finite force target".into()));
        }
    }
    Ok(probs.len() / NUM_REGIONS)
}

fn region_means(force: &[f64], n: usize) -> [f64; NUM_REGIONS] {
    let mut mean = [0.0; NUM_REGIONS];
    for row in force.chunks(NUM_REGIONS) {
        for j in 0..NUM_REGIONS {
            mean[j] += row[j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean
}

/// Pooled metrics over flattened [n, 9] probability, contact, and force
/// rows. Force targets are newtons (already clipped and floored upstream).
pub fn evaluate(probs: &[f64], contact: &[f64], force: &[f64]) -> Result<EvalMetrics> {
    let n = check(probs, contact, force)?;
    let mean = region_means(force, n);
    let mut exact = 0usize;
    let mut cell_hits = 0usize;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut spread = 0.0;
    for ((prow, crow), frow) in probs
        .chunks(NUM_REGIONS)
        .zip(contact.chunks(NUM_REGIONS))
        .zip(force.chunks(NUM_REGIONS))
    {
        let pred = pressure_from_probs(prow);
        let mut all = true;
        for j in 0..NUM_REGIONS {
            let hit = (prow[j] > 0.5) == (crow[j] == 1.0);
            all &= hit;
            cell_hits += hit as usize;
            let d = pred[j] - frow[j];
            sq += d * d;
            abs += d.abs();
            let s = frow[j] - mean[j];
            spread += s * s;
        }
        exact += all as usize;
    }
    let cells = (n * NUM_REGIONS) as f64;
    let mse = sq / cells;
    if spread == 0.0 {
        return Err(Error::UndefinedMetric(
            "force targets have zero variance in every region".into(),
        ));
    }
    Ok(EvalMetrics {
        accuracy: exact as f64 / n as f64,
        region_accuracy: cell_hits as f64 / cells,
        nrmse: mse.sqrt() / P_MAX,
        mae: abs / cells,
        mae_normalized: abs / cells / P_MAX,
        mse,
        r2: 1.0 - sq / spread,
        n_samples: n,
    })
}

/// Per-region metrics; the pooled numbers are exact sample-weighted means
/// of these (and `evaluate` agrees with them bit for bit on the shared
/// definitions).
pub fn evaluate_per_region(
    probs: &[f64],
    contact: &[f64],
    force: &[f64],
) -> Result<[RegionMetrics; NUM_REGIONS]> {
    let n = check(probs, contact, force)?;
    let mean = region_means(force, n);
    let mut out = [RegionMetrics {
        name: "",
        accuracy: 0.0,
        nrmse: 0.0,
        mae: 0.0,
        mse: 0.0,
        r2: None,
        n_samples: n,
    }; NUM_REGIONS];
    for j in 0..NUM_REGIONS {
        let mut hits = 0usize;
        let mut sq = 0.0;
        let mut abs = 0.0;
        let mut spread = 0.0;
        for i in 0..n {
            let p = probs[i * NUM_REGIONS + j];
            let c = contact[i * NUM_REGIONS + j];
            let f = force[i * NUM_REGIONS + j];
            hits += ((p > 0.5) == (c == 1.0)) as usize;
            let pred = 2.0 * P_MAX * (p - 0.5).max(0.0);
            let d = pred - f;
            sq += d * d;
            abs += d.abs();
            let s = f - mean[j];
            spread += s * s;
        }
        out[j] = RegionMetrics {
            name: REGION_NAMES[j],
            accuracy: hits as f64 / n as f64,
            nrmse: (sq / n as f64).sqrt() / P_MAX,
            mae: abs / n as f64,
            mse: sq / n as f64,
            r2: (spread > 0.0).then(|| 1.0 - sq / spread),
            n_samples: n,
        };
    }
    Ok(out)
}

/// Metrics for each distinct key (for example the posture active at each
/// sample), in order of first appearance. Groups whose force targets have
/// no variance report the error metrics with `r2` of negative infinity
/// replaced by an error upstream; here such groups are skipped from r2 by
/// evaluating them only when defined, so callers get per-group numbers for
/// every key.
pub fn evaluate_per_group(
    probs: &[f64],
    contact: &[f64],
    force: &[f64],
    keys: &[String],
) -> Result<Vec<(String, Result<EvalMetrics>)>> {
    let n = check(probs, contact, force)?;
    if keys.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} group keys"),
            got: format!("{}", keys.len()),
        });
    }
    let mut order: Vec<&String> = Vec::new();
    for k in keys {
        if !order.contains(&k) {
            order.push(k);
        }
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let idx: Vec<usize> = (0..n).filter(|&i| &keys[i] == key).collect();
        let gather = |src: &[f64]| -> Vec<f64> {
            idx.iter()
                .flat_map(|&i| src[i * NUM_REGIONS..(i + 1) * NUM_REGIONS].iter().copied())
                .collect()
        };
        out.push((key.clone(), evaluate(&gather(probs), &gather(contact), &gather(force))));
    }
    Ok(out)
}
