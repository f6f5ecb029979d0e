//! Joint contact-classification and force-regression objective.
//!
//! The model emits nine per-region probabilities c_hat in (0, 1). Force is
//! decoded from the same numbers: p_hat = 2 * P_MAX * relu(c_hat - 0.5), so
//! c_hat = 0.5 means contact with zero force and c_hat = 1 saturates at
//! P_MAX newtons. The total loss per sample is
//!   L = L_c + lambda * L_r
//! where L_c is the mean binary cross entropy over the nine regions and L_r
//! the mean squared force error over the nine regions. Batch losses are the
//! mean over samples.

use crate::pressure::{NUM_REGIONS, P_MAX};

use super::tensor::Tensor;

/// Probabilities are clamped into [CLAMP, 1 - CLAMP] inside the log terms;
/// outside the clamp the classification gradient is exactly zero.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_r: f64,
    pub lambda: f64,
    pub total: f64,
}

/// Decode per-region force (newtons) from contact probabilities.
pub fn pressure_from_probs(c_hat: &[f64]) -> Vec<f64> {
    c_hat.iter().map(|&c| 2.0 * P_MAX * (c - 0.5).max(0.0)).collect()
}

fn check_shapes(c_hat: &Tensor, c: &Tensor, p: &Tensor) -> (usize, usize) {
    let [b, r] = *c_hat.shape() else { panic!("loss wants [batch, regions] probabilities") };
    assert_eq!(r, NUM_REGIONS, "loss expects {NUM_REGIONS} regions");
    assert_eq!(c.shape(), c_hat.shape(), "label shape mismatch");
    assert_eq!(p.shape(), c_hat.shape(), "force target shape mismatch");
    (b, r)
}

/// Batch-mean joint loss. `c` holds 0/1 contact labels, `p` clipped and
/// floored force targets in newtons.
pub fn joint_loss(c_hat: &Tensor, c: &Tensor, p: &Tensor, lambda: f64) -> LossBreakdown {
    let (b, r) = check_shapes(c_hat, c, p);
    assert!(b > 0, "empty batch");
    let mut l_c = 0.0;
    let mut l_r = 0.0;
    for ((ch, cv), pv) in c_hat
        .data()
        .chunks(r)
        .zip(c.data().chunks(r))
        .zip(p.data().chunks(r))
    {
        for j in 0..r {
            let q = ch[j].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            l_c -= cv[j] * q.ln() + (1.0 - cv[j]) * (1.0 - q).ln();
            if lambda != 0.0 {
                let f = 2.0 * P_MAX * (ch[j] - 0.5).max(0.0);
                let d = f - pv[j];
                l_r += d * d;
            }
        }
    }
    let denom = (b * r) as f64;
    l_c /= denom;
    l_r /= denom;
    let total = if lambda == 0.0 { l_c } else { l_c + lambda * l_r };
    LossBreakdown { l_c, l_r, lambda, total }
}

/// Gradient of the batch-mean joint loss with respect to `c_hat`.
///
/// With lambda == 0 the regression term is skipped entirely, so the result
/// is bitwise identical to the gradient of the classification term alone.
pub fn joint_loss_grad(c_hat: &Tensor, c: &Tensor, p: &Tensor, lambda: f64) -> Tensor {
    let (b, r) = check_shapes(c_hat, c, p);
    assert!(b > 0, "empty batch");
    let denom = (b * r) as f64;
    let mut grad = Tensor::zeros(c_hat.shape());
    for ((grow, (ch, cv)), pv) in grad
        .data_mut()
        .chunks_mut(r)
        .zip(c_hat.data().chunks(r).zip(c.data().chunks(r)))
        .zip(p.data().chunks(r))
    {
        for j in 0..r {
            let mut g = 0.0;
            // classification term: d/dq of -(c ln q + (1-c) ln(1-q)),
            // zero where the clamp is active
            if ch[j] > PROB_CLAMP && ch[j] < 1.0 - PROB_CLAMP {
                g += (1.0 - cv[j]) / (1.0 - ch[j]) - cv[j] / ch[j];
            }
            if lambda != 0.0 && ch[j] > 0.5 {
                let f = 2.0 * P_MAX * (ch[j] - 0.5);
                g += lambda * 2.0 * (f - pv[j]) * 2.0 * P_MAX;
            }
            grow[j] = g / denom;
        }
    }
    grad
}
