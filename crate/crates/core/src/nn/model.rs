//! Two-branch contact and force estimator.
//!
//! * Muscle branch: spectrogram [B, 32, 64, 8] through a conv encoder
//!   (pool by 2 per stage), a mirrored conv decoder (upsample by 2 per
//!   stage), an average-pool condenser, and a fully connected projection to
//!   the shared feature width.
//! * Hand branch: joint heatmap volume [B, g, g, g, 21] through a 3-D
//!   residual network (7x7x7 stem, four stages of basic blocks) with global
//!   average pooling and a fully connected projection.
//! * Fusion head: the concatenated features pass through two fully
//!   connected + batch norm + relu stages and a final fully connected layer
//!   with a sigmoid, giving nine per-region contact probabilities.
//!
//! Construction from a seed is deterministic: layers draw their weights
//! from one ChaCha20 stream in a fixed order.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::handkin::NUM_JOINTS;
use crate::pressure::NUM_REGIONS;
use crate::semgproc::{Spectrogram, DEFAULT_BINS, SEMG_CHANNELS, STFT_FRAMES};
use crate::voxel::{HeatmapVolume, GRID};

use super::layers::{
    AvgPool2d, BatchNorm, Conv2d, Conv3d, GlobalAvgPool3d, Linear, MaxPool2d, Relu, Sigmoid,
    Upsample2d,
};
pub use super::layers::UpsampleMode;
use super::tensor::{Param, Tensor};

/// Architecture hyperparameters. `full()` is the deployment-size network;
/// `desk()` is a small variant for quick experiments on modest hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Output channels of each encoder stage on the muscle branch.
    pub emg_encoder: Vec<usize>,
    /// Output channels of each decoder stage; same stage count as the encoder.
    pub emg_decoder: Vec<usize>,
    /// Average-pool factor applied to the decoder output before flattening.
    pub emg_condense_pool: usize,
    pub upsample: UpsampleMode,
    /// Channels of the four residual stages on the hand branch.
    pub resnet_channels: [usize; 4],
    /// Basic blocks per residual stage.
    pub resnet_blocks: [usize; 4],
    /// Width of each branch's output feature.
    pub feature_dim: usize,
    /// Width of the fusion head's hidden layers.
    pub fusion_width: usize,
    /// Output regions; the pressure pipeline fixes this at nine.
    pub regions: usize,
    /// Parameter-free average pooling applied to the heatmap volume before
    /// the network; 1 feeds the native 48-voxel grid.
    pub hand_input_pool: usize,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig::full()
    }
}

impl ModelConfig {
    pub fn full() -> ModelConfig {
        ModelConfig {
            emg_encoder: vec![32, 128, 256],
            emg_decoder: vec![128, 64, 32],
            emg_condense_pool: 8,
            upsample: UpsampleMode::Nearest,
            resnet_channels: [64, 128, 256, 512],
            resnet_blocks: [3, 4, 6, 3],
            feature_dim: 512,
            fusion_width: 256,
            regions: NUM_REGIONS,
            hand_input_pool: 1,
        }
    }

    /// Small preset: same topology, narrow layers, hand grid pooled 48 -> 16.
    pub fn desk() -> ModelConfig {
        ModelConfig {
            emg_encoder: vec![8, 16, 32],
            emg_decoder: vec![16, 8, 4],
            emg_condense_pool: 8,
            upsample: UpsampleMode::Nearest,
            resnet_channels: [8, 16, 32, 64],
            resnet_blocks: [3, 4, 6, 3],
            feature_dim: 64,
            fusion_width: 32,
            regions: NUM_REGIONS,
            hand_input_pool: 3,
        }
    }

    /// Side length of the voxel grid the hand branch consumes.
    pub fn hand_grid(&self) -> usize {
        GRID / self.hand_input_pool
    }

    /// Flattened width between the muscle branch condenser and its
    /// fully connected projection.
    pub fn emg_flatten(&self) -> usize {
        let p = self.emg_condense_pool;
        (STFT_FRAMES / p) * (DEFAULT_BINS / p) * self.emg_decoder.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInput(msg));
        if self.regions != NUM_REGIONS {
            return fail(format!("regions must be {NUM_REGIONS}, got {}", self.regions));
        }
        if self.emg_encoder.is_empty() || self.emg_encoder.len() != self.emg_decoder.len() {
            return fail(format!(
                "encoder/decoder stage counts must match and be nonzero, got {} and {}",
                self.emg_encoder.len(),
                self.emg_decoder.len()
            ));
        }
        let halvings = 1usize << self.emg_encoder.len();
        if STFT_FRAMES % halvings != 0 || DEFAULT_BINS % halvings != 0 {
            return fail(format!(
                "{} encoder stages need {halvings} to divide the {STFT_FRAMES}x{DEFAULT_BINS} input",
                self.emg_encoder.len()
            ));
        }
        let p = self.emg_condense_pool;
        if p == 0 || STFT_FRAMES % p != 0 || DEFAULT_BINS % p != 0 {
            return fail(format!("condense pool {p} must divide {STFT_FRAMES} and {DEFAULT_BINS}"));
        }
        if self.hand_input_pool == 0 || GRID % self.hand_input_pool != 0 {
            return fail(format!(
                "hand input pool {} must divide the {GRID}-voxel grid",
                self.hand_input_pool
            ));
        }
        let widths = self
            .emg_encoder
            .iter()
            .chain(&self.emg_decoder)
            .chain(&self.resnet_channels)
            .chain([&self.feature_dim, &self.fusion_width]);
        for &w in widths {
            if w == 0 {
                return fail("layer widths must be nonzero".into());
            }
        }
        if self.resnet_blocks.iter().any(|&b| b == 0) {
            return fail("each residual stage needs at least one block".into());
        }
        Ok(())
    }
}

fn add_into(acc: &mut Tensor, other: &Tensor) {
    debug_assert_eq!(acc.shape(), other.shape());
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}

// ---------------------------------------------------------------------------
// Muscle branch.

#[derive(Debug, Clone)]
struct EncStage {
    conv: Conv2d,
    bn: BatchNorm,
    relu: Relu,
    pool: MaxPool2d,
}

#[derive(Debug, Clone)]
struct DecStage {
    conv: Conv2d,
    bn: BatchNorm,
    relu: Relu,
    up: Upsample2d,
}

#[derive(Debug, Clone)]
pub struct EmgNet {
    enc: Vec<EncStage>,
    dec: Vec<DecStage>,
    condense: AvgPool2d,
    fc: Linear,
    condensed_shape: Option<Vec<usize>>,
}

impl EmgNet {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha20Rng) -> EmgNet {
        let mut enc = Vec::new();
        let mut c_in = SEMG_CHANNELS;
        for (i, &c_out) in cfg.emg_encoder.iter().enumerate() {
            enc.push(EncStage {
                conv: Conv2d::new(&format!("emg.enc{i}.conv.w"), (3, 3), c_in, c_out, 1, 1, rng),
                bn: BatchNorm::new(&format!("emg.enc{i}.bn"), c_out),
                relu: Relu::new(),
                pool: MaxPool2d::new(2),
            });
            c_in = c_out;
        }
        let mut dec = Vec::new();
        for (i, &c_out) in cfg.emg_decoder.iter().enumerate() {
            dec.push(DecStage {
                conv: Conv2d::new(&format!("emg.dec{i}.conv.w"), (3, 3), c_in, c_out, 1, 1, rng),
                bn: BatchNorm::new(&format!("emg.dec{i}.bn"), c_out),
                relu: Relu::new(),
                up: Upsample2d::new(cfg.upsample),
            });
            c_in = c_out;
        }
        EmgNet {
            enc,
            dec,
            condense: AvgPool2d::new(cfg.emg_condense_pool),
            fc: Linear::new("emg.fc", cfg.emg_flatten(), cfg.feature_dim, rng),
            condensed_shape: None,
        }
    }

    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut h = x.clone();
        for st in &mut self.enc {
            h = st.conv.forward(&h, train);
            h = st.bn.forward(&h, train);
            h = st.relu.forward(&h, train);
            h = st.pool.forward(&h, train);
        }
        for st in &mut self.dec {
            h = st.conv.forward(&h, train);
            h = st.bn.forward(&h, train);
            h = st.relu.forward(&h, train);
            h = st.up.forward(&h, train);
        }
        let h = self.condense.forward(&h, train);
        let [b, oh, ow, c] = *h.shape() else { unreachable!() };
        if train {
            self.condensed_shape = Some(h.shape().to_vec());
        }
        let flat = Tensor::from_vec(&[b, oh * ow * c], h.into_data()).unwrap();
        self.fc.forward(&flat, train)
    }

    fn backward(&mut self, gout: &Tensor) -> Tensor {
        let g = self.fc.backward(gout);
        let shape = self.condensed_shape.take().expect("EmgNet backward without forward");
        let g = Tensor::from_vec(&shape, g.into_data()).unwrap();
        let mut g = self.condense.backward(&g);
        for st in self.dec.iter_mut().rev() {
            g = st.up.backward(&g);
            g = st.relu.backward(&g);
            g = st.bn.backward(&g);
            g = st.conv.backward(&g);
        }
        for st in self.enc.iter_mut().rev() {
            g = st.pool.backward(&g);
            g = st.relu.backward(&g);
            g = st.bn.backward(&g);
            g = st.conv.backward(&g);
        }
        g
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for st in &mut self.enc {
            st.conv.visit_params(f);
            st.bn.visit_params(f);
        }
        for st in &mut self.dec {
            st.conv.visit_params(f);
            st.bn.visit_params(f);
        }
        self.fc.visit_params(f);
    }

    fn visit_bns(&mut self, f: &mut dyn FnMut(&mut BatchNorm)) {
        for st in &mut self.enc {
            f(&mut st.bn);
        }
        for st in &mut self.dec {
            f(&mut st.bn);
        }
    }
}

// ---------------------------------------------------------------------------
// Hand branch.

#[derive(Debug, Clone)]
pub struct BasicBlock3d {
    conv1: Conv3d,
    bn1: BatchNorm,
    relu1: Relu,
    conv2: Conv3d,
    bn2: BatchNorm,
    down: Option<(Conv3d, BatchNorm)>,
    relu_out: Relu,
    skip_cache: Option<Tensor>,
}

impl BasicBlock3d {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut ChaCha20Rng,
    ) -> BasicBlock3d {
        let down = if stride != 1 || c_in != c_out {
            Some((
                Conv3d::new(&format!("{name}.down.conv.w"), 1, c_in, c_out, stride, 0, rng),
                BatchNorm::new(&format!("{name}.down.bn"), c_out),
            ))
        } else {
            None
        };
        BasicBlock3d {
            conv1: Conv3d::new(&format!("{name}.conv1.w"), 3, c_in, c_out, stride, 1, rng),
            bn1: BatchNorm::new(&format!("{name}.bn1"), c_out),
            relu1: Relu::new(),
            conv2: Conv3d::new(&format!("{name}.conv2.w"), 3, c_out, c_out, 1, 1, rng),
            bn2: BatchNorm::new(&format!("{name}.bn2"), c_out),
            down,
            relu_out: Relu::new(),
            skip_cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut h = self.conv1.forward(x, train);
        h = self.bn1.forward(&h, train);
        h = self.relu1.forward(&h, train);
        h = self.conv2.forward(&h, train);
        h = self.bn2.forward(&h, train);
        let skip = match &mut self.down {
            Some((conv, bn)) => {
                let s = conv.forward(x, train);
                bn.forward(&s, train)
            }
            None => {
                if train {
                    self.skip_cache = Some(Tensor::zeros(x.shape()));
                }
                x.clone()
            }
        };
        add_into(&mut h, &skip);
        self.relu_out.forward(&h, train)
    }

    pub fn backward(&mut self, gout: &Tensor) -> Tensor {
        let g = self.relu_out.backward(gout);
        let mut g_main = self.bn2.backward(&g);
        g_main = self.conv2.backward(&g_main);
        g_main = self.relu1.backward(&g_main);
        g_main = self.bn1.backward(&g_main);
        let mut dx = self.conv1.backward(&g_main);
        let g_skip = match &mut self.down {
            Some((conv, bn)) => {
                let t = bn.backward(&g);
                conv.backward(&t)
            }
            None => {
                self.skip_cache = None;
                g
            }
        };
        add_into(&mut dx, &g_skip);
        dx
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
        if let Some((conv, bn)) = &mut self.down {
            conv.visit_params(f);
            bn.visit_params(f);
        }
    }

    fn visit_bns(&mut self, f: &mut dyn FnMut(&mut BatchNorm)) {
        f(&mut self.bn1);
        f(&mut self.bn2);
        if let Some((_, bn)) = &mut self.down {
            f(bn);
        }
    }
}

#[derive(Debug, Clone)]
pub struct HandNet {
    stem_conv: Conv3d,
    stem_bn: BatchNorm,
    stem_relu: Relu,
    stages: Vec<Vec<BasicBlock3d>>,
    gap: GlobalAvgPool3d,
    fc: Linear,
}

impl HandNet {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha20Rng) -> HandNet {
        let ch = cfg.resnet_channels;
        let mut stages = Vec::new();
        let mut c_in = ch[0];
        for (s, (&width, &blocks)) in ch.iter().zip(&cfg.resnet_blocks).enumerate() {
            let mut stage = Vec::new();
            for b in 0..blocks {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                stage.push(BasicBlock3d::new(
                    &format!("hand.s{s}b{b}"),
                    c_in,
                    width,
                    stride,
                    rng,
                ));
                c_in = width;
            }
            stages.push(stage);
        }
        HandNet {
            stem_conv: Conv3d::new("hand.stem.conv.w", 7, NUM_JOINTS, ch[0], 2, 3, rng),
            stem_bn: BatchNorm::new("hand.stem.bn", ch[0]),
            stem_relu: Relu::new(),
            stages,
            gap: GlobalAvgPool3d::new(),
            fc: Linear::new("hand.fc", ch[3], cfg.feature_dim, rng),
        }
    }

    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut h = self.stem_conv.forward(x, train);
        h = self.stem_bn.forward(&h, train);
        h = self.stem_relu.forward(&h, train);
        for stage in &mut self.stages {
            for block in stage {
                h = block.forward(&h, train);
            }
        }
        let h = self.gap.forward(&h, train);
        self.fc.forward(&h, train)
    }

    fn backward(&mut self, gout: &Tensor) -> Tensor {
        let g = self.fc.backward(gout);
        let mut g = self.gap.backward(&g);
        for stage in self.stages.iter_mut().rev() {
            for block in stage.iter_mut().rev() {
                g = block.backward(&g);
            }
        }
        g = self.stem_relu.backward(&g);
        g = self.stem_bn.backward(&g);
        self.stem_conv.backward(&g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stem_conv.visit_params(f);
        self.stem_bn.visit_params(f);
        for stage in &mut self.stages {
            for block in stage {
                block.visit_params(f);
            }
        }
        self.fc.visit_params(f);
    }

    fn visit_bns(&mut self, f: &mut dyn FnMut(&mut BatchNorm)) {
        f(&mut self.stem_bn);
        for stage in &mut self.stages {
            for block in stage {
                block.visit_bns(f);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Fusion head.

#[derive(Debug, Clone)]
pub struct FusionHead {
    fc1: Linear,
    bn1: BatchNorm,
    relu1: Relu,
    fc2: Linear,
    bn2: BatchNorm,
    relu2: Relu,
    fc3: Linear,
    sig: Sigmoid,
}

impl FusionHead {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha20Rng) -> FusionHead {
        let w = cfg.fusion_width;
        FusionHead {
            fc1: Linear::new("fusion.fc1", 2 * cfg.feature_dim, w, rng),
            bn1: BatchNorm::new("fusion.bn1", w),
            relu1: Relu::new(),
            fc2: Linear::new("fusion.fc2", w, w, rng),
            bn2: BatchNorm::new("fusion.bn2", w),
            relu2: Relu::new(),
            fc3: Linear::new("fusion.fc3", w, cfg.regions, rng),
            sig: Sigmoid::new(),
        }
    }

    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut h = self.fc1.forward(x, train);
        h = self.bn1.forward(&h, train);
        h = self.relu1.forward(&h, train);
        h = self.fc2.forward(&h, train);
        h = self.bn2.forward(&h, train);
        h = self.relu2.forward(&h, train);
        h = self.fc3.forward(&h, train);
        self.sig.forward(&h, train)
    }

    fn backward(&mut self, gout: &Tensor) -> Tensor {
        let mut g = self.sig.backward(gout);
        g = self.fc3.backward(&g);
        g = self.relu2.backward(&g);
        g = self.bn2.backward(&g);
        g = self.fc2.backward(&g);
        g = self.relu1.backward(&g);
        g = self.bn1.backward(&g);
        self.fc1.backward(&g)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc1.visit_params(f);
        self.bn1.visit_params(f);
        self.fc2.visit_params(f);
        self.bn2.visit_params(f);
        self.fc3.visit_params(f);
    }

    fn visit_bns(&mut self, f: &mut dyn FnMut(&mut BatchNorm)) {
        f(&mut self.bn1);
        f(&mut self.bn2);
    }
}

// ---------------------------------------------------------------------------
// Whole model.

#[derive(Debug, Clone)]
pub struct PiMForceModel {
    cfg: ModelConfig,
    pub emg: EmgNet,
    pub hand: HandNet,
    pub fusion: FusionHead,
}

impl PiMForceModel {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<PiMForceModel> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Ok(PiMForceModel {
            cfg: cfg.clone(),
            emg: EmgNet::new(cfg, &mut rng),
            hand: HandNet::new(cfg, &mut rng),
            fusion: FusionHead::new(cfg, &mut rng),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn check_inputs(&self, emg_x: &Tensor, hand_x: &Tensor) -> Result<usize> {
        let g = self.cfg.hand_grid();
        let want_emg = |b: usize| vec![b, STFT_FRAMES, DEFAULT_BINS, SEMG_CHANNELS];
        let want_hand = |b: usize| vec![b, g, g, g, NUM_JOINTS];
        let mismatch = |what: &str, want: &[usize], got: &[usize]| Error::ShapeMismatch {
            expected: format!("{what} {want:?}"),
            got: format!("{got:?}"),
        };
        let &[b, ..] = emg_x.shape() else {
            return Err(mismatch("spectrogram batch", &want_emg(1), emg_x.shape()));
        };
        if b == 0 || emg_x.shape() != want_emg(b).as_slice() {
            return Err(mismatch("spectrogram batch", &want_emg(b.max(1)), emg_x.shape()));
        }
        if hand_x.shape() != want_hand(b).as_slice() {
            return Err(mismatch("heatmap batch", &want_hand(b), hand_x.shape()));
        }
        Ok(b)
    }

    /// Contact probabilities [B, 9] from a spectrogram batch and a heatmap
    /// batch. In train mode every layer caches what backward needs.
    pub fn forward(&mut self, emg_x: &Tensor, hand_x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_inputs(emg_x, hand_x)?;
        let fe = self.emg.forward(emg_x, train);
        let fh = self.hand.forward(hand_x, train);
        let fused = concat_features(&fe, &fh);
        Ok(self.fusion.forward(&fused, train))
    }

    /// Branch outputs, exposed so callers can inspect or cache features.
    pub fn emg_forward(&mut self, emg_x: &Tensor, train: bool) -> Tensor {
        self.emg.forward(emg_x, train)
    }

    pub fn hand_forward(&mut self, hand_x: &Tensor, train: bool) -> Tensor {
        self.hand.forward(hand_x, train)
    }

    pub fn fusion_forward(&mut self, fe: &Tensor, fh: &Tensor, train: bool) -> Tensor {
        self.fusion.forward(&concat_features(fe, fh), train)
    }

    /// Backpropagate from the probability gradient; accumulates parameter
    /// gradients and returns the input gradients (spectrogram, heatmap).
    pub fn backward(&mut self, grad_probs: &Tensor) -> (Tensor, Tensor) {
        let g = self.fusion.backward(grad_probs);
        let (ge, gh) = split_features(&g, self.cfg.feature_dim);
        (self.emg.backward(&ge), self.hand.backward(&gh))
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.emg.visit_params(f);
        self.hand.visit_params(f);
        self.fusion.visit_params(f);
    }

    /// Full mutable state for checkpointing: every parameter tensor plus
    /// every batch norm running statistic, keyed by stable dotted names.
    pub fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_params(&mut |p| {
            let name = p.name.clone();
            f(&name, p.value.data_mut());
        });
        let mut g = |bn: &mut BatchNorm| bn.visit_stats(f);
        self.emg.visit_bns(&mut g);
        self.hand.visit_bns(&mut g);
        self.fusion.visit_bns(&mut g);
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.numel());
        n
    }

    pub fn emg_param_count(&mut self) -> usize {
        let mut n = 0;
        self.emg.visit_params(&mut |p| n += p.value.numel());
        n
    }

    pub fn hand_param_count(&mut self) -> usize {
        let mut n = 0;
        self.hand.visit_params(&mut |p| n += p.value.numel());
        n
    }

    pub fn fusion_param_count(&mut self) -> usize {
        let mut n = 0;
        self.fusion.visit_params(&mut |p| n += p.value.numel());
        n
    }
}

fn concat_features(a: &Tensor, b: &Tensor) -> Tensor {
    let [ba, fa] = *a.shape() else { panic!("feature tensors are 2-D") };
    let [bb, fb] = *b.shape() else { panic!("feature tensors are 2-D") };
    assert_eq!(ba, bb, "feature batch mismatch");
    let mut out = Tensor::zeros(&[ba, fa + fb]);
    for s in 0..ba {
        out.data_mut()[s * (fa + fb)..s * (fa + fb) + fa]
            .copy_from_slice(&a.data()[s * fa..(s + 1) * fa]);
        out.data_mut()[s * (fa + fb) + fa..(s + 1) * (fa + fb)]
            .copy_from_slice(&b.data()[s * fb..(s + 1) * fb]);
    }
    out
}

fn split_features(g: &Tensor, fa: usize) -> (Tensor, Tensor) {
    let [b, f] = *g.shape() else { panic!("feature gradient is 2-D") };
    let fb = f - fa;
    let mut ga = Tensor::zeros(&[b, fa]);
    let mut gb = Tensor::zeros(&[b, fb]);
    for s in 0..b {
        ga.data_mut()[s * fa..(s + 1) * fa].copy_from_slice(&g.data()[s * f..s * f + fa]);
        gb.data_mut()[s * fb..(s + 1) * fb].copy_from_slice(&g.data()[s * f + fa..(s + 1) * f]);
    }
    (ga, gb)
}

/// Spectrogram batch as a [B, 32, 64, 8] channels-last tensor.
pub fn emg_batch(specs: &[Spectrogram]) -> Result<Tensor> {
    if specs.is_empty() {
        return Err(Error::Empty("spectrogram batch"));
    }
    let b = specs.len();
    let mut out = Tensor::zeros(&[b, STFT_FRAMES, DEFAULT_BINS, SEMG_CHANNELS]);
    for (s, spec) in specs.iter().enumerate() {
        if !spec.is_standard_shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{DEFAULT_BINS} frequency bins"),
                got: format!("{}", spec.bins()),
            });
        }
        let base = s * STFT_FRAMES * DEFAULT_BINS * SEMG_CHANNELS;
        let data = out.data_mut();
        for ch in 0..SEMG_CHANNELS {
            for t in 0..STFT_FRAMES {
                for k in 0..DEFAULT_BINS {
                    data[base + (t * DEFAULT_BINS + k) * SEMG_CHANNELS + ch] =
                        spec.value(ch, t, k);
                }
            }
        }
    }
    Ok(out)
}

/// Heatmap batch as a [B, g, g, g, 21] channels-last tensor, average-pooled
/// by `pool` per axis (1 keeps the native grid).
pub fn hand_batch(vols: &[HeatmapVolume], pool: usize) -> Result<Tensor> {
    if vols.is_empty() {
        return Err(Error::Empty("heatmap batch"));
    }
    let b = vols.len();
    let g = {
        let (g, _) = vols[0].pooled(pool)?;
        g
    };
    let mut out = Tensor::zeros(&[b, g, g, g, NUM_JOINTS]);
    for (s, vol) in vols.iter().enumerate() {
        let (_, pooled) = vol.pooled(pool)?;
        let base = s * g * g * g * NUM_JOINTS;
        let data = out.data_mut();
        for k in 0..NUM_JOINTS {
            for x in 0..g {
                for y in 0..g {
                    for z in 0..g {
                        data[base
                            + (((x * g + y) * g + z) * NUM_JOINTS)
                            + k] = pooled[((k * g + x) * g + y) * g + z];
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{dot, random_probe, random_tensor};
    use rand::Rng;

    /// Tiny architecture for forward/backward tests; same topology as the
    /// presets, two encoder stages instead of three.
    fn micro() -> ModelConfig {
        ModelConfig {
            emg_encoder: vec![4, 8],
            emg_decoder: vec![8, 4],
            emg_condense_pool: 8,
            upsample: UpsampleMode::Nearest,
            resnet_channels: [4, 8, 8, 16],
            resnet_blocks: [1, 1, 1, 1],
            feature_dim: 16,
            fusion_width: 8,
            regions: NUM_REGIONS,
            hand_input_pool: 6,
        }
    }

    fn micro_inputs(b: usize, seed: u64) -> (Tensor, Tensor) {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let emg = random_tensor(&[b, STFT_FRAMES, DEFAULT_BINS, SEMG_CHANNELS], 0.0, 2.0, &mut r);
        let hand = random_tensor(&[b, 8, 8, 8, NUM_JOINTS], 0.0, 1.0, &mut r);
        (emg, hand)
    }

    #[test]
    fn parameter_counts_are_frozen() {
        let mut m = PiMForceModel::new(&ModelConfig::full(), 0).unwrap();
        assert_eq!(m.emg_param_count(), 1_247_232);
        assert_eq!(m.hand_param_count(), 64_171_328);
        assert_eq!(m.fusion_param_count(), 331_529);
        assert_eq!(m.param_count(), 65_750_089);
    }

    #[test]
    fn parameter_counts_sit_near_published_sizes() {
        let mut m = PiMForceModel::new(&ModelConfig::full(), 0).unwrap();
        let close = |got: usize, anchor: f64| (got as f64 - anchor).abs() <= 0.05 * anchor;
        assert!(close(m.emg_param_count(), 1.26e6));
        assert!(close(m.hand_param_count(), 64.11e6));
        assert!(close(m.param_count(), 66.17e6));
    }

    #[test]
    fn desk_preset_is_small_and_valid() {
        let cfg = ModelConfig::desk();
        cfg.validate().unwrap();
        assert_eq!(cfg.hand_grid(), 16);
        assert_eq!(cfg.emg_flatten(), 128);
        let mut m = PiMForceModel::new(&cfg, 0).unwrap();
        let n = m.param_count();
        assert!(n < 2_000_000, "desk preset has {n} params");
        // same seed, same weights
        let mut m2 = PiMForceModel::new(&cfg, 0).unwrap();
        let mut a = Vec::new();
        m.visit_params(&mut |p| a.extend_from_slice(p.value.data()));
        let mut b = Vec::new();
        m2.visit_params(&mut |p| b.extend_from_slice(p.value.data()));
        assert_eq!(a, b);
        // different seed, different weights
        let mut m3 = PiMForceModel::new(&cfg, 1).unwrap();
        let mut c = Vec::new();
        m3.visit_params(&mut |p| c.extend_from_slice(p.value.data()));
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let ok = micro();
        ok.validate().unwrap();
        let cases: Vec<Box<dyn Fn(&mut ModelConfig)>> = vec![
            Box::new(|c| c.regions = 8),
            Box::new(|c| c.emg_encoder = vec![]),
            Box::new(|c| c.emg_decoder = vec![8]),
            Box::new(|c| c.emg_condense_pool = 7),
            Box::new(|c| c.hand_input_pool = 5),
            Box::new(|c| c.feature_dim = 0),
            Box::new(|c| c.resnet_blocks = [1, 0, 1, 1]),
            Box::new(|c| c.emg_encoder = vec![2; 6]),
        ];
        for mutate in cases {
            let mut bad = micro();
            mutate(&mut bad);
            assert!(bad.validate().is_err(), "expected rejection: {bad:?}");
        }
        assert!(PiMForceModel::new(&{ let mut c = micro(); c.regions = 3; c }, 0).is_err());
    }

    #[test]
    fn forward_emits_probabilities_with_the_right_shape() {
        let mut m = PiMForceModel::new(&micro(), 42).unwrap();
        let (emg, hand) = micro_inputs(3, 1);
        for train in [false, true] {
            let y = m.forward(&emg, &hand, train).unwrap();
            assert_eq!(y.shape(), &[3, NUM_REGIONS]);
            assert!(y.data().iter().all(|&v| v.is_finite() && v > 0.0 && v < 1.0));
        }
        // shape guards
        let bad_emg = Tensor::zeros(&[3, STFT_FRAMES, 32, SEMG_CHANNELS]);
        assert!(m.forward(&bad_emg, &hand, false).is_err());
        let bad_hand = Tensor::zeros(&[2, 8, 8, 8, NUM_JOINTS]);
        assert!(m.forward(&emg, &bad_hand, false).is_err());
    }

    #[test]
    fn forward_is_the_composition_of_the_public_stages() {
        let mut m = PiMForceModel::new(&micro(), 7).unwrap();
        let (emg, hand) = micro_inputs(2, 2);
        let whole = m.forward(&emg, &hand, false).unwrap();
        let fe = m.emg_forward(&emg, false);
        let fh = m.hand_forward(&hand, false);
        let staged = m.fusion_forward(&fe, &fh, false);
        assert_eq!(whole.data(), staged.data());
    }

    #[test]
    fn zeroed_fusion_head_is_maximally_uncertain() {
        let mut m = PiMForceModel::new(&micro(), 3).unwrap();
        m.fusion.visit_params(&mut |p| p.value.fill(0.0));
        let (emg, hand) = micro_inputs(2, 3);
        let y = m.forward(&emg, &hand, false).unwrap();
        for &v in y.data() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn residual_block_with_zeroed_mains_passes_positive_input_through() {
        let mut r = ChaCha20Rng::seed_from_u64(5);
        let mut block = BasicBlock3d::new("b", 4, 4, 1, &mut r);
        block.conv1.weight.value.fill(0.0);
        block.conv2.weight.value.fill(0.0);
        let x = random_tensor(&[2, 3, 3, 3, 4], 0.1, 1.0, &mut r);
        let y = block.forward(&x, false);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn residual_block_gradients_flow_through_both_paths() {
        let mut r = ChaCha20Rng::seed_from_u64(11);
        // identity-skip block: input gradient must include the skip term
        let mut block = BasicBlock3d::new("b", 3, 3, 1, &mut r);
        let x = random_tensor(&[2, 3, 3, 3, 3], -1.0, 1.0, &mut r);
        let y = block.forward(&x, true);
        let probe = random_probe(y.numel(), &mut r);
        let dx = block.backward(&Tensor::from_vec(y.shape(), probe.clone()).unwrap());
        // directional finite difference through the whole block
        let dir = random_probe(x.numel(), &mut r);
        let h = 1e-5;
        let eval = |offset: f64| {
            let mut b2 = block.clone();
            let mut xp = x.clone();
            for (v, d) in xp.data_mut().iter_mut().zip(&dir) {
                *v += offset * d;
            }
            dot(b2.forward(&xp, true).data(), &probe)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let analytic = dot(dx.data(), &dir);
        assert!(
            (analytic - fd).abs() <= 2e-4 * analytic.abs().max(1.0),
            "block dx: analytic {analytic} vs fd {fd}"
        );
    }

    #[test]
    fn whole_model_gradient_matches_directional_finite_differences() {
        let cfg = micro();
        let model = PiMForceModel::new(&cfg, 13).unwrap();
        let (emg, hand) = micro_inputs(2, 17);
        let mut r = ChaCha20Rng::seed_from_u64(19);
        let probe = random_probe(2 * NUM_REGIONS, &mut r);
        let probe_t = Tensor::from_vec(&[2, NUM_REGIONS], probe.clone()).unwrap();

        let mut live = model.clone();
        let y = live.forward(&emg, &hand, true).unwrap();
        assert_eq!(y.numel(), probe.len());
        let (d_emg, d_hand) = live.backward(&probe_t);

        let h = 1e-5;
        let check = |analytic: f64, fd: f64, what: &str| {
            assert!(
                (analytic - fd).abs() <= 2e-4 * analytic.abs().max(1.0),
                "{what}: analytic {analytic} vs fd {fd}"
            );
        };

        // input directions
        for (input, grad, what) in
            [(&emg, &d_emg, "emg input"), (&hand, &d_hand, "hand input")]
        {
            let dir = random_probe(input.numel(), &mut r);
            let eval = |off: f64| {
                let mut m2 = model.clone();
                let mut e2 = emg.clone();
                let mut h2 = hand.clone();
                let target = if what == "emg input" { &mut e2 } else { &mut h2 };
                for (v, d) in target.data_mut().iter_mut().zip(&dir) {
                    *v += off * d;
                }
                dot(m2.forward(&e2, &h2, true).unwrap().data(), &probe)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            check(dot(grad.data(), &dir), fd, what);
        }

        // one random direction per parameter tensor
        let mut names = Vec::new();
        live.visit_params(&mut |p| names.push((p.name.clone(), p.value.numel())));
        for (idx, (name, numel)) in names.iter().enumerate() {
            let dir = random_probe(*numel, &mut r);
            let mut analytic = 0.0;
            let mut k = 0;
            live.visit_params(&mut |p| {
                if k == idx {
                    analytic = dot(p.grad.data(), &dir);
                }
                k += 1;
            });
            let eval = |off: f64| {
                let mut m2 = model.clone();
                let mut k = 0;
                m2.visit_params(&mut |p| {
                    if k == idx {
                        for (v, d) in p.value.data_mut().iter_mut().zip(&dir) {
                            *v += off * d;
                        }
                    }
                    k += 1;
                });
                dot(m2.forward(&emg, &hand, true).unwrap().data(), &probe)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            check(analytic, fd, name);
        }
    }

    #[test]
    fn state_visitor_covers_params_and_running_stats_with_unique_names() {
        let mut m = PiMForceModel::new(&micro(), 23).unwrap();
        let mut names = Vec::new();
        let mut total = 0usize;
        m.visit_state(&mut |name, buf| {
            names.push(name.to_string());
            total += buf.len();
        });
        let param_total = m.param_count();
        assert!(total > param_total, "state must include running stats");
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len(), "state names must be unique");
        assert!(names.iter().any(|n| n.ends_with(".running_mean")));
        assert!(names.iter().any(|n| n == "fusion.fc3.b"));
    }

    #[test]
    fn batch_helpers_transpose_pipeline_outputs() {
        use crate::semgproc::{stft, SemgWindow, StftConfig, WINDOW_SAMPLES};
        use crate::voxel::{voxelize, GridJoints};

        let mut r = ChaCha20Rng::seed_from_u64(29);
        let samples: Vec<f64> =
            (0..SEMG_CHANNELS * WINDOW_SAMPLES).map(|_| r.random_range(-1.0..1.0)).collect();
        let w = SemgWindow::new(0.0, 0.6235, samples).unwrap();
        let spec = stft(&w, &StftConfig::default()).unwrap();
        let x = emg_batch(std::slice::from_ref(&spec)).unwrap();
        assert_eq!(x.shape(), &[1, STFT_FRAMES, DEFAULT_BINS, SEMG_CHANNELS]);
        for ch in 0..SEMG_CHANNELS {
            for t in 0..STFT_FRAMES {
                for k in 0..DEFAULT_BINS {
                    assert_eq!(
                        x.data()[(t * DEFAULT_BINS + k) * SEMG_CHANNELS + ch],
                        spec.value(ch, t, k)
                    );
                }
            }
        }

        let mut joints = [[0.0; 3]; NUM_JOINTS];
        for (i, j) in joints.iter_mut().enumerate() {
            *j = [12.0 + i as f64, 20.0, 30.0 - 0.5 * i as f64];
        }
        let flat: Vec<f64> = joints.iter().flatten().copied().collect();
        let gj = GridJoints::from_flat(&flat, false).unwrap();
        let vol = voxelize(&gj, 1.0).unwrap();
        let x = hand_batch(std::slice::from_ref(&vol), 1).unwrap();
        assert_eq!(x.shape(), &[1, GRID, GRID, GRID, NUM_JOINTS]);
        // spot check the transpose against the channel-major source
        for k in [0usize, 7, 20] {
            for (xi, yi, zi) in [(0usize, 0usize, 0usize), (13, 20, 30), (47, 47, 47)] {
                assert_eq!(
                    x.data()[(((xi * GRID + yi) * GRID + zi) * NUM_JOINTS) + k],
                    vol.value(k, xi, yi, zi)
                );
            }
        }
        let pooled = hand_batch(std::slice::from_ref(&vol), 3).unwrap();
        assert_eq!(pooled.shape(), &[1, 16, 16, 16, NUM_JOINTS]);
        assert!(hand_batch(std::slice::from_ref(&vol), 5).is_err());
        assert!(emg_batch(&[]).is_err());
    }
}
