//! Mini-batch training loop with a cached dataset.
//!
//! `TrainingSet` stores network inputs in single precision to keep large
//! sessions in memory; batches are widened back to f64 when they are fed to
//! the model. Label vectors stay in f64. Given the same dataset, configs,
//! and seed, `train` is bitwise reproducible.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::handkin::NUM_JOINTS;
use crate::pressure::{RegionLabels, RegionPressure, NUM_REGIONS};
use crate::semgproc::{Spectrogram, DEFAULT_BINS, SEMG_CHANNELS, STFT_FRAMES};
use crate::voxel::HeatmapVolume;

use super::loss::{joint_loss, joint_loss_grad};
use super::model::{emg_batch, hand_batch, ModelConfig, PiMForceModel};
use super::optim::{Adam, AdamConfig};
use super::tensor::Tensor;

pub const EMG_SAMPLE_LEN: usize = STFT_FRAMES * DEFAULT_BINS * SEMG_CHANNELS;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Batch normalization needs at least two samples per batch; a final
    /// chunk of one sample is dropped from the epoch.
    pub batch_size: usize,
    /// Weight of the force regression term. Exactly 0.0 skips that term
    /// entirely, leaving pure classification gradients.
    pub lambda: f64,
    /// Seeds both model initialization and epoch shuffling.
    pub seed: u64,
    pub shuffle: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            lambda: 1.0,
            seed: 7,
            shuffle: true,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub l_c: f64,
    pub l_r: f64,
}

/// In-memory dataset: network inputs in f32, labels in f64.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    emg: Vec<f32>,
    hand: Vec<f32>,
    labels_c: Vec<f64>,
    labels_p: Vec<f64>,
    grid: usize,
    pool: usize,
    n: usize,
}

impl TrainingSet {
    /// Empty set whose heatmaps will be average-pooled by `pool` per axis.
    pub fn new(pool: usize) -> Result<TrainingSet> {
        if pool == 0 || crate::voxel::GRID % pool != 0 {
            return Err(Error::InvalidInput(format!(
                "pool factor {pool} must divide the {} grid",
                crate::voxel::GRID
            )));
        }
        Ok(TrainingSet {
            grid: crate::voxel::GRID / pool,
            pool,
            ..TrainingSet::default()
        })
    }

    pub fn from_raw(
        pool: usize,
        emg: Vec<f32>,
        hand: Vec<f32>,
        labels_c: Vec<f64>,
        labels_p: Vec<f64>,
    ) -> Result<TrainingSet> {
        let mut set = TrainingSet::new(pool)?;
        let hand_len = set.hand_sample_len();
        if emg.len() % EMG_SAMPLE_LEN != 0 {
            return Err(Error::InvalidInput("EMG buffer is not a whole number of samples".into()));
        }
        let n = emg.len() / EMG_SAMPLE_LEN;
        if hand.len() != n * hand_len
            || labels_c.len() != n * NUM_REGIONS
            || labels_p.len() != n * NUM_REGIONS
        {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} samples in every buffer"),
                got: format!(
                    "hand {}, contact {}, force {}",
                    hand.len() / hand_len.max(1),
                    labels_c.len() / NUM_REGIONS,
                    labels_p.len() / NUM_REGIONS
                ),
            });
        }
        if labels_c.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput("contact labels must be 0 or 1".into()));
        }
        set.emg = emg;
        set.hand = hand;
        set.labels_c = labels_c;
        set.labels_p = labels_p;
        set.n = n;
        Ok(set)
    }

    pub fn hand_sample_len(&self) -> usize {
        self.grid * self.grid * self.grid * NUM_JOINTS
    }

    /// Append one aligned sample from the preprocessing pipeline.
    pub fn push_sample(
        &mut self,
        spec: &Spectrogram,
        vol: &HeatmapVolume,
        pressure: &RegionPressure,
        labels: &RegionLabels,
    ) -> Result<()> {
        let e = emg_batch(std::slice::from_ref(spec))?;
        let h = hand_batch(std::slice::from_ref(vol), self.pool)?;
        self.emg.extend(e.data().iter().map(|&v| v as f32));
        self.hand.extend(h.data().iter().map(|&v| v as f32));
        self.labels_c.extend(labels.c.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        self.labels_p.extend_from_slice(&pressure.p);
        self.n += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn pool(&self) -> usize {
        self.pool
    }

    /// Raw sample-major buffers, for serialization.
    pub fn emg_data(&self) -> &[f32] {
        &self.emg
    }

    pub fn hand_data(&self) -> &[f32] {
        &self.hand
    }

    pub fn contact_data(&self) -> &[f64] {
        &self.labels_c
    }

    pub fn force_data(&self) -> &[f64] {
        &self.labels_p
    }

    pub fn contact_row(&self, i: usize) -> &[f64] {
        &self.labels_c[i * NUM_REGIONS..(i + 1) * NUM_REGIONS]
    }

    pub fn force_row(&self, i: usize) -> &[f64] {
        &self.labels_p[i * NUM_REGIONS..(i + 1) * NUM_REGIONS]
    }

    /// Materialize the selected samples as f64 batch tensors:
    /// (emg, hand, contact, force).
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Tensor, Tensor, Tensor) {
        let b = idx.len();
        let hl = self.hand_sample_len();
        let g = self.grid;
        let mut emg = Tensor::zeros(&[b, STFT_FRAMES, DEFAULT_BINS, SEMG_CHANNELS]);
        let mut hand = Tensor::zeros(&[b, g, g, g, NUM_JOINTS]);
        let mut c = Tensor::zeros(&[b, NUM_REGIONS]);
        let mut p = Tensor::zeros(&[b, NUM_REGIONS]);
        for (row, &i) in idx.iter().enumerate() {
            assert!(i < self.n, "sample index {i} out of range");
            for (dst, src) in emg.data_mut()[row * EMG_SAMPLE_LEN..(row + 1) * EMG_SAMPLE_LEN]
                .iter_mut()
                .zip(&self.emg[i * EMG_SAMPLE_LEN..(i + 1) * EMG_SAMPLE_LEN])
            {
                *dst = *src as f64;
            }
            for (dst, src) in hand.data_mut()[row * hl..(row + 1) * hl]
                .iter_mut()
                .zip(&self.hand[i * hl..(i + 1) * hl])
            {
                *dst = *src as f64;
            }
            c.data_mut()[row * NUM_REGIONS..(row + 1) * NUM_REGIONS]
                .copy_from_slice(self.contact_row(i));
            p.data_mut()[row * NUM_REGIONS..(row + 1) * NUM_REGIONS]
                .copy_from_slice(self.force_row(i));
        }
        (emg, hand, c, p)
    }

    /// Split by index predicate; samples where `keep` is true land in the
    /// first set.
    pub fn partition(&self, keep: impl Fn(usize) -> bool) -> (TrainingSet, TrainingSet) {
        let mut a = TrainingSet::new(self.pool).unwrap();
        let mut b = TrainingSet::new(self.pool).unwrap();
        let hl = self.hand_sample_len();
        for i in 0..self.n {
            let dst = if keep(i) { &mut a } else { &mut b };
            dst.emg.extend_from_slice(&self.emg[i * EMG_SAMPLE_LEN..(i + 1) * EMG_SAMPLE_LEN]);
            dst.hand.extend_from_slice(&self.hand[i * hl..(i + 1) * hl]);
            dst.labels_c.extend_from_slice(self.contact_row(i));
            dst.labels_p.extend_from_slice(self.force_row(i));
            dst.n += 1;
        }
        (a, b)
    }
}

fn mean_over(history: &[(f64, f64, f64, usize)]) -> (f64, f64, f64) {
    let total: usize = history.iter().map(|h| h.3).sum();
    let inv = 1.0 / total as f64;
    (
        history.iter().map(|h| h.0 * h.3 as f64).sum::<f64>() * inv,
        history.iter().map(|h| h.1 * h.3 as f64).sum::<f64>() * inv,
        history.iter().map(|h| h.2 * h.3 as f64).sum::<f64>() * inv,
    )
}

/// Run the optimization loop on an existing model. Returns one stats row
/// per epoch (sample-weighted means over the epoch's batches).
pub fn train_existing(
    model: &mut PiMForceModel,
    data: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size < 2 {
        return Err(Error::InvalidInput("batch size must be at least 2".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::InvalidInput("epochs must be at least 1".into()));
    }
    if !(cfg.lambda.is_finite() && cfg.lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be finite and >= 0, got {}", cfg.lambda)));
    }
    if data.grid() != model.config().hand_grid() {
        return Err(Error::ShapeMismatch {
            expected: format!("hand grid {}", model.config().hand_grid()),
            got: format!("{}", data.grid()),
        });
    }
    if data.len() < 2 {
        return Err(Error::InvalidInput("training needs at least two samples".into()));
    }

    // distinct stream from the one that initialized the weights
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut per_batch = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (emg, hand, c, p) = data.batch(chunk);
            model.zero_grads();
            let probs = model.forward(&emg, &hand, true)?;
            let breakdown = joint_loss(&probs, &c, &p, cfg.lambda);
            let grad = joint_loss_grad(&probs, &c, &p, cfg.lambda);
            model.backward(&grad);
            adam.step(&mut |f| model.visit_params(f));
            per_batch.push((breakdown.total, breakdown.l_c, breakdown.l_r, chunk.len()));
        }
        let (loss, l_c, l_r) = mean_over(&per_batch);
        history.push(EpochStats { epoch, loss, l_c, l_r });
    }
    Ok(history)
}

/// Initialize a model from `cfg.seed` and train it.
pub fn train(
    model_cfg: &ModelConfig,
    data: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<(PiMForceModel, Vec<EpochStats>)> {
    let mut model = PiMForceModel::new(model_cfg, cfg.seed)?;
    let history = train_existing(&mut model, data, cfg)?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::UpsampleMode;

    fn micro_cfg() -> ModelConfig {
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

    /// Two strongly separated classes: class 1 has hot EMG and contact on
    /// region 0 at 10 N, class 0 is near-silent with no contact.
    fn toy_set(n: usize) -> TrainingSet {
        let hand_len = 8 * 8 * 8 * NUM_JOINTS;
        let mut emg = Vec::new();
        let mut hand = Vec::new();
        let mut c = Vec::new();
        let mut p = Vec::new();
        for i in 0..n {
            let on = i % 2 == 0;
            let level = if on { 1.0 } else { 0.05 };
            emg.extend(std::iter::repeat_n(level as f32, EMG_SAMPLE_LEN));
            // hand pose differs slightly between classes too
            let hv = if on { 0.8 } else { 0.2 };
            hand.extend(std::iter::repeat_n(hv as f32, hand_len));
            let mut crow = [0.0; NUM_REGIONS];
            let mut prow = [0.0; NUM_REGIONS];
            if on {
                crow[0] = 1.0;
                prow[0] = 10.0;
            }
            c.extend_from_slice(&crow);
            p.extend_from_slice(&prow);
        }
        TrainingSet::from_raw(6, emg, hand, c, p).unwrap()
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 20,
            batch_size: 4,
            lambda: 1.0,
            seed: 11,
            shuffle: true,
            adam: AdamConfig { lr: 5e-3, weight_decay: 0.0, ..AdamConfig::default() },
        }
    }

    #[test]
    fn loss_drops_on_separable_data() {
        let data = toy_set(16);
        let (_, history) = train(&micro_cfg(), &data, &quick_cfg()).unwrap();
        assert_eq!(history.len(), 20);
        let first = history.first().unwrap().loss;
        let last = history.last().unwrap().loss;
        assert!(last < first, "loss did not improve: {first} -> {last}");
        assert!(last < 0.5 * first, "loss barely moved: {first} -> {last}");
        assert!(history.iter().all(|h| h.loss.is_finite()));
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let data = toy_set(12);
        let cfg = TrainConfig { epochs: 3, ..quick_cfg() };
        let run = |seed: u64| {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let (mut model, history) = train(&micro_cfg(), &data, &cfg).unwrap();
            let mut params = Vec::new();
            model.visit_params(&mut |p| params.extend_from_slice(p.value.data()));
            (params, history)
        };
        let (pa, ha) = run(5);
        let (pb, hb) = run(5);
        assert_eq!(pa, pb);
        assert_eq!(ha, hb);
        let (pc, _) = run(6);
        assert_ne!(pa, pc);
    }

    #[test]
    fn lambda_zero_ignores_force_targets_entirely() {
        let data = toy_set(12);
        // same data with garbage force labels
        let mut scrambled = data.clone();
        for v in &mut scrambled.labels_p {
            *v = 17.3;
        }
        let cfg = TrainConfig { epochs: 2, lambda: 0.0, ..quick_cfg() };
        let run = |d: &TrainingSet| {
            let (mut model, history) = train(&micro_cfg(), d, &cfg).unwrap();
            let mut params = Vec::new();
            model.visit_params(&mut |p| params.extend_from_slice(p.value.data()));
            (params, history)
        };
        let (pa, ha) = run(&data);
        let (pb, hb) = run(&scrambled);
        assert_eq!(pa, pb, "lambda=0 must make force labels inert");
        assert_eq!(
            ha.iter().map(|h| h.loss).collect::<Vec<_>>(),
            hb.iter().map(|h| h.loss).collect::<Vec<_>>()
        );
        assert!(ha.iter().all(|h| h.l_r == 0.0));
    }

    #[test]
    fn config_errors_are_reported() {
        let data = toy_set(4);
        let ok = TrainConfig { epochs: 1, ..quick_cfg() };
        assert!(train(&micro_cfg(), &TrainingSet::new(6).unwrap(), &ok).is_err());
        assert!(train(&micro_cfg(), &data, &TrainConfig { batch_size: 1, ..ok.clone() }).is_err());
        assert!(train(&micro_cfg(), &data, &TrainConfig { epochs: 0, ..ok.clone() }).is_err());
        assert!(train(&micro_cfg(), &data, &TrainConfig { lambda: -0.5, ..ok.clone() }).is_err());
        // grid mismatch: dataset pooled to 12, model wants 8
        let mismatched = toy_set_with_pool(4);
        assert!(train(&micro_cfg(), &mismatched, &ok).is_err());
    }

    fn toy_set_with_pool(pool: usize) -> TrainingSet {
        let g = crate::voxel::GRID / pool;
        let hand_len = g * g * g * NUM_JOINTS;
        TrainingSet::from_raw(
            pool,
            vec![0.1; 4 * EMG_SAMPLE_LEN],
            vec![0.1; 4 * hand_len],
            vec![0.0; 4 * NUM_REGIONS],
            vec![0.0; 4 * NUM_REGIONS],
        )
        .unwrap()
    }

    #[test]
    fn from_raw_validates_buffers() {
        assert!(TrainingSet::from_raw(6, vec![0.0; EMG_SAMPLE_LEN + 1], vec![], vec![], vec![])
            .is_err());
        let hand_len = 8 * 8 * 8 * NUM_JOINTS;
        // contact labels must be binary
        assert!(TrainingSet::from_raw(
            6,
            vec![0.0; EMG_SAMPLE_LEN],
            vec![0.0; hand_len],
            vec![0.5; NUM_REGIONS],
            vec![0.0; NUM_REGIONS],
        )
        .is_err());
        assert!(TrainingSet::new(0).is_err());
        assert!(TrainingSet::new(5).is_err());
    }

    #[test]
    fn partition_splits_without_loss() {
        let data = toy_set(10);
        let (held, rest) = data.partition(|i| i % 3 == 0);
        assert_eq!(held.len(), 4);
        assert_eq!(rest.len(), 6);
        assert_eq!(held.contact_row(0), data.contact_row(0));
        assert_eq!(rest.contact_row(0), data.contact_row(1));
        let (e, h, _, p) = held.batch(&[1]);
        let (eo, ho, _, po) = data.batch(&[3]);
        assert_eq!(e.data(), eo.data());
        assert_eq!(h.data(), ho.data());
        assert_eq!(p.data(), po.data());
    }

    #[test]
    fn tail_batches_of_one_sample_are_dropped() {
        let data = toy_set(9);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            shuffle: false,
            ..quick_cfg()
        };
        // 9 = 4 + 4 + 1: the final singleton cannot pass batch norm and is
        // skipped rather than crashing
        let (_, history) = train(&micro_cfg(), &data, &cfg).unwrap();
        assert_eq!(history.len(), 1);
        assert!(history[0].loss.is_finite());
    }
}
