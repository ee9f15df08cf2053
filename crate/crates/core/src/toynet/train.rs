//! Serial SGD training and evaluation on the synthetic clips.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{derive_seed, LabelSet, SyntheticDataset, CLIP_FRAMES};
use super::{fuse, segment_inputs, transfer_init, FusionConfig, Modality, ToyNet, ToyNetConfig, VlaSpec};
use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::sampler::{plan_segments, SampleMode};
use crate::tensor::Tensor;
use crate::vla::{ShiftConfig, TemporalPool};

const TAG_INIT: u64 = 11;
const TAG_ORDER: u64 = 12;
const TAG_SAMPLE: u64 = 13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub modality: Modality,
    pub labels: LabelSet,
    pub segments: usize,
    pub span: usize,
    /// Attach the channel-shift aggregation head.
    pub vla: bool,
    pub shift: ShiftConfig,
    pub pool: TemporalPool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub train_clips: usize,
    pub val_clips: usize,
}

impl TrainConfig {
    fn base(modality: Modality, labels: LabelSet, segments: usize, span: usize, vla: bool) -> Self {
        Self {
            modality,
            labels,
            segments,
            span,
            vla,
            shift: ShiftConfig::default(),
            pool: TemporalPool::default(),
            epochs: 10,
            batch_size: 16,
            lr: 0.02,
            schedule: LrSchedule::Cosine,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            train_clips: 320,
            val_clips: 128,
        }
    }

    /// Motion branch: plain head over `span - 1` enhanced residuals.
    pub fn motion(labels: LabelSet) -> Self {
        Self::base(Modality::Motion, labels, 2, 6, false)
    }

    /// Appearance branch: stacked RGB with the aggregation head. The span is
    /// chosen so its stem matches the motion branch's.
    pub fn appearance(labels: LabelSet) -> Self {
        Self::base(Modality::Appearance, labels, 4, 5, true)
    }

    /// Single-frame RGB baseline.
    pub fn single_frame(labels: LabelSet) -> Self {
        Self::base(Modality::SingleFrame, labels, 1, 1, false)
    }

    pub fn net_config(&self) -> ToyNetConfig {
        ToyNetConfig {
            in_channels: self.modality.in_channels(self.span),
            n_classes: self.labels.n_classes(),
            vla: self.vla.then_some(VlaSpec { shift: self.shift, pool: self.pool, segments: self.segments }),
        }
    }

    pub fn dataset(&self) -> SyntheticDataset {
        SyntheticDataset::new(self.seed, self.train_clips, self.val_clips)
    }

    fn validate(&self) -> Result<()> {
        if self.segments == 0 || self.span == 0 || self.span > CLIP_FRAMES {
            return Err(Error::Config(format!(
                "segments and span must be positive with span <= {CLIP_FRAMES}, got {} and {}",
                self.segments, self.span
            )));
        }
        if self.modality == Modality::Motion && self.span < 2 {
            return Err(Error::Config("motion inputs need a span of at least 2 frames".into()));
        }
        if self.batch_size == 0 || self.train_clips == 0 {
            return Err(Error::Config("batch size and training clip count must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "invalid optimizer settings: lr {}, momentum {}, weight decay {}",
                self.lr, self.momentum, self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to zero over all steps.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine if total == 0 => base,
            LrSchedule::Cosine => 0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
        }
    }
}

/// One JSON line per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub branch: Modality,
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

impl EpochMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// SGD with momentum and L2 weight decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { lr, momentum, weight_decay, velocity: Vec::new() }
    }

    /// `v = mu v + g + wd p; p -= lr v`
    pub fn step(&mut self, params: Vec<&mut [f32]>, grads: &[Vec<f32>]) {
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        let (lr, mu, wd) = (self.lr as f32, self.momentum as f32, self.weight_decay as f32);
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            }
        }
    }
}

pub struct TrainOutcome {
    pub net: ToyNet<f32>,
    pub metrics: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn final_val_acc(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.val_acc)
    }
}

fn clip_inputs(cfg: &TrainConfig, clip: &crate::video_io::VideoClip, mode: SampleMode) -> Result<Vec<Tensor<f32>>> {
    let plan = plan_segments(clip.len(), cfg.segments, cfg.span, mode)?;
    segment_inputs(clip, &plan, cfg.modality)
}

/// Class scores for every validation clip, in order, with their labels.
pub fn validation_scores(net: &ToyNet<f32>, cfg: &TrainConfig) -> Result<Vec<(Vec<f64>, usize)>> {
    let ds = cfg.dataset();
    (0..cfg.val_clips)
        .map(|i| {
            let spec = ds.val_spec(i);
            let inputs = clip_inputs(cfg, &spec.render()?, SampleMode::Eval)?;
            let scores = net.logits(&inputs)?.iter().map(|&v| v as f64).collect();
            Ok((scores, cfg.labels.label(&spec)))
        })
        .collect()
}

fn accuracy(scores: &[(Vec<f64>, usize)]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let hits = scores.iter().filter(|(s, label)| argmax(s) == *label).count();
    hits as f64 / scores.len() as f64
}

/// Validation accuracy with evaluation-mode sampling.
pub fn evaluate(net: &ToyNet<f32>, cfg: &TrainConfig) -> Result<f64> {
    Ok(accuracy(&validation_scores(net, cfg)?))
}

/// Trains one branch from scratch, or from `init` when given (its stem is
/// transferred into a fresh network). `on_epoch` sees each epoch's metrics
/// as they are produced.
pub fn train(
    cfg: &TrainConfig,
    init: Option<&ToyNet<f32>>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = cfg.dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_INIT, cfg.modality as u64]));
    let mut net = ToyNet::new(cfg.net_config(), &mut rng)?;
    if let Some(source) = init {
        net = transfer_init(&net, source)?;
    }
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    let total_steps = cfg.epochs * cfg.train_clips.div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..cfg.train_clips).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_ORDER, epoch as u64])));
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f32>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
            let mut batch_loss = 0.0;
            for &i in batch {
                let spec = ds.train_spec(i);
                let sample_seed = derive_seed(cfg.seed, &[TAG_SAMPLE, epoch as u64, i as u64]);
                let inputs = clip_inputs(cfg, &spec.render()?, SampleMode::Train { seed: sample_seed })?;
                let label = cfg.labels.label(&spec);
                let (loss, logits, g) = net.loss_and_grad(&inputs, label).map_err(|e| match e {
                    Error::Numeric(_) => Error::Training { step, loss: f64::NAN },
                    e => e,
                })?;
                batch_loss += loss;
                let wide: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
                hits += (argmax(&wide) == label) as usize;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.iter_mut().zip(gi).for_each(|(a, &b)| *a += b);
                }
            }
            if !batch_loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Training { step, loss: batch_loss / batch.len() as f64 });
            }
            let inv = 1.0 / batch.len() as f32;
            grads.iter_mut().flatten().for_each(|g| *g *= inv);
            sgd.lr = cfg.schedule.rate(cfg.lr, step, total_steps);
            sgd.step(net.params_mut(), &grads);
            if net.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(Error::Training { step, loss: batch_loss / batch.len() as f64 });
            }
            loss_sum += batch_loss;
            step += 1;
        }
        let m = EpochMetrics {
            branch: cfg.modality,
            epoch,
            step,
            train_loss: loss_sum / cfg.train_clips as f64,
            train_acc: hits as f64 / cfg.train_clips as f64,
            val_acc: evaluate(&net, cfg)?,
        };
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(TrainOutcome { net, metrics })
}

/// Both branches trained on the same clips, and their late fusion.
pub struct TwoStreamOutcome {
    pub motion: TrainOutcome,
    pub appearance: TrainOutcome,
    pub motion_acc: f64,
    pub appearance_acc: f64,
    pub fused_acc: f64,
}

/// Trains the motion branch, then the appearance branch (stem transferred
/// from the motion branch when `transfer` is set), and scores late fusion on
/// the shared validation clips.
pub fn train_two_stream(
    motion_cfg: &TrainConfig,
    appearance_cfg: &TrainConfig,
    transfer: bool,
    fusion: &FusionConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TwoStreamOutcome> {
    if motion_cfg.dataset() != appearance_cfg.dataset() || motion_cfg.labels != appearance_cfg.labels {
        return Err(Error::Config("both branches must use the same dataset and labels".into()));
    }
    let motion = train(motion_cfg, None, &mut on_epoch)?;
    let appearance = train(appearance_cfg, transfer.then_some(&motion.net), &mut on_epoch)?;
    let ms = validation_scores(&motion.net, motion_cfg)?;
    let a_s = validation_scores(&appearance.net, appearance_cfg)?;
    let mut hits = 0;
    for ((a, label), (m, _)) in a_s.iter().zip(&ms) {
        hits += (fuse(a, m, fusion)?.1 == *label) as usize;
    }
    let fused_acc = if ms.is_empty() { 0.0 } else { hits as f64 / ms.len() as f64 };
    Ok(TwoStreamOutcome { motion_acc: accuracy(&ms), appearance_acc: accuracy(&a_s), fused_acc, motion, appearance })
}
