//! A small two-branch classifier used to exercise the motion features end to
//! end on synthetic clips.
//!
//! Both branches share one backbone shape: `conv 3x3/2 -> ReLU -> conv 3x3/2
//! -> ReLU` (16 then 32 channels). Without aggregation, each segment's map
//! is reduced by a global spatial max and classified, and segment logits are
//! averaged.
//! With aggregation attached, the segment maps go through the channel-shift
//! aggregation and the flattened `C x T'` result feeds the head.

pub mod checkpoint;
pub mod data;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{motion_enhance, MeConfig};
use crate::nn::{argmax, relu, relu_backward, softmax, softmax_cross_entropy, Conv2d, Linear};
use crate::ops::{spatial_maxpool_global, spatial_maxpool_global_backward};
use crate::sampler::{gather, rgb_super, SegmentPlan};
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Layout, Tensor};
use crate::video_io::VideoClip;
use crate::vla::{vla_backward, vla_trace, GroupWeights, ShiftConfig, TemporalPool, VlaTrace};

pub const CONV1_CHANNELS: usize = 16;
pub const CONV2_CHANNELS: usize = 32;
const RGB_CENTER: f32 = 0.5;

/// What a branch consumes per segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// Stacked motion-enhanced residuals of `span` frames.
    Motion,
    /// `span` RGB frames stacked along channels.
    Appearance,
    /// A single RGB frame (use `span = 1`).
    SingleFrame,
}

impl Modality {
    pub fn in_channels(self, span: usize) -> usize {
        match self {
            Modality::Motion => 3 * span.saturating_sub(1),
            Modality::Appearance | Modality::SingleFrame => 3 * span,
        }
    }

    /// Network input for one segment's frames. RGB inputs are shifted to be
    /// roughly zero-centered.
    pub fn segment_input(self, frames: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
        match self {
            Modality::Motion => Ok(motion_enhance(frames, &MeConfig::identity())?.tensor),
            Modality::Appearance | Modality::SingleFrame => rgb_super(frames)?.map(|v| v - RGB_CENTER),
        }
    }
}

/// Per-segment network inputs for a planned clip.
pub fn segment_inputs(clip: &VideoClip, plan: &SegmentPlan, modality: Modality) -> Result<Vec<Tensor<f32>>> {
    gather(clip, plan)?.iter().map(|frames| modality.segment_input(frames)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VlaSpec {
    pub shift: ShiftConfig,
    pub pool: TemporalPool,
    /// Number of segments the head is sized for.
    pub segments: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyNetConfig {
    pub in_channels: usize,
    pub n_classes: usize,
    pub vla: Option<VlaSpec>,
}

impl ToyNetConfig {
    /// Width of the head's input.
    pub fn feature_dim(&self) -> Result<usize> {
        match &self.vla {
            Some(v) => Ok(CONV2_CHANNELS * v.pool.out_len(v.segments)?),
            None => Ok(CONV2_CHANNELS),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("network needs at least one input channel".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if let Some(v) = &self.vla {
            v.shift.group(CONV2_CHANNELS)?;
            v.pool.out_len(v.segments)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyNet<S> {
    pub config: ToyNetConfig,
    pub conv1: Conv2d<S>,
    pub conv2: Conv2d<S>,
    pub head: Linear<S>,
    pub gains: Option<GroupWeights<S>>,
}

/// Intermediates of one segment through the backbone.
#[derive(Clone, Debug)]
struct SegmentTrace<S> {
    input: Tensor<S>,
    z1: Tensor<S>,
    a1: Tensor<S>,
    z2: Tensor<S>,
    a2: Tensor<S>,
}

enum Consensus<S> {
    /// Spatial-max features per segment.
    Mean(Vec<Vec<S>>),
    Vla {
        trace: Box<VlaTrace<S>>,
        features: Vec<S>,
    },
}

struct Forward<S> {
    segments: Vec<SegmentTrace<S>>,
    consensus: Consensus<S>,
    logits: Vec<S>,
}

impl<S: Scalar> ToyNet<S> {
    pub fn new(config: ToyNetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let conv1 = Conv2d::init(config.in_channels, CONV1_CHANNELS, 3, 2, 1, rng);
        let conv2 = Conv2d::init(CONV1_CHANNELS, CONV2_CHANNELS, 3, 2, 1, rng);
        let head = Linear::init(config.feature_dim()?, config.n_classes, rng);
        let gains = config.vla.map(|_| GroupWeights::default());
        Ok(Self { config, conv1, conv2, head, gains })
    }

    pub fn has_vla(&self) -> bool {
        self.config.vla.is_some()
    }

    pub fn parameter_count(&self) -> usize {
        self.conv1.param_count()
            + self.conv2.param_count()
            + self.head.param_count()
            + if self.gains.is_some() { 3 } else { 0 }
    }

    /// Parameter names in the order used by [`Self::params`] and gradients.
    pub fn param_names(&self) -> Vec<&'static str> {
        let mut names = vec!["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "head.weight", "head.bias"];
        if self.gains.is_some() {
            names.extend(["vla.w1", "vla.w2", "vla.w3"]);
        }
        names
    }

    pub fn params(&self) -> Vec<&[S]> {
        let mut out = vec![
            self.conv1.weight.data(),
            self.conv1.bias.data(),
            self.conv2.weight.data(),
            self.conv2.bias.data(),
            self.head.weight.data(),
            self.head.bias.data(),
        ];
        if let Some(g) = &self.gains {
            out.extend([std::slice::from_ref(&g.w1), std::slice::from_ref(&g.w2), std::slice::from_ref(&g.w3)]);
        }
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = vec![
            self.conv1.weight.data_mut(),
            self.conv1.bias.data_mut(),
            self.conv2.weight.data_mut(),
            self.conv2.bias.data_mut(),
            self.head.weight.data_mut(),
            self.head.bias.data_mut(),
        ];
        if let Some(g) = &mut self.gains {
            out.extend([
                std::slice::from_mut(&mut g.w1),
                std::slice::from_mut(&mut g.w2),
                std::slice::from_mut(&mut g.w3),
            ]);
        }
        out
    }

    fn check_inputs(&self, inputs: &[Tensor<S>]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::Arity { op: "toynet forward", min: 1, got: 0 });
        }
        if let Some(v) = &self.config.vla {
            if inputs.len() != v.segments {
                return Err(Error::Config(format!(
                    "aggregating head is sized for {} segments, got {}",
                    v.segments,
                    inputs.len()
                )));
            }
        }
        for x in inputs {
            let (c, _, _) = x.dims3()?;
            if c != self.config.in_channels {
                return Err(Error::shape(format!("{} input channels", self.config.in_channels), shape_str(x.shape())));
            }
        }
        Ok(())
    }

    fn segment_forward(&self, input: Tensor<S>) -> Result<SegmentTrace<S>> {
        let z1 = self.conv1.forward(&input)?;
        let a1 = relu(&z1);
        let z2 = self.conv2.forward(&a1)?;
        let a2 = relu(&z2);
        Ok(SegmentTrace { input, z1, a1, z2, a2 })
    }

    fn forward(&self, inputs: &[Tensor<S>]) -> Result<Forward<S>> {
        self.check_inputs(inputs)?;
        let segments = inputs.iter().map(|x| self.segment_forward(x.clone())).collect::<Result<Vec<_>>>()?;
        let (consensus, logits) = match (&self.config.vla, &self.gains) {
            (Some(v), Some(g)) => {
                let maps: Vec<&Tensor<S>> = segments.iter().map(|s| &s.a2).collect();
                let trace = vla_trace(&maps, &v.shift, g, v.pool)?;
                let features = trace.output.data().to_vec();
                let logits = self.head.forward(&features)?;
                (Consensus::Vla { trace: Box::new(trace), features }, logits)
            }
            _ => {
                let pooled = segments
                    .iter()
                    .map(|s| Ok(spatial_maxpool_global(&s.a2)?.into_data()))
                    .collect::<Result<Vec<Vec<S>>>>()?;
                let inv = S::of(1.0 / pooled.len() as f64);
                let mut logits = vec![S::zero(); self.config.n_classes];
                for f in &pooled {
                    for (l, v) in logits.iter_mut().zip(self.head.forward(f)?) {
                        *l += v * inv;
                    }
                }
                (Consensus::Mean(pooled), logits)
            }
        };
        Ok(Forward { segments, consensus, logits })
    }

    /// Post-ReLU activations of both convolutions for one segment input.
    pub fn stem_activations(&self, input: &Tensor<S>) -> Result<[Tensor<S>; 2]> {
        let t = self.segment_forward(input.clone())?;
        Ok([t.a1, t.a2])
    }

    /// Class logits for one clip's segment inputs.
    pub fn logits(&self, inputs: &[Tensor<S>]) -> Result<Vec<S>> {
        Ok(self.forward(inputs)?.logits)
    }

    /// Cross-entropy loss, logits and per-parameter gradients (ordered as
    /// [`Self::param_names`]).
    pub fn loss_and_grad(&self, inputs: &[Tensor<S>], label: usize) -> Result<(f64, Vec<S>, Vec<Vec<S>>)> {
        let fwd = self.forward(inputs)?;
        let (loss, g_logits) = softmax_cross_entropy(&fwd.logits, label)?;
        let mut g_head_w = vec![S::zero(); self.head.weight.len()];
        let mut g_head_b = vec![S::zero(); self.head.bias.len()];
        let mut add_head = |gw: &[S], gb: &[S]| {
            g_head_w.iter_mut().zip(gw).for_each(|(a, &b)| *a += b);
            g_head_b.iter_mut().zip(gb).for_each(|(a, &b)| *a += b);
        };
        let mut g_gains = None;
        let g_maps: Vec<Tensor<S>> = match &fwd.consensus {
            Consensus::Mean(pooled) => {
                let inv = S::of(1.0 / pooled.len() as f64);
                let g: Vec<S> = g_logits.iter().map(|&v| v * inv).collect();
                pooled
                    .iter()
                    .zip(&fwd.segments)
                    .map(|(f, seg)| {
                        let (hg, gf) = self.head.backward(f, &g);
                        add_head(&hg.weight, &hg.bias);
                        spatial_maxpool_global_backward(&seg.a2, &Tensor::from_parts(vec![gf.len()], gf))
                    })
                    .collect::<Result<_>>()?
            }
            Consensus::Vla { trace, features } => {
                let v = self.config.vla.as_ref().expect("aggregating config");
                let gains = self.gains.as_ref().expect("aggregating gains");
                let (hg, gf) = self.head.backward(features, &g_logits);
                add_head(&hg.weight, &hg.bias);
                let g_out = Tensor::from_parts(trace.output.shape().to_vec(), gf).with_layout(Layout::Ct);
                let (g_segs, g_w) = vla_backward(trace, &v.shift, gains, v.pool, &g_out)?;
                g_gains = Some(g_w);
                g_segs
            }
        };
        let mut g1w = vec![S::zero(); self.conv1.weight.len()];
        let mut g1b = vec![S::zero(); self.conv1.bias.len()];
        let mut g2w = vec![S::zero(); self.conv2.weight.len()];
        let mut g2b = vec![S::zero(); self.conv2.bias.len()];
        for (seg, g_a2) in fwd.segments.iter().zip(&g_maps) {
            let g_z2 = relu_backward(&seg.z2, g_a2);
            let (c2, g_a1) = self.conv2.backward(&seg.a1, &g_z2, true)?;
            let g_z1 = relu_backward(&seg.z1, &g_a1.expect("input gradient requested"));
            let (c1, _) = self.conv1.backward(&seg.input, &g_z1, false)?;
            accumulate(&mut g1w, &c1.weight);
            accumulate(&mut g1b, &c1.bias);
            accumulate(&mut g2w, &c2.weight);
            accumulate(&mut g2b, &c2.bias);
        }
        let mut grads = vec![g1w, g1b, g2w, g2b, g_head_w, g_head_b];
        if let Some([a, b, c]) = g_gains {
            grads.extend([vec![a], vec![b], vec![c]]);
        }
        Ok((loss, fwd.logits, grads))
    }

    /// Aggregation intermediates for one clip; `None` without aggregation.
    pub fn vla_trace(&self, inputs: &[Tensor<S>]) -> Result<Option<VlaTrace<S>>> {
        Ok(match self.forward(inputs)?.consensus {
            Consensus::Vla { trace, .. } => Some(*trace),
            Consensus::Mean(_) => None,
        })
    }
}

fn accumulate<S: Scalar>(acc: &mut [S], g: &[S]) {
    acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
}

fn branch_scores<S: Scalar>(
    clip: &VideoClip,
    plan: &SegmentPlan,
    net: &ToyNet<S>,
    modality: Modality,
) -> Result<Vec<f64>> {
    let inputs: Vec<Tensor<S>> = segment_inputs(clip, plan, modality)?.iter().map(|t| t.cast()).collect();
    Ok(net.logits(&inputs)?.iter().map(|v| v.wide()).collect())
}

/// Class scores of the motion branch: mean of per-segment logits over the
/// motion-enhanced inputs.
pub fn forward_motion_branch<S: Scalar>(clip: &VideoClip, plan: &SegmentPlan, net: &ToyNet<S>) -> Result<Vec<f64>> {
    if net.has_vla() || net.config.in_channels != Modality::Motion.in_channels(plan.span) {
        return Err(Error::Config(format!(
            "motion branch needs a plain head over {} channels",
            Modality::Motion.in_channels(plan.span)
        )));
    }
    branch_scores(clip, plan, net, Modality::Motion)
}

/// Class scores of the appearance branch: stacked RGB per segment, shared
/// backbone, aggregation, head.
pub fn forward_appearance_branch<S: Scalar>(clip: &VideoClip, plan: &SegmentPlan, net: &ToyNet<S>) -> Result<Vec<f64>> {
    if !net.has_vla() || net.config.in_channels != Modality::Appearance.in_channels(plan.span) {
        return Err(Error::Config(format!(
            "appearance branch needs an aggregating head over {} channels",
            Modality::Appearance.in_channels(plan.span)
        )));
    }
    branch_scores(clip, plan, net, Modality::Appearance)
}

/// Late-fusion weights for the two branches' softmax scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub appearance: f64,
    pub motion: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { appearance: 1.0, motion: 1.0 }
    }
}

/// Weighted sum of the branches' softmax probabilities and its argmax.
pub fn fuse(appearance: &[f64], motion: &[f64], cfg: &FusionConfig) -> Result<(Vec<f64>, usize)> {
    if appearance.len() != motion.len() {
        return Err(Error::shape(format!("{} scores", appearance.len()), format!("{} scores", motion.len())));
    }
    let (pa, pm) = (softmax(appearance), softmax(motion));
    let fused: Vec<f64> = pa.iter().zip(&pm).map(|(a, m)| cfg.appearance * a + cfg.motion * m).collect();
    let best = argmax(&fused);
    Ok((fused, best))
}

/// Copies the motion network's convolutions into a fresh appearance
/// network, leaving its head and gains as initialized. Stem shapes must
/// agree, which for these inputs means `3T_a = C*T_m`.
pub fn transfer_init<S: Scalar>(appearance: &ToyNet<S>, motion: &ToyNet<S>) -> Result<ToyNet<S>> {
    let same =
        |a: &Conv2d<S>, b: &Conv2d<S>| a.weight.shape() == b.weight.shape() && a.stride == b.stride && a.pad == b.pad;
    if !same(&appearance.conv1, &motion.conv1) || !same(&appearance.conv2, &motion.conv2) {
        return Err(Error::Config(format!(
            "transfer init requires 3T_a = C*T_m: appearance stem takes {} channels, motion stem takes {}",
            appearance.config.in_channels, motion.config.in_channels
        )));
    }
    let mut out = appearance.clone();
    out.conv1 = motion.conv1.clone();
    out.conv2 = motion.conv2.clone();
    Ok(out)
}
