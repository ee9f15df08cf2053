//! Central finite-difference checks of the hand-written backward rules.
//!
//! A probe wraps one layer as a scalar function of a flat coordinate vector
//! (inputs or parameters) by contracting the layer output with a fixed random
//! upstream gradient. All probing runs in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::{relu, relu_backward, softmax_cross_entropy, Conv2d, Linear};
use crate::ops::{
    spatial_maxpool_global, spatial_maxpool_global_backward, temporal_maxpool1d, temporal_maxpool1d_backward,
};
use crate::tensor::Tensor;
use crate::vla::{
    channel_shift, group_weighted_sum, group_weighted_sum_backward, inverse_channel_shift, GroupWeights, ShiftConfig,
};

pub const DEFAULT_STEP: f64 = 1e-4;

/// A scalar function of a flat coordinate vector with an analytic gradient.
pub trait Differentiable {
    fn loss(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Coordinates where the function is not smooth enough to probe (ties,
    /// kinks). Skipped by [`grad_check`].
    fn excluded(&self, _x: &[f64]) -> Vec<usize> {
        Vec::new()
    }
}

/// Relative error `|a - n| / max(|a|, |n|)`, zero when both are negligible.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Max relative error between the analytic gradient and central differences
/// over up to `samples` random coordinates of `probe`.
pub fn grad_check<D: Differentiable + ?Sized>(layer: &D, probe: &[f64], samples: usize, seed: u64) -> f64 {
    let grad = layer.gradient(probe);
    assert_eq!(grad.len(), probe.len(), "gradient length");
    let excluded = layer.excluded(probe);
    let mut coords: Vec<usize> = (0..probe.len()).filter(|i| !excluded.contains(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..coords.len()).rev() {
        coords.swap(i, rng.gen_range(0..=i));
    }
    coords.truncate(samples);
    let mut x = probe.to_vec();
    let mut worst: f64 = 0.0;
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + DEFAULT_STEP;
        let up = layer.loss(&x);
        x[i] = orig - DEFAULT_STEP;
        let down = layer.loss(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * DEFAULT_STEP);
        worst = worst.max(relative_error(grad[i], numeric));
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Convolution as a function of its input.
pub struct ConvInputProbe {
    pub conv: Conv2d<f64>,
    pub shape: [usize; 3],
    pub upstream: Vec<f64>,
}

impl ConvInputProbe {
    pub fn random(in_ch: usize, out_ch: usize, stride: usize, hw: usize, seed: u64) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = Conv2d::init(in_ch, out_ch, 3, stride, 1, &mut rng);
        let (oh, ow) = conv.out_dims(hw, hw).expect("probe dims");
        let upstream = random_vec(out_ch * oh * ow, &mut rng);
        let x = random_vec(in_ch * hw * hw, &mut rng);
        (Self { conv, shape: [in_ch, hw, hw], upstream }, x)
    }
}

impl Differentiable for ConvInputProbe {
    fn loss(&self, x: &[f64]) -> f64 {
        let t = Tensor::new(&self.shape, x.to_vec()).unwrap();
        dot(self.conv.forward(&t).unwrap().data(), &self.upstream)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let t = Tensor::new(&self.shape, x.to_vec()).unwrap();
        let out = self.conv.forward(&t).unwrap();
        let g = Tensor::new(out.shape(), self.upstream.clone()).unwrap();
        self.conv.backward(&t, &g, true).unwrap().1.unwrap().into_data()
    }
}

/// Convolution as a function of its weights and bias (weights first).
pub struct ConvParamProbe {
    pub template: Conv2d<f64>,
    pub input: Tensor<f64>,
    pub upstream: Vec<f64>,
}

impl ConvParamProbe {
    pub fn random(in_ch: usize, out_ch: usize, stride: usize, hw: usize, seed: u64) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = Conv2d::init(in_ch, out_ch, 3, stride, 1, &mut rng);
        let (oh, ow) = conv.out_dims(hw, hw).expect("probe dims");
        let input = Tensor::new(&[in_ch, hw, hw], random_vec(in_ch * hw * hw, &mut rng)).unwrap();
        let upstream = random_vec(out_ch * oh * ow, &mut rng);
        let mut params = conv.weight.data().to_vec();
        params.extend(random_vec(out_ch, &mut rng));
        (Self { template: conv, input, upstream }, params)
    }

    fn conv_with(&self, p: &[f64]) -> Conv2d<f64> {
        let nw = self.template.weight.len();
        Conv2d::new(
            Tensor::new(self.template.weight.shape(), p[..nw].to_vec()).unwrap(),
            Tensor::new(self.template.bias.shape(), p[nw..].to_vec()).unwrap(),
            self.template.stride,
            self.template.pad,
        )
        .unwrap()
    }
}

impl Differentiable for ConvParamProbe {
    fn loss(&self, p: &[f64]) -> f64 {
        dot(self.conv_with(p).forward(&self.input).unwrap().data(), &self.upstream)
    }
    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let conv = self.conv_with(p);
        let out = conv.forward(&self.input).unwrap();
        let g = Tensor::new(out.shape(), self.upstream.clone()).unwrap();
        let (grads, _) = conv.backward(&self.input, &g, false).unwrap();
        let mut v = grads.weight;
        v.extend(grads.bias);
        v
    }
}

/// Fully-connected layer as a function of `[weights, bias, input]`.
pub struct LinearProbe {
    pub inputs: usize,
    pub outputs: usize,
    pub upstream: Vec<f64>,
}

impl LinearProbe {
    pub fn random(inputs: usize, outputs: usize, seed: u64) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let upstream = random_vec(outputs, &mut rng);
        let x = random_vec(inputs * outputs + outputs + inputs, &mut rng);
        (Self { inputs, outputs, upstream }, x)
    }

    fn split<'a>(&self, p: &'a [f64]) -> (Linear<f64>, &'a [f64]) {
        let nw = self.inputs * self.outputs;
        let layer = Linear::new(
            Tensor::new(&[self.outputs, self.inputs], p[..nw].to_vec()).unwrap(),
            Tensor::new(&[self.outputs], p[nw..nw + self.outputs].to_vec()).unwrap(),
        )
        .unwrap();
        (layer, &p[nw + self.outputs..])
    }
}

impl Differentiable for LinearProbe {
    fn loss(&self, p: &[f64]) -> f64 {
        let (layer, x) = self.split(p);
        dot(&layer.forward(x).unwrap(), &self.upstream)
    }
    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let (layer, x) = self.split(p);
        let (g, gx) = layer.backward(x, &self.upstream);
        let mut v = g.weight;
        v.extend(g.bias);
        v.extend(gx);
        v
    }
}

/// ReLU probed away from its kink: coordinates with `|x| <= margin` are
/// excluded.
pub struct ReluProbe {
    pub upstream: Vec<f64>,
    pub margin: f64,
}

impl ReluProbe {
    pub fn random(n: usize, seed: u64) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (Self { upstream: random_vec(n, &mut rng), margin: 1e-2 }, random_vec(n, &mut rng))
    }
}

impl Differentiable for ReluProbe {
    fn loss(&self, x: &[f64]) -> f64 {
        let t = Tensor::new(&[x.len()], x.to_vec()).unwrap();
        dot(relu(&t).data(), &self.upstream)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let t = Tensor::new(&[x.len()], x.to_vec()).unwrap();
        let g = Tensor::new(&[x.len()], self.upstream.clone()).unwrap();
        relu_backward(&t, &g).into_data()
    }
    fn excluded(&self, x: &[f64]) -> Vec<usize> {
        (0..x.len()).filter(|&i| x[i].abs() <= self.margin).collect()
    }
}

/// Softmax cross-entropy as a function of the logits.
pub struct SoftmaxCeProbe {
    pub label: usize,
}

impl Differentiable for SoftmaxCeProbe {
    fn loss(&self, x: &[f64]) -> f64 {
        softmax_cross_entropy(x, self.label).unwrap().0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        softmax_cross_entropy(x, self.label).unwrap().1
    }
}

/// Channel shift followed by the group gains, as a function of
/// `[w1, w2, w3, input...]`.
pub struct GroupWeightedSumProbe {
    pub channels: usize,
    pub steps: usize,
    pub cfg: ShiftConfig,
    pub upstream: Vec<f64>,
}

impl GroupWeightedSumProbe {
    pub fn random(channels: usize, steps: usize, seed: u64) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let upstream = random_vec(channels * steps, &mut rng);
        let x = random_vec(3 + channels * steps, &mut rng);
        (Self { channels, steps, cfg: ShiftConfig::default(), upstream }, x)
    }

    fn split(&self, p: &[f64]) -> (GroupWeights<f64>, Tensor<f64>) {
        (
            GroupWeights::new(p[0], p[1], p[2]).unwrap(),
            Tensor::new(&[self.channels, self.steps], p[3..].to_vec()).unwrap(),
        )
    }
}

impl Differentiable for GroupWeightedSumProbe {
    fn loss(&self, p: &[f64]) -> f64 {
        let (w, x) = self.split(p);
        let shifted = channel_shift(&x, &self.cfg).unwrap();
        dot(group_weighted_sum(&shifted, &w, &self.cfg).unwrap().data(), &self.upstream)
    }
    fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let (w, x) = self.split(p);
        let shifted = channel_shift(&x, &self.cfg).unwrap();
        let g = Tensor::new(&[self.channels, self.steps], self.upstream.clone()).unwrap();
        let (g_shifted, gw) = group_weighted_sum_backward(&shifted, &w, &self.cfg, &g).unwrap();
        let gx = inverse_channel_shift(&g_shifted, &self.cfg).unwrap();
        let mut v = gw.to_vec();
        v.extend(gx.into_data());
        v
    }
}

/// Minimum gap between a window's maximum and its runner-up for the window
/// to count as untied.
const TIE_GAP: f64 = 1e-3;

/// Global spatial max of a `T x C x H x W` input, probed at untied windows.
pub struct SpatialMaxProbe {
    pub shape: [usize; 4],
    pub upstream: Vec<f64>,
}

impl SpatialMaxProbe {
    pub fn random(shape: [usize; 4], seed: u64) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let upstream = random_vec(shape[0] * shape[1], &mut rng);
        let x = random_vec(shape.iter().product(), &mut rng);
        (Self { shape, upstream }, x)
    }
}

impl Differentiable for SpatialMaxProbe {
    fn loss(&self, x: &[f64]) -> f64 {
        let t = Tensor::new(&self.shape, x.to_vec()).unwrap();
        dot(spatial_maxpool_global(&t).unwrap().data(), &self.upstream)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let t = Tensor::new(&self.shape, x.to_vec()).unwrap();
        let g = Tensor::new(&[self.shape[1], self.shape[0]], self.upstream.clone()).unwrap();
        spatial_maxpool_global_backward(&t, &g).unwrap().into_data()
    }
    fn excluded(&self, x: &[f64]) -> Vec<usize> {
        let plane = self.shape[2] * self.shape[3];
        let mut out = Vec::new();
        for (w, window) in x.chunks(plane).enumerate() {
            let mut sorted = window.to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if sorted.len() > 1 && sorted[0] - sorted[1] < TIE_GAP {
                out.extend(w * plane..(w + 1) * plane);
            }
        }
        out
    }
}

/// Temporal max pooling of a `C x N` input, probed at untied windows.
pub struct TemporalMaxProbe {
    pub channels: usize,
    pub steps: usize,
    pub kernel: usize,
    pub stride: usize,
    pub upstream: Vec<f64>,
}

impl TemporalMaxProbe {
    pub fn random(channels: usize, steps: usize, kernel: usize, stride: usize, seed: u64) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_out = (steps - kernel) / stride + 1;
        let upstream = random_vec(channels * t_out, &mut rng);
        let x = random_vec(channels * steps, &mut rng);
        (Self { channels, steps, kernel, stride, upstream }, x)
    }
}

impl Differentiable for TemporalMaxProbe {
    fn loss(&self, x: &[f64]) -> f64 {
        let t = Tensor::new(&[self.channels, self.steps], x.to_vec()).unwrap();
        dot(temporal_maxpool1d(&t, self.kernel, self.stride).unwrap().data(), &self.upstream)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let t = Tensor::new(&[self.channels, self.steps], x.to_vec()).unwrap();
        let t_out = (self.steps - self.kernel) / self.stride + 1;
        let g = Tensor::new(&[self.channels, t_out], self.upstream.clone()).unwrap();
        temporal_maxpool1d_backward(&t, self.kernel, self.stride, &g).unwrap().into_data()
    }
    fn excluded(&self, x: &[f64]) -> Vec<usize> {
        let t_out = (self.steps - self.kernel) / self.stride + 1;
        let mut out = Vec::new();
        for c in 0..self.channels {
            for j in 0..t_out {
                let idx: Vec<usize> =
                    (j * self.stride..j * self.stride + self.kernel).map(|i| c * self.steps + i).collect();
                let mut vals: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if vals.len() > 1 && vals[0] - vals[1] < TIE_GAP {
                    out.extend(idx);
                }
            }
        }
        out
    }
}
