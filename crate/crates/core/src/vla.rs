//! Video-level aggregation over per-segment feature maps.
//!
//! Pipeline for `N` segment maps of shape `C x H' x W'`:
//!
//! 1. stack to `N x C x H' x W'`
//! 2. global spatial max per channel and segment, giving `C x N`
//! 3. temporal max pooling, giving `C x T'`
//! 4. channel shift: the first `c` channels read time `i - 1`, the next `c`
//!    read time `i + 1`, the rest stay put; vacated slots are zero
//! 5. per-group scalar gains `w1`, `w2`, `w3`
//!
//! Only the three gains are learnable; the shift itself has no parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{
    spatial_maxpool_global, spatial_maxpool_global_backward, stack_time, temporal_maxpool1d,
    temporal_maxpool1d_backward,
};
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Layout, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    ZeroFill,
}

/// Fraction of channels shifted in each direction, as `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftConfig {
    pub num: u32,
    pub den: u32,
    pub boundary: Boundary,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self { num: 1, den: 4, boundary: Boundary::ZeroFill }
    }
}

impl ShiftConfig {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        // 0 < num/den <= 1/3
        if num == 0 || den == 0 || 3 * num > den {
            return Err(Error::Config(format!("shift fraction {num}/{den} must lie in (0, 1/3]")));
        }
        Ok(Self { num, den, boundary: Boundary::ZeroFill })
    }

    /// Channels per shifted group for a `C`-channel input.
    pub fn group(&self, channels: usize) -> Result<usize> {
        let c = channels * self.num as usize / self.den as usize;
        if c == 0 {
            return Err(Error::Config(format!(
                "{channels} channels are too few for shift fraction {}/{}: need at least {}",
                self.num,
                self.den,
                (self.den as usize).div_ceil(self.num as usize)
            )));
        }
        debug_assert!(2 * c <= channels);
        Ok(c)
    }
}

/// Gains for the backward-shifted, forward-shifted and unshifted groups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights<S> {
    pub w1: S,
    pub w2: S,
    pub w3: S,
}

impl<S: Scalar> Default for GroupWeights<S> {
    fn default() -> Self {
        Self { w1: S::one(), w2: S::one(), w3: S::one() }
    }
}

impl<S: Scalar> GroupWeights<S> {
    pub fn new(w1: S, w2: S, w3: S) -> Result<Self> {
        if ![w1, w2, w3].iter().all(|w| w.is_finite()) {
            return Err(Error::Numeric("group weights must be finite".into()));
        }
        Ok(Self { w1, w2, w3 })
    }

    pub fn as_array(&self) -> [S; 3] {
        [self.w1, self.w2, self.w3]
    }
}

fn shift_rows<S: Scalar>(f: &Tensor<S>, cfg: &ShiftConfig, back: isize) -> Result<Tensor<S>> {
    let (ch, t) = f.dims2()?;
    let c = cfg.group(ch)?;
    let src = f.data();
    let mut out = src.to_vec();
    for k in 0..2 * c {
        // group 0 reads i - back, group 1 reads i + back
        let offset = if k < c { -back } else { back };
        let row = &mut out[k * t..(k + 1) * t];
        for (i, v) in row.iter_mut().enumerate() {
            let j = i as isize + offset;
            *v = if j >= 0 && j < t as isize { src[k * t + j as usize] } else { S::zero() };
        }
    }
    Ok(Tensor::from_parts(vec![ch, t], out).with_layout(Layout::Ct))
}

/// Temporal channel shift of a `C x T` tensor with zero-filled boundaries.
pub fn channel_shift<S: Scalar>(f: &Tensor<S>, cfg: &ShiftConfig) -> Result<Tensor<S>> {
    shift_rows(f, cfg, 1)
}

/// Shift in the opposite direction. It is also the adjoint of
/// [`channel_shift`], so it doubles as its backward rule.
pub fn inverse_channel_shift<S: Scalar>(f: &Tensor<S>, cfg: &ShiftConfig) -> Result<Tensor<S>> {
    shift_rows(f, cfg, -1)
}

fn group_of(k: usize, c: usize) -> usize {
    if k < c {
        0
    } else if k < 2 * c {
        1
    } else {
        2
    }
}

/// Scales channel groups `[0, c)`, `[c, 2c)` and `[2c, C)` by `w1`, `w2`, `w3`.
pub fn group_weighted_sum<S: Scalar>(shifted: &Tensor<S>, w: &GroupWeights<S>, cfg: &ShiftConfig) -> Result<Tensor<S>> {
    let (ch, t) = shifted.dims2()?;
    let c = cfg.group(ch)?;
    let gains = w.as_array();
    let data = shifted.data().iter().enumerate().map(|(i, &v)| v * gains[group_of(i / t, c)]).collect();
    Ok(Tensor::from_parts(vec![ch, t], data).with_layout(Layout::Ct))
}

/// Backward rule of [`group_weighted_sum`]: the gradient for the input and
/// for the three gains.
pub fn group_weighted_sum_backward<S: Scalar>(
    shifted: &Tensor<S>,
    w: &GroupWeights<S>,
    cfg: &ShiftConfig,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, [S; 3])> {
    let (ch, t) = shifted.dims2()?;
    if grad_out.shape() != shifted.shape() {
        return Err(Error::shape(shape_str(shifted.shape()), shape_str(grad_out.shape())));
    }
    let c = cfg.group(ch)?;
    let gains = w.as_array();
    let mut gw = [0.0f64; 3];
    let mut gx = Vec::with_capacity(shifted.len());
    for (i, (&v, &g)) in shifted.data().iter().zip(grad_out.data()).enumerate() {
        let grp = group_of(i / t, c);
        gw[grp] += v.wide() * g.wide();
        gx.push(g * gains[grp]);
    }
    Ok((Tensor::from_parts(vec![ch, t], gx).with_layout(Layout::Ct), gw.map(S::of)))
}

/// Temporal pooling geometry; kernel 2, stride 2 by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalPool {
    pub kernel: usize,
    pub stride: usize,
}

impl Default for TemporalPool {
    fn default() -> Self {
        Self { kernel: 2, stride: 2 }
    }
}

impl TemporalPool {
    /// Output length for `n` segments, or a size error.
    pub fn out_len(&self, n: usize) -> Result<usize> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config("temporal pool kernel and stride must be positive".into()));
        }
        if self.kernel > n {
            return Err(Error::Size(format!("temporal pool kernel {} exceeds {n} segments", self.kernel)));
        }
        Ok((n - self.kernel) / self.stride + 1)
    }
}

/// Intermediates of one VLA forward pass, kept for the backward pass and
/// for inspection.
#[derive(Clone, Debug)]
pub struct VlaTrace<S> {
    /// `N x C x H' x W'`
    pub stacked: Tensor<S>,
    /// `C x N` after global spatial max.
    pub spatial: Tensor<S>,
    /// `C x T'` after temporal max.
    pub temporal: Tensor<S>,
    /// `C x T'` after the channel shift.
    pub shifted: Tensor<S>,
    /// `C x T'` final output.
    pub output: Tensor<S>,
}

pub fn vla_trace<S: Scalar, T: std::borrow::Borrow<Tensor<S>>>(
    segment_features: &[T],
    cfg: &ShiftConfig,
    w: &GroupWeights<S>,
    pool: TemporalPool,
) -> Result<VlaTrace<S>> {
    let stacked = stack_time(segment_features)?;
    pool.out_len(segment_features.len())?;
    let spatial = spatial_maxpool_global(&stacked)?;
    let temporal = temporal_maxpool1d(&spatial, pool.kernel, pool.stride)?;
    let shifted = channel_shift(&temporal, cfg)?;
    let output = group_weighted_sum(&shifted, w, cfg)?;
    Ok(VlaTrace { stacked, spatial, temporal, shifted, output })
}

pub fn vla_forward<S: Scalar, T: std::borrow::Borrow<Tensor<S>>>(
    segment_features: &[T],
    cfg: &ShiftConfig,
    w: &GroupWeights<S>,
    pool: TemporalPool,
) -> Result<Tensor<S>> {
    Ok(vla_trace(segment_features, cfg, w, pool)?.output)
}

/// Backpropagates `grad_out` (`C x T'`) through a traced VLA pass. Returns
/// one gradient per segment feature map plus the gains' gradient.
pub fn vla_backward<S: Scalar>(
    trace: &VlaTrace<S>,
    cfg: &ShiftConfig,
    w: &GroupWeights<S>,
    pool: TemporalPool,
    grad_out: &Tensor<S>,
) -> Result<(Vec<Tensor<S>>, [S; 3])> {
    let (g_shifted, g_w) = group_weighted_sum_backward(&trace.shifted, w, cfg, grad_out)?;
    let g_temporal = inverse_channel_shift(&g_shifted, cfg)?;
    let g_spatial = temporal_maxpool1d_backward(&trace.spatial, pool.kernel, pool.stride, &g_temporal)?;
    let g_stacked = spatial_maxpool_global_backward(&trace.stacked, &g_spatial)?;
    let (n, c, h, wd) = match trace.stacked.shape()[..] {
        [n, c, h, w] => (n, c, h, w),
        _ => unreachable!("stacked features are rank 4"),
    };
    let plane = c * h * wd;
    let grads = (0..n)
        .map(|k| Tensor::from_parts(vec![c, h, wd], g_stacked.data()[k * plane..(k + 1) * plane].to_vec()))
        .collect();
    Ok((grads, g_w))
}
