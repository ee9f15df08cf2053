//! Motion features from consecutive frames.
//!
//! Motion enhancement dilates the next frame with a 3x3 max filter before
//! subtracting the current one:
//!
//! ```text
//! R_k = maxpool3x3(F(frame[k+1])) - F(frame[k])
//! ```
//!
//! Searching per pixel for the best displacement `(dx, dy)` with
//! `dx, dy in {-1, 0, 1}` and `|dx| + |dy| <= 2` covers exactly the 3x3
//! neighborhood, so the max filter reproduces the brightest admissible
//! displaced sample without tracking which displacement produced it.
//! [`displacement_search_oracle`] spells the search out with explicit loops
//! and must agree with [`motion_enhance`] bit for bit.
//!
//! [`rgbdiff`] is the plain frame difference without dilation.

use std::borrow::Borrow;

use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::ops::{maxpool2d_3x3, stack_channels, subtract};
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Tensor};

/// Feature map applied to every frame before differencing.
#[derive(Clone, Debug, PartialEq)]
pub enum Transform<S> {
    /// Raw pixels; three working channels.
    Identity,
    /// Stride-1 convolution with "same" zero padding; the kernel size must be odd.
    Conv2d(Conv2d<S>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeConfig<S> {
    pub transform: Transform<S>,
}

impl<S: Scalar> Default for MeConfig<S> {
    fn default() -> Self {
        Self { transform: Transform::Identity }
    }
}

impl<S: Scalar> MeConfig<S> {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn conv(conv: Conv2d<S>) -> Result<Self> {
        let k = conv.kernel();
        if k.is_multiple_of(2) {
            return Err(Error::Config(format!("ME transform kernel must be odd, got {k}")));
        }
        if conv.stride != 1 || conv.pad != k / 2 {
            return Err(Error::Config("ME transform must be a stride-1 same-padded conv".into()));
        }
        if conv.in_channels() != 3 {
            return Err(Error::Config(format!(
                "ME transform reads RGB frames, conv expects {} channels",
                conv.in_channels()
            )));
        }
        Ok(Self { transform: Transform::Conv2d(conv) })
    }

    /// Working channel count `C` after the transform.
    pub fn channels(&self) -> usize {
        match &self.transform {
            Transform::Identity => 3,
            Transform::Conv2d(c) => c.out_channels(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.transform {
            Transform::Identity => "identity",
            Transform::Conv2d(_) => "conv2d",
        }
    }

    fn apply(&self, frame: &Tensor<S>) -> Result<Tensor<S>> {
        match &self.transform {
            Transform::Identity => Ok(frame.clone()),
            Transform::Conv2d(conv) => conv.forward(frame),
        }
    }
}

/// Stacked residuals for one segment: `(t_m * C) x H x W`.
#[derive(Clone, Debug)]
pub struct MotionFeatures<S> {
    pub tensor: Tensor<S>,
    pub t_m: usize,
    pub config: MeConfig<S>,
}

fn check_frames<S: Scalar, T: Borrow<Tensor<S>>>(op: &'static str, frames: &[T]) -> Result<()> {
    if frames.len() < 2 {
        return Err(Error::Arity { op, min: 2, got: frames.len() });
    }
    let first = frames[0].borrow();
    first.dims3()?;
    for (k, f) in frames.iter().enumerate() {
        if f.borrow().shape() != first.shape() {
            return Err(Error::shape(
                shape_str(first.shape()),
                format!("frame {k} has {}", shape_str(f.borrow().shape())),
            ));
        }
    }
    Ok(())
}

/// Consecutive differences `frame[k+1] - frame[k]`, stacked along channels.
pub fn rgbdiff<S: Scalar, T: Borrow<Tensor<S>>>(frames: &[T]) -> Result<Tensor<S>> {
    check_frames("rgbdiff", frames)?;
    let residuals = frames.windows(2).map(|p| subtract(p[1].borrow(), p[0].borrow())).collect::<Result<Vec<_>>>()?;
    stack_channels(&residuals)
}

/// Single motion-enhanced residual `maxpool3x3(next) - prev`.
pub fn enhance_pair<S: Scalar>(prev: &Tensor<S>, next: &Tensor<S>) -> Result<Tensor<S>> {
    subtract(&maxpool2d_3x3(next)?, prev)
}

/// Motion enhancement over `T_m + 1` frames, producing `T_m` stacked residuals.
pub fn motion_enhance<S: Scalar, T: Borrow<Tensor<S>>>(
    frames: &[T],
    config: &MeConfig<S>,
) -> Result<MotionFeatures<S>> {
    check_frames("motion_enhance", frames)?;
    let features = frames.iter().map(|f| config.apply(f.borrow())).collect::<Result<Vec<_>>>()?;
    let residuals = features.windows(2).map(|p| enhance_pair(&p[0], &p[1])).collect::<Result<Vec<_>>>()?;
    let tensor = stack_channels(&residuals)?;
    if tensor.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("motion features contain non-finite values".into()));
    }
    Ok(MotionFeatures { tensor, t_m: residuals.len(), config: config.clone() })
}

/// Admissible displacements: `dx, dy in {-1, 0, 1}` with `|dx| + |dy| <= 2`.
pub fn admissible_displacements() -> Vec<(isize, isize)> {
    let mut out = Vec::new();
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dx.abs() + dy.abs() <= 2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Brute-force reference: for each pixel, the largest value of `f_next`
/// over all admissible displacements (out-of-bounds samples replicate the
/// edge), minus `f_prev`.
pub fn displacement_search_oracle<S: Scalar>(f_next: &Tensor<S>, f_prev: &Tensor<S>) -> Result<Tensor<S>> {
    let (c, h, w) = f_next.dims3()?;
    if f_prev.shape() != f_next.shape() {
        return Err(Error::shape(shape_str(f_next.shape()), shape_str(f_prev.shape())));
    }
    let offsets = admissible_displacements();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut best: Option<S> = None;
                for &(dx, dy) in &offsets {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let v = f_next.at(&[ch, yy, xx]);
                    best = Some(match best {
                        Some(b) if b >= v => b,
                        _ => v,
                    });
                }
                out.push(best.expect("nine offsets") - f_prev.at(&[ch, y, x]));
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// `dilation(F) - F`, the response of ME on a static scene.
pub fn morphological_gradient<S: Scalar>(f: &Tensor<S>) -> Result<Tensor<S>> {
    enhance_pair(f, f)
}

/// Output shape of ME on `T_m + 1` frames of `C x H x W` features.
pub fn me_stack_map_shape(t_m: usize, c: usize, h: usize, w: usize) -> [usize; 3] {
    [t_m * c, h, w]
}
