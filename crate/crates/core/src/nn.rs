//! Hand-differentiated layers: 2D convolution, fully-connected, ReLU and
//! softmax cross-entropy.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Tensor};

/// `out_channels x in_channels x k x k` convolution with zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<S> {
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

/// Fills a fan-in scaled uniform initializer, bound `sqrt(6 / fan_in)`.
fn kaiming_uniform<S: Scalar>(n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| S::of(rng.gen_range(-bound..bound))).collect()
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(weight: Tensor<S>, bias: Tensor<S>, stride: usize, pad: usize) -> Result<Self> {
        let (o, _, kh, kw) = match weight.shape()[..] {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => return Err(Error::shape("conv weight OxIxKxK", shape_str(weight.shape()))),
        };
        if kh != kw {
            return Err(Error::shape("square kernel", shape_str(weight.shape())));
        }
        if bias.shape() != [o] {
            return Err(Error::shape(format!("bias [{o}]"), shape_str(bias.shape())));
        }
        if stride == 0 {
            return Err(Error::Config("conv stride must be positive".into()));
        }
        Ok(Self { weight, bias, stride, pad })
    }

    pub fn init(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize, rng: &mut impl Rng) -> Self {
        let w = kaiming_uniform(out_ch * in_ch * k * k, in_ch * k * k, rng);
        Self {
            weight: Tensor::from_parts(vec![out_ch, in_ch, k, k], w),
            bias: Tensor::from_parts(vec![out_ch], vec![S::zero(); out_ch]),
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        if h + 2 * self.pad < k || w + 2 * self.pad < k {
            return Err(Error::Size(format!("{h}x{w} input is smaller than the {k}x{k} kernel")));
        }
        Ok(((h + 2 * self.pad - k) / self.stride + 1, (w + 2 * self.pad - k) / self.stride + 1))
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<(usize, usize, usize)> {
        let (c, h, w) = x.dims3()?;
        if c != self.in_channels() {
            return Err(Error::Config(format!("conv expects {} input channels, got {c}", self.in_channels())));
        }
        Ok((c, h, w))
    }

    /// Unfolds the input into a `(C*k*k) x (H'*W')` patch matrix.
    fn im2col(&self, x: &Tensor<S>) -> Result<(Vec<S>, usize, usize)> {
        let (c, h, w) = self.check_input(x)?;
        let (oh, ow) = self.out_dims(h, w)?;
        let k = self.kernel();
        let p = oh * ow;
        let mut cols = vec![S::zero(); c * k * k * p];
        let src = x.data();
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ch * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let line = &src[ch * h * w + iy as usize * w..][..w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                row[oy * ow + ox] = line[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        Ok((cols, oh, ow))
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (cols, oh, ow) = self.im2col(x)?;
        let p = oh * ow;
        let o = self.out_channels();
        let r = cols.len() / p;
        let wt = self.weight.data();
        let mut out = vec![S::zero(); o * p];
        for oc in 0..o {
            let acc = &mut out[oc * p..(oc + 1) * p];
            acc.iter_mut().for_each(|v| *v = self.bias.data()[oc]);
            for ri in 0..r {
                let a = wt[oc * r + ri];
                if a == S::zero() {
                    continue;
                }
                for (v, &c) in acc.iter_mut().zip(&cols[ri * p..(ri + 1) * p]) {
                    *v += a * c;
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("convolution produced a non-finite value".into()));
        }
        Ok(Tensor::from_parts(vec![o, oh, ow], out))
    }

    /// Returns the parameter gradients and, when `want_input` is set, the
    /// gradient with respect to `x`.
    pub fn backward(
        &self,
        x: &Tensor<S>,
        grad_out: &Tensor<S>,
        want_input: bool,
    ) -> Result<(ConvGrads<S>, Option<Tensor<S>>)> {
        let (cols, oh, ow) = self.im2col(x)?;
        let o = self.out_channels();
        if grad_out.shape() != [o, oh, ow] {
            return Err(Error::shape(shape_str(&[o, oh, ow]), shape_str(grad_out.shape())));
        }
        let p = oh * ow;
        let r = cols.len() / p;
        let g = grad_out.data();
        let mut gw = vec![S::zero(); o * r];
        let mut gb = vec![S::zero(); o];
        for oc in 0..o {
            let go = &g[oc * p..(oc + 1) * p];
            gb[oc] = go.iter().copied().sum();
            for ri in 0..r {
                let mut acc = S::zero();
                for (&a, &b) in go.iter().zip(&cols[ri * p..(ri + 1) * p]) {
                    acc += a * b;
                }
                gw[oc * r + ri] = acc;
            }
        }
        let gx = if want_input {
            let mut gcols = vec![S::zero(); r * p];
            let wt = self.weight.data();
            for ri in 0..r {
                let dst = &mut gcols[ri * p..(ri + 1) * p];
                for oc in 0..o {
                    let a = wt[oc * r + ri];
                    for (v, &gg) in dst.iter_mut().zip(&g[oc * p..(oc + 1) * p]) {
                        *v += a * gg;
                    }
                }
            }
            Some(self.col2im(&gcols, x.shape(), oh, ow))
        } else {
            None
        };
        Ok((ConvGrads { weight: gw, bias: gb }, gx))
    }

    fn col2im(&self, gcols: &[S], shape: &[usize], oh: usize, ow: usize) -> Tensor<S> {
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let k = self.kernel();
        let p = oh * ow;
        let mut gx = vec![S::zero(); c * h * w];
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &gcols[((ch * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                gx[ch * h * w + iy as usize * w + ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_parts(shape.to_vec(), gx)
    }
}

/// Fully-connected layer `y = W x + b`, accumulated in 64-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Clone, Debug)]
pub struct LinearGrads<S> {
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(weight: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        let (o, _) = weight.dims2()?;
        if bias.shape() != [o] {
            return Err(Error::shape(format!("bias [{o}]"), shape_str(bias.shape())));
        }
        Ok(Self { weight, bias })
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / inputs as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| S::of(rng.gen_range(-bound..bound))).collect();
        Self {
            weight: Tensor::from_parts(vec![outputs, inputs], w),
            bias: Tensor::from_parts(vec![outputs], vec![S::zero(); outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[S]) -> Result<Vec<S>> {
        let n = self.inputs();
        if x.len() != n {
            return Err(Error::shape(format!("{n} features"), format!("{} features", x.len())));
        }
        let w = self.weight.data();
        let out: Vec<S> = (0..self.outputs())
            .map(|o| {
                let dot: f64 = w[o * n..(o + 1) * n].iter().zip(x).map(|(a, b)| a.wide() * b.wide()).sum();
                S::of(dot + self.bias.data()[o].wide())
            })
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("fully-connected layer produced a non-finite value".into()));
        }
        Ok(out)
    }

    pub fn backward(&self, x: &[S], grad_out: &[S]) -> (LinearGrads<S>, Vec<S>) {
        let n = self.inputs();
        let w = self.weight.data();
        let mut gw = vec![S::zero(); w.len()];
        let mut gx = vec![0.0f64; n];
        for (o, &g) in grad_out.iter().enumerate() {
            let row = &mut gw[o * n..(o + 1) * n];
            for ((dst, &xi), (acc, &wi)) in row.iter_mut().zip(x).zip(gx.iter_mut().zip(&w[o * n..(o + 1) * n])) {
                *dst = g * xi;
                *acc += g.wide() * wi.wide();
            }
        }
        let gx = gx.into_iter().map(S::of).collect();
        (LinearGrads { weight: gw, bias: grad_out.to_vec() }, gx)
    }
}

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let data = x.data().iter().map(|&v| if v > S::zero() { v } else { S::zero() }).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Gradient of ReLU given its input; zero at and below the kink.
pub fn relu_backward<S: Scalar>(x: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let data = x.data().iter().zip(grad_out.data()).map(|(&v, &g)| if v > S::zero() { g } else { S::zero() }).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Numerically stable softmax, returned in 64-bit.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<f64> {
    let m = logits.iter().map(|v| v.wide()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v.wide() - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy<S: Scalar>(logits: &[S], label: usize) -> Result<(f64, Vec<S>)> {
    if label >= logits.len() {
        return Err(Error::Index(format!("label {label} out of range for {} classes", logits.len())));
    }
    let p = softmax(logits);
    let loss = -p[label].max(f64::MIN_POSITIVE).ln();
    let grad = p.iter().enumerate().map(|(i, &pi)| S::of(if i == label { pi - 1.0 } else { pi })).collect();
    Ok((loss, grad))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
