//! Pooling, differencing and stacking kernels.
//!
//! Every kernel here is exact: it only selects, copies or subtracts values,
//! so outputs are bit-reproducible across runs.

use std::borrow::Borrow;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Layout, Tensor};

/// 3x3 max filter with replicate-edge padding, applied per channel.
///
/// Computed separably (rows, then columns); max is exact so the result is
/// identical to scanning the full neighborhood.
pub fn maxpool2d_3x3<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let (c, h, w) = input.dims3().map_err(|_| Error::shape("rank 3 (CxHxW)", shape_str(input.shape())))?;
    let src = input.data();
    let mut rows = vec![S::zero(); src.len()];
    let mut out = vec![S::zero(); src.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            let row = &src[base + y * w..base + (y + 1) * w];
            let dst = &mut rows[base + y * w..base + (y + 1) * w];
            if w == 1 {
                dst[0] = row[0];
                continue;
            }
            dst[0] = row[0].max_keep(row[1]);
            for x in 1..w - 1 {
                dst[x] = row[x - 1].max_keep(row[x]).max_keep(row[x + 1]);
            }
            dst[w - 1] = row[w - 2].max_keep(row[w - 1]);
        }
        for y in 0..h {
            let up = base + y.saturating_sub(1) * w;
            let mid = base + y * w;
            let down = base + (y + 1).min(h - 1) * w;
            for x in 0..w {
                out[mid + x] = rows[up + x].max_keep(rows[mid + x]).max_keep(rows[down + x]);
            }
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out).with_layout(input.layout()))
}

/// Position that wins the replicate-edge 3x3 max at `(y, x)`, scanning
/// offsets row by row and keeping the first maximum.
fn argmax_3x3<S: Scalar>(plane: &[S], h: usize, w: usize, y: usize, x: usize) -> usize {
    let mut best = plane[y * w + x];
    let mut best_idx = y * w + x;
    let mut first = true;
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            let v = plane[yy * w + xx];
            if first || v > best {
                best = v;
                best_idx = yy * w + xx;
                first = false;
            }
        }
    }
    best_idx
}

/// Gradient of [`maxpool2d_3x3`]: each output gradient flows to the input
/// that won its window. Only meaningful where windows have no ties.
pub fn maxpool2d_3x3_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    let (c, h, w) = input.dims3()?;
    same_shape(input, grad_out)?;
    let mut grad = vec![S::zero(); input.len()];
    for ch in 0..c {
        let plane = input.channel(ch);
        let g = grad_out.channel(ch);
        for y in 0..h {
            for x in 0..w {
                let src = argmax_3x3(plane, h, w, y, x);
                grad[ch * h * w + src] += g[y * w + x];
            }
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), grad))
}

fn same_shape<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(shape_str(a.shape()), shape_str(b.shape())));
    }
    Ok(())
}

/// Elementwise `a - b`.
pub fn subtract<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    same_shape(a, b)?;
    let data: Vec<S> = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("subtraction overflowed".into()));
    }
    Ok(Tensor::from_parts(a.shape().to_vec(), data).with_layout(a.layout()))
}

/// Max over sliding temporal windows of a `C x N` tensor, no padding.
/// Output has `floor((N - kernel) / stride) + 1` steps.
pub fn temporal_maxpool1d<S: Scalar>(input: &Tensor<S>, kernel: usize, stride: usize) -> Result<Tensor<S>> {
    let (c, n) = input.dims2()?;
    if kernel == 0 || stride == 0 {
        return Err(Error::Config("temporal pool kernel and stride must be positive".into()));
    }
    if kernel > n {
        return Err(Error::Size(format!("temporal pool kernel {kernel} exceeds {n} time steps")));
    }
    let t_out = (n - kernel) / stride + 1;
    let mut out = Vec::with_capacity(c * t_out);
    for ch in 0..c {
        let row = &input.data()[ch * n..(ch + 1) * n];
        for t in 0..t_out {
            let window = &row[t * stride..t * stride + kernel];
            out.push(window[1..].iter().copied().fold(window[0], S::max_keep));
        }
    }
    Ok(Tensor::from_parts(vec![c, t_out], out).with_layout(Layout::Ct))
}

/// Gradient of [`temporal_maxpool1d`] with first-maximum routing.
pub fn temporal_maxpool1d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: usize,
    stride: usize,
    grad_out: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (c, n) = input.dims2()?;
    let (gc, t_out) = grad_out.dims2()?;
    if gc != c || kernel > n || t_out != (n - kernel) / stride + 1 {
        return Err(Error::shape("gradient matching pooled shape", shape_str(grad_out.shape())));
    }
    let mut grad = vec![S::zero(); c * n];
    for ch in 0..c {
        let row = &input.data()[ch * n..(ch + 1) * n];
        for t in 0..t_out {
            let start = t * stride;
            let mut best = start;
            for i in start + 1..start + kernel {
                if row[i] > row[best] {
                    best = i;
                }
            }
            grad[ch * n + best] += grad_out.data()[ch * t_out + t];
        }
    }
    Ok(Tensor::from_parts(vec![c, n], grad).with_layout(Layout::Ct))
}

/// Per-channel max over all spatial positions.
///
/// `C x H x W` gives a length-`C` vector; `T x C x H x W` gives `C x T`.
pub fn spatial_maxpool_global<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let (t, c, plane) = match input.shape()[..] {
        [c, h, w] => (1, c, h * w),
        [t, c, h, w] => (t, c, h * w),
        _ => return Err(Error::shape("rank 3 or 4", shape_str(input.shape()))),
    };
    let data = input.data();
    let mut out = vec![S::zero(); c * t];
    for ti in 0..t {
        for ch in 0..c {
            let start = (ti * c + ch) * plane;
            let p = &data[start..start + plane];
            out[ch * t + ti] = p[1..].iter().copied().fold(p[0], S::max_keep);
        }
    }
    if input.rank() == 3 {
        Ok(Tensor::from_parts(vec![c], out))
    } else {
        Ok(Tensor::from_parts(vec![c, t], out).with_layout(Layout::Ct))
    }
}

/// Gradient of [`spatial_maxpool_global`] with first-maximum routing.
pub fn spatial_maxpool_global_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    let (t, c, plane) = match input.shape()[..] {
        [c, h, w] => (1, c, h * w),
        [t, c, h, w] => (t, c, h * w),
        _ => return Err(Error::shape("rank 3 or 4", shape_str(input.shape()))),
    };
    if grad_out.len() != c * t {
        return Err(Error::shape(format!("{} gradient values", c * t), shape_str(grad_out.shape())));
    }
    let data = input.data();
    let mut grad = vec![S::zero(); input.len()];
    for ti in 0..t {
        for ch in 0..c {
            let start = (ti * c + ch) * plane;
            let mut best = start;
            for i in start + 1..start + plane {
                if data[i] > data[best] {
                    best = i;
                }
            }
            grad[best] += grad_out.data()[ch * t + ti];
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), grad))
}

fn common_chw<S: Scalar, T: Borrow<Tensor<S>>>(frames: &[T]) -> Result<(usize, usize, usize)> {
    let first = frames.first().ok_or_else(|| Error::shape("non-empty frame list", "empty list"))?.borrow();
    let dims = first.dims3()?;
    for (k, f) in frames.iter().enumerate() {
        if f.borrow().shape() != first.shape() {
            return Err(Error::shape(
                shape_str(first.shape()),
                format!("frame {k} has {}", shape_str(f.borrow().shape())),
            ));
        }
    }
    Ok(dims)
}

/// Concatenates CHW frames along the channel axis; frame `k` occupies
/// channels `[k*C, (k+1)*C)`.
pub fn stack_channels<S: Scalar, T: Borrow<Tensor<S>>>(frames: &[T]) -> Result<Tensor<S>> {
    let (c, h, w) = common_chw(frames)?;
    let mut data = Vec::with_capacity(frames.len() * c * h * w);
    for f in frames {
        data.extend_from_slice(f.borrow().data());
    }
    Ok(Tensor::from_parts(vec![frames.len() * c, h, w], data))
}

/// Stacks CHW frames into a `T x C x H x W` tensor.
pub fn stack_time<S: Scalar, T: Borrow<Tensor<S>>>(frames: &[T]) -> Result<Tensor<S>> {
    let (c, h, w) = common_chw(frames)?;
    let mut data = Vec::with_capacity(frames.len() * c * h * w);
    for f in frames {
        data.extend_from_slice(f.borrow().data());
    }
    Ok(Tensor::from_parts(vec![frames.len(), c, h, w], data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t3(c: usize, h: usize, w: usize, v: &[f32]) -> Tensor<f32> {
        Tensor::new(&[c, h, w], v.to_vec()).unwrap()
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen::<f32>()).unwrap()
    }

    /// Max over a (2r+1)^2 replicate-edge neighborhood, written as plain loops.
    fn loop_max(t: &Tensor<f32>, r: isize) -> Tensor<f32> {
        let (c, h, w) = t.dims3().unwrap();
        Tensor::from_fn(&[c, h, w], |i| {
            let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
            let mut m = f32::NEG_INFINITY;
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    m = m.max(t.at(&[ch, yy, xx]));
                }
            }
            m
        })
        .unwrap()
    }

    #[test]
    fn maxpool_hand_example() {
        let t = t3(1, 3, 3, &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let out = maxpool2d_3x3(&t).unwrap();
        assert_eq!(out.data(), &[5., 6., 6., 8., 9., 9., 8., 9., 9.]);
    }

    #[test]
    fn maxpool_constant_and_degenerate_sizes() {
        let t = Tensor::full(&[2, 4, 5], 0.3f32).unwrap();
        assert!(maxpool2d_3x3(&t).unwrap().bits_eq(&t));
        let one = t3(1, 1, 1, &[0.7]);
        assert!(maxpool2d_3x3(&one).unwrap().bits_eq(&one));
        let col = t3(1, 3, 1, &[1., 3., 2.]);
        assert_eq!(maxpool2d_3x3(&col).unwrap().data(), &[3., 3., 3.]);
    }

    #[test]
    fn maxpool_wrong_rank_names_shapes() {
        let t = Tensor::<f32>::zeros(&[4, 4]).unwrap();
        let err = maxpool2d_3x3(&t).unwrap_err().to_string();
        assert!(err.contains("rank 3"), "{err}");
        assert!(err.contains("[4x4]"), "{err}");
    }

    #[test]
    fn maxpool_matches_loop_oracle() {
        let t = random(&[1, 16, 16], 7);
        assert!(maxpool2d_3x3(&t).unwrap().bits_eq(&loop_max(&t, 1)));
    }

    #[test]
    fn maxpool_twice_is_5x5_max() {
        for seed in 0..20 {
            let t = random(&[1, 8, 8], seed);
            let twice = maxpool2d_3x3(&maxpool2d_3x3(&t).unwrap()).unwrap();
            assert!(twice.bits_eq(&loop_max(&t, 2)));
        }
    }

    #[test]
    fn maxpool_translation_equivariant_on_interior() {
        let (h, w) = (12, 12);
        let t = random(&[1, h, w], 3);
        let shifted = Tensor::from_fn(&[1, h, w], |i| {
            let (y, x) = (i / w, i % w);
            t.at(&[0, y, x.saturating_sub(1)])
        })
        .unwrap();
        let a = maxpool2d_3x3(&t).unwrap();
        let b = maxpool2d_3x3(&shifted).unwrap();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                assert_eq!(b.at(&[0, y, x]).to_bits(), a.at(&[0, y, x - 1]).to_bits());
            }
        }
    }

    #[test]
    fn subtract_examples() {
        let a = Tensor::new(&[2], vec![1.0f32, 2.0]).unwrap();
        let b = Tensor::new(&[2], vec![0.5f32, 3.0]).unwrap();
        assert_eq!(subtract(&a, &b).unwrap().data(), &[0.5, -1.0]);
        assert!(subtract(&a, &a).unwrap().data().iter().all(|&v| v == 0.0));
        let c = Tensor::<f32>::zeros(&[3]).unwrap();
        assert!(matches!(subtract(&a, &c), Err(Error::Shape { .. })));
    }

    #[test]
    fn dilation_dominates_identity() {
        let f = random(&[3, 9, 7], 11);
        let r = subtract(&maxpool2d_3x3(&f).unwrap(), &f).unwrap();
        assert!(r.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn temporal_pool_examples() {
        let t = Tensor::new(&[1, 4], vec![1.0f32, 3., 2., 5.]).unwrap();
        assert_eq!(temporal_maxpool1d(&t, 2, 2).unwrap().data(), &[3., 5.]);
        assert!(temporal_maxpool1d(&t, 1, 1).unwrap().bits_eq(&t));
        assert!(matches!(temporal_maxpool1d(&t, 5, 1), Err(Error::Size(_))));
    }

    #[test]
    fn temporal_pool_matches_window_oracle() {
        let t = random(&[4, 8], 5).reshape(&[4, 8]).unwrap();
        for (k, s) in [(2, 2), (3, 1), (3, 2), (8, 1)] {
            let out = temporal_maxpool1d(&t, k, s).unwrap();
            let t_out = (8 - k) / s + 1;
            assert_eq!(out.shape(), &[4, t_out]);
            for c in 0..4 {
                for j in 0..t_out {
                    let mut m = f32::NEG_INFINITY;
                    for i in j * s..j * s + k {
                        m = m.max(t.at(&[c, i]));
                    }
                    assert_eq!(out.at(&[c, j]), m);
                }
            }
        }
    }

    #[test]
    fn spatial_global_examples() {
        let t = t3(1, 2, 2, &[1., 7., 3., 2.]);
        assert_eq!(spatial_maxpool_global(&t).unwrap().data(), &[7.]);
        let c = Tensor::full(&[3, 2, 2], 0.25f32).unwrap();
        assert_eq!(spatial_maxpool_global(&c).unwrap().data(), &[0.25; 3]);
        let flat = Tensor::<f32>::zeros(&[4, 4]).unwrap();
        assert!(matches!(spatial_maxpool_global(&flat), Err(Error::Shape { .. })));
    }

    #[test]
    fn spatial_global_matches_loop_oracle() {
        let t = random(&[3, 4, 5, 5], 9);
        let out = spatial_maxpool_global(&t).unwrap();
        assert_eq!(out.shape(), &[4, 3]);
        for ti in 0..3 {
            for c in 0..4 {
                let mut m = f32::NEG_INFINITY;
                for y in 0..5 {
                    for x in 0..5 {
                        m = m.max(t.at(&[ti, c, y, x]));
                    }
                }
                assert_eq!(out.at(&[c, ti]), m);
            }
        }
    }

    #[test]
    fn stack_channels_blocks() {
        let frames: Vec<Tensor<f32>> = (0..4).map(|k| random(&[3, 5, 6], k)).collect();
        let s = stack_channels(&frames).unwrap();
        assert_eq!(s.shape(), &[12, 5, 6]);
        for (k, f) in frames.iter().enumerate() {
            assert_eq!(&s.data()[k * 90..(k + 1) * 90], f.data());
        }
        let single = stack_channels(&frames[..1]).unwrap();
        assert!(single.bits_eq(&frames[0]));
    }

    #[test]
    fn stack_channels_rejects_mixed_shapes() {
        let a = random(&[3, 4, 4], 0);
        let b = random(&[3, 4, 5], 1);
        assert!(matches!(stack_channels(&[&a, &b]), Err(Error::Shape { .. })));
        let empty: [&Tensor<f32>; 0] = [];
        assert!(stack_channels(&empty).is_err());
    }

    #[test]
    fn pooling_is_deterministic() {
        let t = random(&[2, 10, 10], 4);
        let a = maxpool2d_3x3(&t).unwrap();
        let b = maxpool2d_3x3(&t).unwrap();
        assert!(a.bits_eq(&b));
    }
}
