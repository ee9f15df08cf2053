//! Dense Horn–Schunck optical flow, the iterative comparator for the
//! throughput benchmark.
//!
//! Intensities are expected on a 0–255 scale; the default smoothness weight
//! `alpha = 15` is tuned for that range.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Layout, Tensor};

pub const DEFAULT_ALPHA: f64 = 15.0;
pub const DEFAULT_ITERS: usize = 100;

#[derive(Clone, Debug)]
pub struct FlowField<S> {
    /// Horizontal displacement in pixels, `H x W`.
    pub u: Tensor<S>,
    /// Vertical displacement in pixels, `H x W`.
    pub v: Tensor<S>,
}

impl<S: Scalar> FlowField<S> {
    /// Per-pixel displacement magnitude, for visualization.
    pub fn magnitude(&self) -> Tensor<S> {
        let data = self.u.data().iter().zip(self.v.data()).map(|(&a, &b)| (a * a + b * b).sqrt()).collect();
        Tensor::from_parts(self.u.shape().to_vec(), data).with_layout(Layout::Hw)
    }
}

/// Rec. 601 luma of a `3 x H x W` frame, scaled to 0–255.
pub fn luma_255<S: Scalar>(frame: &Tensor<S>) -> Result<Tensor<S>> {
    let (c, h, w) = frame.dims3()?;
    if c != 3 {
        return Err(Error::shape("3 channels", shape_str(frame.shape())));
    }
    let (r, g, b) = (frame.channel(0), frame.channel(1), frame.channel(2));
    let (kr, kg, kb, scale) = (S::of(0.299), S::of(0.587), S::of(0.114), S::of(255.0));
    let data = (0..h * w).map(|i| (kr * r[i] + kg * g[i] + kb * b[i]) * scale).collect();
    Ok(Tensor::from_parts(vec![h, w], data).with_layout(Layout::Hw))
}

/// Image derivatives: spatial central differences of the mean of both
/// frames (replicated edges) and the temporal difference.
fn gradients<S: Scalar>(prev: &[S], next: &[S], h: usize, w: usize) -> (Vec<S>, Vec<S>, Vec<S>) {
    let half = S::of(0.5);
    let avg: Vec<S> = prev.iter().zip(next).map(|(&a, &b)| (a + b) * half).collect();
    let mut ix = vec![S::zero(); h * w];
    let mut iy = vec![S::zero(); h * w];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            ix[y * w + x] = (avg[y * w + xp] - avg[y * w + xm]) * half;
            iy[y * w + x] = (avg[yp * w + x] - avg[ym * w + x]) * half;
        }
    }
    let it = prev.iter().zip(next).map(|(&a, &b)| b - a).collect();
    (ix, iy, it)
}

/// Mean of the 4-neighborhood with replicated edges.
fn neighbor_mean<S: Scalar>(f: &[S], h: usize, w: usize, out: &mut [S]) {
    let quarter = S::of(0.25);
    for y in 0..h {
        let up = y.saturating_sub(1) * w;
        let down = (y + 1).min(h - 1) * w;
        let row = y * w;
        for x in 0..w {
            let left = f[row + x.saturating_sub(1)];
            let right = f[row + (x + 1).min(w - 1)];
            out[row + x] = (left + right + f[up + x] + f[down + x]) * quarter;
        }
    }
}

fn check_pair<S: Scalar>(prev: &Tensor<S>, next: &Tensor<S>) -> Result<(usize, usize)> {
    let (h, w) = prev.dims2()?;
    if next.shape() != prev.shape() {
        return Err(Error::shape(shape_str(prev.shape()), shape_str(next.shape())));
    }
    Ok((h, w))
}

/// Runs `iters` Jacobi sweeps of Horn–Schunck starting from zero flow.
pub fn horn_schunck<S: Scalar>(prev: &Tensor<S>, next: &Tensor<S>, alpha: f64, iters: usize) -> Result<FlowField<S>> {
    horn_schunck_observed(prev, next, alpha, iters, |_, _, _| {})
}

/// As [`horn_schunck`], calling `observe(iteration, u, v)` after each sweep.
pub fn horn_schunck_observed<S: Scalar>(
    prev: &Tensor<S>,
    next: &Tensor<S>,
    alpha: f64,
    iters: usize,
    mut observe: impl FnMut(usize, &[S], &[S]),
) -> Result<FlowField<S>> {
    let (h, w) = check_pair(prev, next)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    let (ix, iy, it) = gradients(prev.data(), next.data(), h, w);
    let a2 = S::of(alpha * alpha);
    let denom: Vec<S> = ix.iter().zip(&iy).map(|(&gx, &gy)| a2 + gx * gx + gy * gy).collect();
    let n = h * w;
    let (mut u, mut v) = (vec![S::zero(); n], vec![S::zero(); n]);
    let (mut ub, mut vb) = (vec![S::zero(); n], vec![S::zero(); n]);
    for k in 0..iters {
        neighbor_mean(&u, h, w, &mut ub);
        neighbor_mean(&v, h, w, &mut vb);
        for i in 0..n {
            let t = (ix[i] * ub[i] + iy[i] * vb[i] + it[i]) / denom[i];
            u[i] = ub[i] - ix[i] * t;
            v[i] = vb[i] - iy[i] * t;
        }
        observe(k, &u, &v);
    }
    if u.iter().chain(&v).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("flow diverged".into()));
    }
    Ok(FlowField {
        u: Tensor::from_parts(vec![h, w], u).with_layout(Layout::Hw),
        v: Tensor::from_parts(vec![h, w], v).with_layout(Layout::Hw),
    })
}

/// Discrete objective minimized by the Jacobi sweeps:
/// `sum (Ix u + Iy v + It)^2 + alpha^2 / 4 * sum over neighbor pairs of
/// (du^2 + dv^2)`.
pub fn horn_schunck_energy<S: Scalar>(prev: &Tensor<S>, next: &Tensor<S>, alpha: f64, u: &[S], v: &[S]) -> Result<f64> {
    let (h, w) = check_pair(prev, next)?;
    let (ix, iy, it) = gradients(prev.data(), next.data(), h, w);
    let mut data = 0.0;
    for i in 0..h * w {
        let r = ix[i].wide() * u[i].wide() + iy[i].wide() * v[i].wide() + it[i].wide();
        data += r * r;
    }
    let mut smooth = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for j in [(x + 1 < w).then(|| i + 1), (y + 1 < h).then(|| i + w)].into_iter().flatten() {
                let du = u[i].wide() - u[j].wide();
                let dv = v[i].wide() - v[j].wide();
                smooth += du * du + dv * dv;
            }
        }
    }
    Ok(data + alpha * alpha / 4.0 * smooth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize, shift: usize) -> Tensor<f64> {
        Tensor::from_fn(&[h, w], |i| 4.0 * (i % w).saturating_sub(shift) as f64).unwrap()
    }

    #[test]
    fn identical_frames_stay_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = Tensor::from_fn(&[16, 16], |_| rng.gen_range(0.0..255.0f32)).unwrap();
        let mut max_seen = 0.0f32;
        let flow = horn_schunck_observed(&f, &f, DEFAULT_ALPHA, 30, |_, u, v| {
            for x in u.iter().chain(v) {
                max_seen = max_seen.max(x.abs());
            }
        })
        .unwrap();
        assert_eq!(max_seen, 0.0);
        assert!(flow.u.data().iter().chain(flow.v.data()).all(|&x| x == 0.0));
    }

    #[test]
    fn zero_iterations_is_zero_flow() {
        let flow = horn_schunck(&ramp(8, 8, 0), &ramp(8, 8, 1), DEFAULT_ALPHA, 0).unwrap();
        assert!(flow.u.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unit_shift_of_ramp() {
        let flow = horn_schunck(&ramp(32, 64, 0), &ramp(32, 64, 1), DEFAULT_ALPHA, DEFAULT_ITERS).unwrap();
        let n = flow.u.len() as f64;
        let mu: f64 = flow.u.data().iter().sum::<f64>() / n;
        let mv: f64 = flow.v.data().iter().sum::<f64>() / n;
        assert!((0.5..=1.5).contains(&mu), "mean u = {mu}");
        assert!((-0.2..=0.2).contains(&mv), "mean v = {mv}");
    }

    #[test]
    fn energy_non_increasing_on_smooth_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let (fx, fy, px, py) =
                (rng.gen_range(0.1..0.4), rng.gen_range(0.1..0.4), rng.gen_range(0.0..6.0), rng.gen_range(0.0..6.0));
            let (dx, dy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let img = |ox: f64, oy: f64| {
                Tensor::from_fn(&[24, 24], |i| {
                    let (y, x) = ((i / 24) as f64 - oy, (i % 24) as f64 - ox);
                    127.5 + 100.0 * (fx * x + px).sin() * (fy * y + py).cos()
                })
                .unwrap()
            };
            let (a, b) = (img(0.0, 0.0), img(dx, dy));
            let mut energies = vec![horn_schunck_energy(&a, &b, DEFAULT_ALPHA, &[0.0; 576], &[0.0; 576]).unwrap()];
            horn_schunck_observed(&a, &b, DEFAULT_ALPHA, 20, |_, u, v| {
                energies.push(horn_schunck_energy(&a, &b, DEFAULT_ALPHA, u, v).unwrap());
            })
            .unwrap();
            for pair in energies.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-6 * pair[0].max(1.0), "{} -> {}", pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let a = ramp(8, 8, 0).cast::<f32>();
        let b = ramp(8, 8, 1).cast::<f32>();
        let f1 = horn_schunck(&a, &b, DEFAULT_ALPHA, 10).unwrap();
        let f2 = horn_schunck(&a, &b, DEFAULT_ALPHA, 10).unwrap();
        assert!(f1.u.bits_eq(&f2.u) && f1.v.bits_eq(&f2.v));
        let c = Tensor::<f32>::zeros(&[8, 9]).unwrap();
        assert!(matches!(horn_schunck(&a, &c, DEFAULT_ALPHA, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn luma_of_white_is_255() {
        let f = Tensor::full(&[3, 2, 2], 1.0f64).unwrap();
        for &v in luma_255(&f).unwrap().data() {
            assert!((v - 255.0).abs() < 1e-9);
        }
    }
}
