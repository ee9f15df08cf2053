//! Sparse segment sampling: split a clip into `N` contiguous windows and pick
//! a burst of consecutive frames from each.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::stack_channels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::video_io::VideoClip;

/// Motion branch: 16 segments of 5 frames (4 residual steps).
pub const MOTION_SEGMENTS: usize = 16;
pub const MOTION_SPAN: usize = 5;
/// Appearance branch: 8 segments of 5 stacked frames.
pub const APPEARANCE_SEGMENTS: usize = 8;
pub const APPEARANCE_SPAN: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// Random start inside each window, drawn from a seeded generator.
    Train { seed: u64 },
    /// Start centered in each window.
    Eval,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub n: usize,
    pub span: usize,
    pub starts: Vec<usize>,
    pub mode: String,
    pub seed: Option<u64>,
}

impl SegmentPlan {
    pub fn sample_mode(&self) -> SampleMode {
        match self.seed {
            Some(seed) if self.mode == "train" => SampleMode::Train { seed },
            _ => SampleMode::Eval,
        }
    }

    /// Frame indices covered by segment `k`.
    pub fn indices(&self, k: usize) -> std::ops::Range<usize> {
        self.starts[k]..self.starts[k] + self.span
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }
}

/// `[start, end)` of window `k` when `total` frames are split into `n`
/// windows; the last window takes the remainder.
pub fn window(total: usize, n: usize, k: usize) -> (usize, usize) {
    let len = total / n;
    let start = k * len;
    let end = if k + 1 == n { total } else { start + len };
    (start, end)
}

pub fn plan_segments(total: usize, n: usize, span: usize, mode: SampleMode) -> Result<SegmentPlan> {
    if n == 0 || span == 0 {
        return Err(Error::Config("segment count and span must be positive".into()));
    }
    if total < span {
        return Err(Error::InsufficientFrames { needed: span, available: total });
    }
    let mut rng = match mode {
        SampleMode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        SampleMode::Eval => None,
    };
    let latest = total - span;
    let starts = (0..n)
        .map(|k| {
            let (ws, we) = window(total, n, k);
            if we - ws < span {
                return ws.min(latest);
            }
            match rng.as_mut() {
                Some(rng) => rng.gen_range(ws..=we - span),
                None => ws + (we - ws - span) / 2,
            }
        })
        .collect();
    let (mode, seed) = match mode {
        SampleMode::Train { seed } => ("train", Some(seed)),
        SampleMode::Eval => ("eval", None),
    };
    Ok(SegmentPlan { n, span, starts, mode: mode.into(), seed })
}

/// Borrows the planned frames of `clip`, one burst per segment.
pub fn gather<'a>(clip: &'a VideoClip, plan: &SegmentPlan) -> Result<Vec<Vec<&'a Tensor<f32>>>> {
    if plan.starts.len() != plan.n {
        return Err(Error::Index(format!("plan lists {} starts for {} segments", plan.starts.len(), plan.n)));
    }
    let frames = clip.frames();
    (0..plan.n)
        .map(|k| {
            let r = plan.indices(k);
            if r.end > frames.len() {
                return Err(Error::Index(format!(
                    "segment {k} needs frames {}..{} but the clip has {}",
                    r.start,
                    r.end,
                    frames.len()
                )));
            }
            Ok(frames[r].iter().collect())
        })
        .collect()
}

/// Stacks consecutive RGB frames along channels (RGB-Super input).
pub fn rgb_super<S: Scalar, T: std::borrow::Borrow<Tensor<S>>>(frames: &[T]) -> Result<Tensor<S>> {
    stack_channels(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Hand oracle for eval placement.
    fn eval_oracle(total: usize, n: usize, span: usize) -> Vec<usize> {
        let len = total / n;
        (0..n)
            .map(|k| {
                let ws = k * len;
                let wl = if k == n - 1 { total - ws } else { len };
                ws + (wl - span) / 2
            })
            .collect()
    }

    #[test]
    fn eval_plan_example() {
        let plan = plan_segments(100, 8, 5, SampleMode::Eval).unwrap();
        assert_eq!(plan.starts, vec![3, 15, 27, 39, 51, 63, 75, 89]);
        assert_eq!(plan.starts, eval_oracle(100, 8, 5));
    }

    #[test]
    fn single_placement() {
        for mode in [SampleMode::Eval, SampleMode::Train { seed: 9 }] {
            assert_eq!(plan_segments(5, 1, 5, mode).unwrap().starts, vec![0]);
        }
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(matches!(
            plan_segments(4, 1, 5, SampleMode::Eval),
            Err(Error::InsufficientFrames { needed: 5, available: 4 })
        ));
    }

    #[test]
    fn seeded_plans_repeat() {
        let a = plan_segments(300, 16, 5, SampleMode::Train { seed: 42 }).unwrap();
        let b = plan_segments(300, 16, 5, SampleMode::Train { seed: 42 }).unwrap();
        assert_eq!(a, b);
        let c = plan_segments(300, 16, 5, SampleMode::Train { seed: 43 }).unwrap();
        assert_ne!(a.starts, c.starts);
    }

    #[test]
    fn json_shape() {
        let plan = plan_segments(20, 2, 3, SampleMode::Train { seed: 1 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&plan.to_json()).unwrap();
        assert_eq!(v["n"], 2);
        assert_eq!(v["span"], 3);
        assert_eq!(v["mode"], "train");
        assert_eq!(v["seed"], 1);
        let eval = plan_segments(20, 2, 3, SampleMode::Eval).unwrap();
        let v: serde_json::Value = serde_json::from_str(&eval.to_json()).unwrap();
        assert!(v["seed"].is_null());
        let back: SegmentPlan = serde_json::from_str(&plan.to_json()).unwrap();
        assert_eq!(back.sample_mode(), SampleMode::Train { seed: 1 });
    }

    fn clip(n: usize) -> VideoClip {
        let frames = (0..n).map(|k| Tensor::full(&[3, 2, 2], k as f32 / n as f32).unwrap()).collect();
        VideoClip::new(frames, None, "t").unwrap()
    }

    #[test]
    fn gather_examples() {
        let c = clip(2);
        let plan = SegmentPlan { n: 1, span: 2, starts: vec![0], mode: "eval".into(), seed: None };
        let g = gather(&c, &plan).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g[0][0].bits_eq(&c.frames()[0]) && g[0][1].bits_eq(&c.frames()[1]));

        let bad = SegmentPlan { n: 1, span: 3, starts: vec![0], mode: "eval".into(), seed: None };
        assert!(matches!(gather(&c, &bad), Err(Error::Index(_))));
    }

    #[test]
    fn two_segments_are_disjoint() {
        // windows [0,10) and [10,20); span 3 bursts cannot overlap
        let c = clip(20);
        for mode in [SampleMode::Eval, SampleMode::Train { seed: 3 }] {
            let plan = plan_segments(20, 2, 3, mode).unwrap();
            let a: Vec<usize> = plan.indices(0).collect();
            let b: Vec<usize> = plan.indices(1).collect();
            assert!(a.iter().all(|i| !b.contains(i)));
            assert!(a.iter().all(|&i| i < 10) && b.iter().all(|&i| i >= 10));
            let g = gather(&c, &plan).unwrap();
            for (k, burst) in g.iter().enumerate() {
                for (j, f) in burst.iter().enumerate() {
                    assert!(f.bits_eq(&c.frames()[plan.starts[k] + j]));
                }
            }
        }
    }

    #[test]
    fn rgb_super_stacks_five_frames() {
        let frames: Vec<Tensor<f32>> = (0..5).map(|k| Tensor::full(&[3, 224, 224], k as f32 * 0.1).unwrap()).collect();
        let s = rgb_super(&frames).unwrap();
        assert_eq!(s.shape(), &[15, 224, 224]);
        assert_eq!(s.at(&[3 * 4, 0, 0]), 0.4);
        assert!(rgb_super(&frames[..1]).unwrap().bits_eq(&frames[0]));
    }

    proptest! {
        #[test]
        fn plans_are_valid(total in 1usize..400, n in 1usize..20, span in 1usize..8, seed in any::<u64>()) {
            prop_assume!(total >= span);
            for mode in [SampleMode::Eval, SampleMode::Train { seed }] {
                let plan = plan_segments(total, n, span, mode).unwrap();
                prop_assert_eq!(plan.starts.len(), n);
                for k in 0..n {
                    prop_assert!(plan.starts[k] + span <= total);
                    if k > 0 {
                        prop_assert!(plan.starts[k] >= plan.starts[k - 1]);
                    }
                }
            }
        }

        #[test]
        fn eval_windows_tile_the_clip(total in 1usize..400, n in 1usize..20) {
            prop_assume!(total >= n);
            let mut next = 0;
            for k in 0..n {
                let (s, e) = window(total, n, k);
                prop_assert_eq!(s, next);
                prop_assert!(e > s);
                next = e;
            }
            prop_assert_eq!(next, total);
        }
    }
}
