//! Synthetic moving-object clips.
//!
//! Each clip shows one textured object (square or disc) sliding over a
//! static, slightly noisy background in one of four directions. Motion wraps
//! around the frame edges and the start position is uniform, so every single
//! frame has the same distribution whatever the direction: direction can
//! only be read from how frames change.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Tensor;
use crate::video_io::VideoClip;

pub const CLIP_FRAMES: usize = 40;
pub const FRAME_SIZE: usize = 64;
pub const N_CLASSES: usize = 8;
const OBJECT_HALF: i64 = 8;
const SPEED: i64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    /// Per-frame displacement `(dx, dy)` in pixels.
    pub fn velocity(self) -> (i64, i64) {
        match self {
            Direction::Up => (0, -SPEED),
            Direction::Down => (0, SPEED),
            Direction::Left => (-SPEED, 0),
            Direction::Right => (SPEED, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Disc,
}

/// Which label a classifier is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSet {
    /// Four motion directions.
    Direction,
    /// Direction x shape, eight classes.
    Full,
}

impl LabelSet {
    pub fn n_classes(self) -> usize {
        match self {
            LabelSet::Direction => 4,
            LabelSet::Full => N_CLASSES,
        }
    }

    pub fn label(self, spec: &ClipSpec) -> usize {
        let dir = Direction::ALL.iter().position(|&d| d == spec.direction).expect("known direction");
        match self {
            LabelSet::Direction => dir,
            LabelSet::Full => dir + 4 * (spec.shape == Shape::Disc) as usize,
        }
    }
}

/// Everything needed to render one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSpec {
    pub direction: Direction,
    pub shape: Shape,
    /// Object center in frame 0, `(x, y)`.
    pub start: (i64, i64),
    pub seed: u64,
}

impl ClipSpec {
    /// Object center at frame `t`, wrapped into the frame.
    pub fn center(&self, t: usize) -> (i64, i64) {
        let (dx, dy) = self.direction.velocity();
        let n = FRAME_SIZE as i64;
        ((self.start.0 + dx * t as i64).rem_euclid(n), (self.start.1 + dy * t as i64).rem_euclid(n))
    }

    /// Whether pixel `(x, y)` is inside the object at frame `t`, along with
    /// the object-local offset.
    pub fn covers(&self, t: usize, x: usize, y: usize) -> Option<(i64, i64)> {
        let (cx, cy) = self.center(t);
        let n = FRAME_SIZE as i64;
        let wrap = |d: i64| (d + n / 2).rem_euclid(n) - n / 2;
        let (ox, oy) = (wrap(x as i64 - cx), wrap(y as i64 - cy));
        let inside = match self.shape {
            Shape::Square => ox.abs() < OBJECT_HALF && oy.abs() < OBJECT_HALF,
            Shape::Disc => ox * ox + oy * oy < OBJECT_HALF * OBJECT_HALF,
        };
        inside.then_some((ox, oy))
    }

    pub fn render(&self) -> Result<VideoClip> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = FRAME_SIZE;
        let bg: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.05..0.35));
        let bg_noise: Vec<f32> = (0..3 * n * n).map(|_| rng.gen_range(-0.03..0.03)).collect();
        let fg: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.55..0.9));
        let side = 2 * OBJECT_HALF as usize;
        let texture: Vec<f32> = (0..3 * side * side).map(|_| rng.gen_range(-0.08..0.08)).collect();
        let frames = (0..CLIP_FRAMES)
            .map(|t| {
                let mut data = vec![0.0f32; 3 * n * n];
                for y in 0..n {
                    for x in 0..n {
                        let obj = self.covers(t, x, y);
                        for c in 0..3 {
                            data[c * n * n + y * n + x] = match obj {
                                Some((ox, oy)) => {
                                    let tx = (ox + OBJECT_HALF) as usize;
                                    let ty = (oy + OBJECT_HALF) as usize;
                                    fg[c] + texture[c * side * side + ty * side + tx]
                                }
                                None => bg[c] + bg_noise[c * n * n + y * n + x],
                            };
                        }
                    }
                }
                Tensor::new(&[3, n, n], data)
            })
            .collect::<Result<Vec<_>>>()?;
        VideoClip::new(frames, None, format!("synthetic:{}", self.seed))
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

/// Deterministic, class-balanced synthetic clips rendered on demand.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub train_clips: usize,
    pub val_clips: usize,
}

const TRAIN_SPLIT: u64 = 1;
const VAL_SPLIT: u64 = 2;

impl SyntheticDataset {
    pub fn new(seed: u64, train_clips: usize, val_clips: usize) -> Self {
        Self { seed, train_clips, val_clips }
    }

    fn spec(&self, split: u64, index: usize) -> ClipSpec {
        let class = index % N_CLASSES;
        let seed = derive_seed(self.seed, &[split, index as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = FRAME_SIZE as i64;
        ClipSpec {
            direction: Direction::ALL[class % 4],
            shape: if class < 4 { Shape::Square } else { Shape::Disc },
            start: (rng.gen_range(0..n), rng.gen_range(0..n)),
            seed: rng.gen(),
        }
    }

    pub fn train_spec(&self, index: usize) -> ClipSpec {
        self.spec(TRAIN_SPLIT, index)
    }

    pub fn val_spec(&self, index: usize) -> ClipSpec {
        self.spec(VAL_SPLIT, index)
    }
}
