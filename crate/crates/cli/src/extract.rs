use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use motionforge::motion::{displacement_search_oracle, enhance_pair, motion_enhance, rgbdiff, MeConfig};
use motionforge::sampler::{gather, plan_segments, SampleMode, MOTION_SEGMENTS, MOTION_SPAN};
use motionforge::video_io::{center_crop, load_image_sequence, resize_bilinear, VideoClip};
use motionforge::{mtf, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractMethod {
    Me,
    Rgbdiff,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Centered start in each window
    Eval,
    /// Seeded random start in each window
    Train,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct ExtractArgs {
    /// Directory of frame images (PNG or PPM); optional with --oracle
    #[arg(long, value_name = "DIR")]
    pub input: Option<PathBuf>,

    /// Glob for frame files inside the input directory, sorted by name
    #[arg(long, default_value = "*.png")]
    pub pattern: String,

    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "features")]
    pub out: PathBuf,

    /// Number of segments
    #[arg(long, default_value_t = MOTION_SEGMENTS)]
    pub segments: usize,

    /// Consecutive frames per segment
    #[arg(long, default_value_t = MOTION_SPAN)]
    pub span: usize,

    /// Motion representation
    #[arg(long, value_enum, default_value_t = ExtractMethod::Me)]
    pub method: ExtractMethod,

    /// Segment start placement
    #[arg(long, value_enum, default_value_t = Sampling::Eval)]
    pub sampling: Sampling,

    /// Seed for train sampling and oracle trials
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Resize so the short side has this many pixels
    #[arg(long, value_name = "PX")]
    pub resize: Option<usize>,

    /// Center-crop to a square of this size, after resizing
    #[arg(long, value_name = "PX")]
    pub crop: Option<usize>,

    /// Check every extracted pair and --oracle-trials random pairs against
    /// the brute-force displacement search; exit 4 on any mismatch
    #[arg(long)]
    pub oracle: bool,

    /// Random frame pairs for --oracle (1x1x1 up to 3x64x64)
    #[arg(long, default_value_t = 1000)]
    pub oracle_trials: usize,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    segment: usize,
    frames: Vec<usize>,
    method: ExtractMethod,
    shape: &'a [usize],
    source: &'a str,
}

pub(crate) fn load_clip(dir: &Path, pattern: &str, resize: Option<usize>, crop: Option<usize>) -> CliResult<VideoClip> {
    if !dir.is_dir() {
        return Err(CliError::Io(format!("input directory {} does not exist", dir.display())));
    }
    let mut clip = load_image_sequence(dir, pattern)?;
    if let Some(side) = resize {
        clip = resize_bilinear(&clip, side)?;
    }
    if let Some(size) = crop {
        clip = center_crop(&clip, size)?;
    }
    Ok(clip)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Whether the maxpool residual and the brute-force search agree bitwise.
fn oracle_agrees(prev: &Tensor<f32>, next: &Tensor<f32>) -> CliResult<bool> {
    Ok(enhance_pair(prev, next)?.bits_eq(&displacement_search_oracle(next, prev)?))
}

fn random_pair(rng: &mut ChaCha8Rng) -> CliResult<(Tensor<f32>, Tensor<f32>)> {
    let shape = [rng.gen_range(1..=3), rng.gen_range(1..=64), rng.gen_range(1..=64)];
    // half the trials draw from a few levels so ties are common
    let levels = rng.gen_bool(0.5).then(|| rng.gen_range(2..=4));
    let mut frame = || {
        Tensor::from_fn(&shape, |_| match levels {
            Some(l) => rng.gen_range(0..l) as f32 / l as f32,
            None => rng.gen::<f32>(),
        })
    };
    Ok((frame()?, frame()?))
}

pub fn run(a: ExtractArgs) -> CliResult<()> {
    if a.input.is_none() && !a.oracle {
        return Err(CliError::Config("--input is required unless --oracle is given".into()));
    }
    let (mut checked, mut mismatches) = (0usize, 0usize);
    if let Some(dir) = &a.input {
        let clip = load_clip(dir, &a.pattern, a.resize, a.crop)?;
        let mode = match a.sampling {
            Sampling::Eval => SampleMode::Eval,
            Sampling::Train => SampleMode::Train { seed: a.seed },
        };
        let plan = plan_segments(clip.len(), a.segments, a.span, mode)?;
        fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
        write_json(&a.out.join("plan.json"), &plan)?;
        for (k, frames) in gather(&clip, &plan)?.iter().enumerate() {
            let t = match a.method {
                ExtractMethod::Me => motion_enhance(frames, &MeConfig::identity())?.tensor,
                ExtractMethod::Rgbdiff => rgbdiff(frames)?,
            };
            mtf::write(&a.out.join(format!("seg_{k:03}.mtf")), &t)?;
            let sidecar = Sidecar {
                segment: k,
                frames: plan.indices(k).collect(),
                method: a.method,
                shape: t.shape(),
                source: &clip.source,
            };
            write_json(&a.out.join(format!("seg_{k:03}.json")), &sidecar)?;
            if a.oracle {
                for p in frames.windows(2) {
                    checked += 1;
                    mismatches += !oracle_agrees(p[0], p[1])? as usize;
                }
            }
        }
        println!("wrote {} segments to {}", plan.n, a.out.display());
    }
    if a.oracle {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        for _ in 0..a.oracle_trials {
            let (prev, next) = random_pair(&mut rng)?;
            checked += 1;
            mismatches += !oracle_agrees(&prev, &next)? as usize;
        }
        println!("oracle: {checked} pairs checked, {mismatches} mismatches");
        if mismatches > 0 {
            return Err(CliError::Verify(format!("{mismatches} of {checked} pairs differ from the oracle")));
        }
    }
    Ok(())
}
