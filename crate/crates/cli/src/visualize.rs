use std::fs;
use std::path::PathBuf;

use clap::Args;
use motionforge::motion::{enhance_pair, rgbdiff};
use motionforge::video_io::{export_heatmap_png, export_rgb_png};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult};
use crate::extract::load_clip;

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct VisualizeArgs {
    /// Directory of frame images (PNG or PPM)
    #[arg(long, value_name = "DIR")]
    pub input: Option<PathBuf>,

    /// Glob for frame files inside the input directory, sorted by name
    #[arg(long, default_value = "*.png")]
    pub pattern: String,

    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "viz")]
    pub out: PathBuf,

    /// Comma-separated indices k of the frame pairs (k, k+1) to render
    #[arg(long, default_value = "0")]
    pub pairs: String,

    /// Resize so the short side has this many pixels
    #[arg(long, value_name = "PX")]
    pub resize: Option<usize>,

    /// Center-crop to a square of this size, after resizing
    #[arg(long, value_name = "PX")]
    pub crop: Option<usize>,
}

fn parse_pairs(s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| CliError::Config(format!("bad pair index '{p}' in --pairs"))))
        .collect()
}

/// Writes `pair_KKKK_{frame,rgbdiff,me}.png` for each requested pair.
pub fn run(a: VisualizeArgs) -> CliResult<()> {
    let dir = a.input.as_ref().ok_or_else(|| CliError::Config("--input is required".into()))?;
    let pairs = parse_pairs(&a.pairs)?;
    let clip = load_clip(dir, &a.pattern, a.resize, a.crop)?;
    if let Some(&k) = pairs.iter().find(|&&k| k + 1 >= clip.len()) {
        return Err(CliError::Config(format!("pair {k} needs frame {} but the clip has {}", k + 1, clip.len())));
    }
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let frames = clip.frames();
    for &k in &pairs {
        let (prev, next) = (&frames[k], &frames[k + 1]);
        export_rgb_png(prev, &a.out.join(format!("pair_{k:04}_frame.png")))?;
        export_heatmap_png(&rgbdiff(&[prev, next])?, &a.out.join(format!("pair_{k:04}_rgbdiff.png")))?;
        export_heatmap_png(&enhance_pair(prev, next)?, &a.out.join(format!("pair_{k:04}_me.png")))?;
    }
    println!("wrote {} images to {}", 3 * pairs.len(), a.out.display());
    Ok(())
}
