use std::path::PathBuf;

use clap::Args;
use motionforge::bench::{emit_report, fps_ratio, run_bench, summary_line, synthetic_clip, Method, ReportFormat};
use motionforge::video_io::VideoClip;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::extract::load_clip;

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Comma-separated methods: me, rgbdiff, horn_schunck, copy
    #[arg(long, default_value = "me,rgbdiff,horn_schunck")]
    pub methods: String,

    /// Frame side in pixels (frames are square)
    #[arg(long, default_value_t = 224)]
    pub size: usize,

    /// Frame pairs per repeat
    #[arg(long, default_value_t = 100)]
    pub frames: usize,

    /// Timed repeats per method (at least 5; two warmup runs are extra)
    #[arg(long, default_value_t = 7)]
    pub repeats: usize,

    /// CSV report path
    #[arg(long, value_name = "FILE", default_value = "bench.csv")]
    pub out: PathBuf,

    /// Also write a log-scale bar chart here
    #[arg(long, value_name = "FILE")]
    pub svg: Option<PathBuf>,

    /// Exit 4 when fps(me) / fps(horn_schunck) falls below this
    #[arg(long, value_name = "RATIO")]
    pub gate_ratio: Option<f64>,

    /// Benchmark these frames (resized and center-cropped to --size)
    /// instead of a synthetic pattern
    #[arg(long, value_name = "DIR")]
    pub input: Option<PathBuf>,

    /// Glob for frame files inside the input directory
    #[arg(long, default_value = "*.png")]
    pub pattern: String,
}

fn parse_methods(s: &str) -> CliResult<Vec<Method>> {
    let methods = s.split(',').map(|m| m.trim().parse::<Method>()).collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Config("no methods given".into()));
    }
    Ok(methods)
}

fn bench_clip(a: &BenchArgs) -> CliResult<VideoClip> {
    let Some(dir) = &a.input else {
        return Ok(synthetic_clip(a.size, a.size, a.frames + 1)?);
    };
    let clip = load_clip(dir, &a.pattern, Some(a.size), Some(a.size))?;
    if clip.len() < a.frames + 1 {
        return Err(CliError::Config(format!(
            "{} frame pairs requested but the input has {} frames",
            a.frames,
            clip.len()
        )));
    }
    Ok(VideoClip::new(clip.frames()[..a.frames + 1].to_vec(), clip.fps, clip.source.clone())?)
}

pub fn run(a: BenchArgs) -> CliResult<()> {
    let methods = parse_methods(&a.methods)?;
    if a.gate_ratio.is_some() && !(methods.contains(&Method::Me) && methods.contains(&Method::HornSchunck)) {
        return Err(CliError::Config("--gate-ratio needs both me and horn_schunck".into()));
    }
    let clip = bench_clip(&a)?;
    let reports = run_bench(&methods, &clip, a.repeats)?;
    emit_report(&reports, &a.out, ReportFormat::Csv)?;
    if let Some(svg) = &a.svg {
        emit_report(&reports, svg, ReportFormat::Svg)?;
    }
    println!("{}", summary_line(&reports));
    for r in reports.iter().filter(|r| !r.is_stable()) {
        eprintln!("warning: {} timings are noisy (mad {:.1} vs median {:.1} fps)", r.method, r.fps_mad, r.fps_median);
    }
    if let Some(gate) = a.gate_ratio {
        let ratio = fps_ratio(&reports, Method::Me, Method::HornSchunck).expect("both methods ran");
        if ratio < gate {
            return Err(CliError::Verify(format!("me/horn_schunck ratio {ratio:.2} is below {gate}")));
        }
    }
    Ok(())
}
