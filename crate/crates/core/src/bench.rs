//! Throughput comparison of motion representations over consecutive frame
//! pairs. Timing covers only the per-pair computation; frames are already
//! decoded and resident in memory.

use std::fmt;
use std::fs;
use std::hint::black_box;
use std::path::Path;
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{horn_schunck, luma_255, DEFAULT_ALPHA, DEFAULT_ITERS};
use crate::motion::{motion_enhance, rgbdiff, MeConfig};
use crate::tensor::Tensor;
use crate::video_io::VideoClip;

pub const WARMUP_REPEATS: usize = 2;
pub const MIN_REPEATS: usize = 5;
pub const MIN_FRAMES: usize = 50;
/// `fps_mad / fps_median` above this marks a report as noisy.
pub const STABILITY_LIMIT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Me,
    Rgbdiff,
    HornSchunck,
    /// Clones the next frame; an upper bound for every real method.
    Copy,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Me, Method::Rgbdiff, Method::HornSchunck, Method::Copy];

    pub fn name(self) -> &'static str {
        match self {
            Method::Me => "me",
            Method::Rgbdiff => "rgbdiff",
            Method::HornSchunck => "horn_schunck",
            Method::Copy => "copy",
        }
    }

    fn run_pair(self, prev: &Tensor<f32>, next: &Tensor<f32>, me: &MeConfig<f32>) -> Result<()> {
        match self {
            Method::Me => {
                black_box(motion_enhance(&[prev, next], me)?);
            }
            Method::Rgbdiff => {
                black_box(rgbdiff(&[prev, next])?);
            }
            Method::HornSchunck => {
                let (a, b) = (luma_255(prev)?, luma_255(next)?);
                black_box(horn_schunck(&a, &b, DEFAULT_ALPHA, DEFAULT_ITERS)?);
            }
            Method::Copy => {
                black_box(next.clone());
            }
        }
        Ok(())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::Config(format!("unknown bench method '{s}' (expected me, rgbdiff, horn_schunck or copy)"))
        })
    }
}

/// Where and how a benchmark ran.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvRecord {
    pub cpu_model: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub build_profile: String,
}

impl EnvRecord {
    pub fn capture() -> Self {
        let cpu_model = fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split_once(':'))
                    .map(|(_, v)| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let build_profile = if cfg!(debug_assertions) { "debug" } else { "release" }.into();
        Self { cpu_model, timestamp, build_profile }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub method: Method,
    /// `(H, W)`
    pub resolution: (usize, usize),
    pub frames_processed: usize,
    /// One entry per timed repeat, warmup excluded.
    pub wall_seconds: Vec<f64>,
    pub fps_median: f64,
    pub fps_mad: f64,
    pub threads: usize,
    pub env: EnvRecord,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

impl BenchReport {
    /// Builds a report from raw repeat timings.
    pub fn from_timings(
        method: Method,
        resolution: (usize, usize),
        frames_processed: usize,
        wall_seconds: Vec<f64>,
        env: EnvRecord,
    ) -> Self {
        let fps_median = frames_processed as f64 / median(&wall_seconds);
        let deviations: Vec<f64> =
            wall_seconds.iter().map(|&s| (frames_processed as f64 / s - fps_median).abs()).collect();
        Self {
            method,
            resolution,
            frames_processed,
            fps_mad: median(&deviations),
            fps_median,
            wall_seconds,
            threads: 1,
            env,
        }
    }

    pub fn is_stable(&self) -> bool {
        self.fps_mad <= STABILITY_LIMIT * self.fps_median
    }

    pub fn resolution_str(&self) -> String {
        format!("{}x{}", self.resolution.0, self.resolution.1)
    }
}

/// Times each method over every consecutive frame pair of `clip`, serially.
/// Two warmup passes per method are discarded.
pub fn run_bench(methods: &[Method], clip: &VideoClip, repeats: usize) -> Result<Vec<BenchReport>> {
    if methods.is_empty() {
        return Err(Error::Config("no bench methods selected".into()));
    }
    if repeats < MIN_REPEATS {
        return Err(Error::Config(format!("need at least {MIN_REPEATS} repeats, got {repeats}")));
    }
    if clip.len() < MIN_FRAMES {
        return Err(Error::InsufficientFrames { needed: MIN_FRAMES, available: clip.len() });
    }
    let env = EnvRecord::capture();
    let frames = clip.frames();
    let me = MeConfig::identity();
    let pairs = frames.len() - 1;
    methods
        .iter()
        .map(|&method| {
            let mut times = Vec::with_capacity(repeats);
            for r in 0..WARMUP_REPEATS + repeats {
                let start = Instant::now();
                for p in frames.windows(2) {
                    method.run_pair(&p[0], &p[1], &me)?;
                }
                let secs = start.elapsed().as_secs_f64();
                if r >= WARMUP_REPEATS {
                    times.push(secs.max(f64::MIN_POSITIVE));
                }
            }
            Ok(BenchReport::from_timings(method, clip.dims(), pairs, times, env.clone()))
        })
        .collect()
}

/// `fps(a) / fps(b)` when both methods are present.
pub fn fps_ratio(reports: &[BenchReport], a: Method, b: Method) -> Option<f64> {
    let find = |m| reports.iter().find(|r| r.method == m).map(|r| r.fps_median);
    Some(find(a)? / find(b)?)
}

/// One human-readable line per run.
pub fn summary_line(reports: &[BenchReport]) -> String {
    let mut parts: Vec<String> = reports
        .iter()
        .map(|r| {
            let flag = if r.is_stable() { "" } else { " (noisy)" };
            format!("{} {:.1} fps{flag}", r.method, r.fps_median)
        })
        .collect();
    if let Some(ratio) = fps_ratio(reports, Method::Me, Method::HornSchunck) {
        parts.push(format!("me/horn_schunck {ratio:.1}x"));
    }
    parts.join(" | ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            _ => Err(Error::Config(format!("unknown report format '{s}'"))),
        }
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: String,
    pub resolution: String,
    pub frames: usize,
    pub fps_median: f64,
    pub fps_mad: f64,
    pub threads: usize,
}

impl From<&BenchReport> for CsvRow {
    fn from(r: &BenchReport) -> Self {
        Self {
            method: r.method.name().into(),
            resolution: r.resolution_str(),
            frames: r.frames_processed,
            fps_median: r.fps_median,
            fps_mad: r.fps_mad,
            threads: r.threads,
        }
    }
}

pub fn render_csv(reports: &[BenchReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(CsvRow::from(r)).map_err(|e| Error::Config(format!("csv encoding failed: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad bench csv: {e}")))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Horizontal bar chart of `fps_median` on a log10 axis.
pub fn render_svg(reports: &[BenchReport]) -> String {
    const LEFT: f64 = 140.0;
    const BAR_W: f64 = 440.0;
    const ROW: f64 = 28.0;
    let logs: Vec<f64> = reports.iter().map(|r| r.fps_median.max(1e-3).log10()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min).min(0.0).floor();
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).ceil().max(lo + 1.0);
    let height = 40.0 + ROW * reports.len() as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        LEFT + BAR_W + 120.0
    );
    out += &format!("<text x=\"{LEFT}\" y=\"16\">fps (median, log10 scale, 10^{lo} to 10^{hi})</text>\n");
    for (i, (r, &l)) in reports.iter().zip(&logs).enumerate() {
        let y = 28.0 + ROW * i as f64;
        let w = BAR_W * (l - lo) / (hi - lo);
        out += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{} {}</text>\n",
            LEFT - 6.0,
            y + 14.0,
            escape(r.method.name()),
            r.resolution_str()
        );
        out += &format!(
            "<rect class=\"bar\" x=\"{LEFT}\" y=\"{y}\" width=\"{w:.2}\" height=\"{}\" fill=\"#4a7ab5\"/>\n",
            ROW - 8.0
        );
        out += &format!("<text x=\"{:.2}\" y=\"{}\">{:.1}</text>\n", LEFT + w + 6.0, y + 14.0, r.fps_median);
    }
    out += "</svg>\n";
    out
}

pub fn emit_report(reports: &[BenchReport], path: &Path, format: ReportFormat) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to emit".into()));
    }
    let body = match format {
        ReportFormat::Csv => render_csv(reports)?,
        ReportFormat::Svg => render_svg(reports),
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// A translating sinusoid pattern, one pixel per frame; content does not
/// affect any method's cost.
pub fn synthetic_clip(h: usize, w: usize, frames: usize) -> Result<VideoClip> {
    let frames = (0..frames)
        .map(|t| {
            Tensor::from_fn(&[3, h, w], |i| {
                let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
                let phase = (x + t) as f32 * 0.21 + y as f32 * 0.13 + c as f32;
                0.5 + 0.4 * phase.sin()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames, None, format!("synthetic {h}x{w}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> EnvRecord {
        EnvRecord { cpu_model: "test".into(), timestamp: 0, build_profile: "debug".into() }
    }

    #[test]
    fn median_and_mad() {
        let r = BenchReport::from_timings(Method::Me, (4, 4), 10, vec![1.0, 2.0, 0.5, 1.0, 4.0], env());
        assert_eq!(r.fps_median, 10.0);
        // fps = [10, 5, 20, 10, 2.5] -> |dev| = [0, 5, 10, 0, 7.5]
        assert_eq!(r.fps_mad, 5.0);
        assert!(!r.is_stable());
        let r = BenchReport::from_timings(Method::Me, (4, 4), 10, vec![1.0, 2.0, 4.0, 5.0], env());
        assert_eq!(r.fps_median, 10.0 / 3.0);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("horn_schunck".parse::<Method>().unwrap(), Method::HornSchunck);
        assert!(matches!("tvl1".parse::<Method>(), Err(Error::Config(_))));
    }

    #[test]
    fn preconditions() {
        let short = synthetic_clip(4, 4, 10).unwrap();
        assert!(matches!(run_bench(&[Method::Me], &short, 5), Err(Error::InsufficientFrames { .. })));
        let clip = synthetic_clip(4, 4, 50).unwrap();
        assert!(matches!(run_bench(&[Method::Me], &clip, 4), Err(Error::Config(_))));
        assert!(matches!(run_bench(&[], &clip, 5), Err(Error::Config(_))));
    }

    #[test]
    fn copy_bounds_real_methods() {
        let clip = synthetic_clip(32, 32, 51).unwrap();
        let reports = run_bench(&[Method::Copy, Method::Me, Method::HornSchunck], &clip, 5).unwrap();
        assert!(reports.iter().all(|r| r.frames_processed == 50 && r.wall_seconds.len() == 5));
        assert!(reports[0].fps_median >= reports[2].fps_median);
        assert!(reports[1].fps_median >= reports[2].fps_median);
    }

    #[test]
    fn csv_round_trip_full_precision() {
        let reports = vec![
            BenchReport::from_timings(Method::Me, (224, 224), 100, vec![0.1234567891011, 0.2, 0.3, 0.4, 0.5], env()),
            BenchReport::from_timings(Method::HornSchunck, (112, 112), 100, vec![3.0, 1.0 / 3.0, 7.0, 1.1, 2.2], env()),
        ];
        let text = render_csv(&reports).unwrap();
        assert!(text.starts_with("method,resolution,frames,fps_median,fps_mad,threads\n"));
        let rows = parse_csv(&text).unwrap();
        let expect: Vec<CsvRow> = reports.iter().map(CsvRow::from).collect();
        assert_eq!(rows, expect);
        assert_eq!(render_csv(&reports[..1]).unwrap().lines().count(), 2);
    }

    #[test]
    fn svg_has_one_bar_per_report() {
        let reports: Vec<BenchReport> = Method::ALL
            .iter()
            .enumerate()
            .map(|(i, &m)| BenchReport::from_timings(m, (8, 8), 50, vec![0.01 * (i + 1) as f64; 5], env()))
            .collect();
        let svg = render_svg(&reports);
        assert_eq!(svg.matches("<rect class=\"bar\"").count(), 4);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn emit_reports_io_errors() {
        let r = vec![BenchReport::from_timings(Method::Me, (8, 8), 50, vec![1.0; 5], env())];
        let missing = Path::new("/nonexistent-dir/x/report.csv");
        assert!(matches!(emit_report(&r, missing, ReportFormat::Csv), Err(Error::Io { .. })));
        assert!(matches!(emit_report(&[], missing, ReportFormat::Csv), Err(Error::Config(_))));
    }
}
