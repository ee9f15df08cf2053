use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use motionforge::bench::parse_csv;
use motionforge::motion::morphological_gradient;
use motionforge::video_io::{export_heatmap_png, export_rgb_png, load_frame};
use motionforge::{mtf, Tensor32};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_motionforge"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("MOTIONFORGE_")) {
        cmd.env_remove(k);
    }
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes `frames` PNGs rendered by `f(t)` into a fresh directory.
fn write_frames(n: usize, f: impl Fn(usize) -> Tensor32) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for t in 0..n {
        export_rgb_png(&f(t), &dir.path().join(format!("frame_{t:03}.png"))).unwrap();
    }
    dir
}

fn noise_frame(t: usize, size: usize) -> Tensor32 {
    Tensor32::from_fn(&[3, size, size], |i| (((i * 7919 + t * 104_729) % 251) as f32) / 250.0).unwrap()
}

/// Bright 16 px square on a flat background, moving right by 2 px a frame.
fn square_frame(t: usize) -> Tensor32 {
    let n = 64;
    Tensor32::from_fn(&[3, n, n], |i| {
        let (y, x) = ((i / n) % n, i % n);
        let x0 = 16 + 2 * t;
        if (24..40).contains(&y) && (x0..x0 + 16).contains(&x) {
            0.8
        } else {
            0.2
        }
    })
    .unwrap()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn help_matches_golden_files() {
    let cases: [(&str, &[&str]); 6] = [
        ("root", &["--help"]),
        ("extract", &["extract", "--help"]),
        ("visualize", &["visualize", "--help"]),
        ("bench", &["bench", "--help"]),
        ("train-toy", &["train-toy", "--help"]),
        ("eval", &["eval", "--help"]),
    ];
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for (name, args) in cases {
        let out = run(args);
        assert_eq!(code(&out), 0);
        let path = golden_dir().join(format!("{name}.txt"));
        if update {
            fs::create_dir_all(golden_dir()).unwrap();
            fs::write(&path, &out.stdout).unwrap();
            continue;
        }
        let want = fs::read_to_string(&path)
            .unwrap_or_else(|_| panic!("missing {}; rerun with UPDATE_GOLDEN=1", path.display()));
        assert_eq!(stdout(&out), want, "help for {name} changed; rerun with UPDATE_GOLDEN=1 if intended");
    }
}

#[test]
fn extract_writes_stacked_segments() {
    let frames = write_frames(10, |t| noise_frame(t, 64));
    let out = tempfile::tempdir().unwrap();
    let o = run(&["extract", "--input", p(frames.path()), "--out", p(out.path()), "--segments", "2", "--span", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for k in 0..2 {
        let t = mtf::read(&out.path().join(format!("seg_{k:03}.mtf"))).unwrap();
        assert_eq!(t.shape(), &[12, 64, 64]);
        let side: Value =
            serde_json::from_str(&fs::read_to_string(out.path().join(format!("seg_{k:03}.json"))).unwrap()).unwrap();
        assert_eq!(side["frames"].as_array().unwrap().len(), 5);
        assert_eq!(side["method"], "me");
    }
    assert!(!out.path().join("seg_002.mtf").exists());
    let plan: Value = serde_json::from_str(&fs::read_to_string(out.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["n"], 2);
}

#[test]
fn extract_rgbdiff_and_oracle_on_input() {
    let frames = write_frames(6, |t| noise_frame(t, 20));
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "extract",
        "--input",
        p(frames.path()),
        "--out",
        p(out.path()),
        "--segments",
        "1",
        "--span",
        "6",
        "--method",
        "rgbdiff",
        "--oracle",
        "--oracle-trials",
        "20",
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("oracle: 25 pairs checked, 0 mismatches"), "{}", stdout(&o));
    assert_eq!(mtf::read(&out.path().join("seg_000.mtf")).unwrap().shape(), &[15, 20, 20]);
}

#[test]
fn missing_input_directory_is_io_error() {
    let o = run(&["extract", "--input", "/nonexistent/frames"]);
    assert_eq!(code(&o), 3);
    assert_eq!(code(&run(&["visualize", "--input", "/nonexistent/frames"])), 3);
}

#[test]
fn too_few_frames_is_config_error() {
    let frames = write_frames(3, |t| noise_frame(t, 8));
    let out = tempfile::tempdir().unwrap();
    let o = run(&["extract", "--input", p(frames.path()), "--out", p(out.path()), "--segments", "2", "--span", "5"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bench_rejects_unknown_method() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let o = run(&["bench", "--methods", "me,farneback", "--out", p(&csv)]);
    assert_eq!(code(&o), 2);
    assert!(!csv.exists());
}

#[test]
fn bench_reports_and_gates() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, svg) = (dir.path().join("b.csv"), dir.path().join("b.svg"));
    let base = ["bench", "--size", "16", "--frames", "50", "--repeats", "5"];
    let mut args = base.to_vec();
    args.extend(["--out", p(&csv), "--svg", p(&svg), "--gate-ratio", "2"]);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("me/horn_schunck"));
    let rows = parse_csv(&fs::read_to_string(&csv).unwrap()).unwrap();
    let methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["me", "rgbdiff", "horn_schunck"]);
    assert!(rows.iter().all(|r| r.resolution == "16x16" && r.frames == 50 && r.threads == 1));
    assert_eq!(fs::read_to_string(&svg).unwrap().matches("<rect class=\"bar\"").count(), 3);

    let mut args = base.to_vec();
    args.extend(["--out", p(&csv), "--gate-ratio", "1e12"]);
    assert_eq!(code(&run(&args)), 4);
    let mut args = base.to_vec();
    args.extend(["--methods", "me,rgbdiff", "--out", p(&csv), "--gate-ratio", "2"]);
    assert_eq!(code(&run(&args)), 2);
}

#[test]
fn visualize_writes_three_images_per_pair() {
    let frames = write_frames(4, |t| noise_frame(t, 16));
    let out = tempfile::tempdir().unwrap();
    let o = run(&["visualize", "--input", p(frames.path()), "--out", p(out.path()), "--pairs", "0,2"]);
    assert_eq!(code(&o), 0);
    for k in [0, 2] {
        for kind in ["frame", "rgbdiff", "me"] {
            assert!(out.path().join(format!("pair_{k:04}_{kind}.png")).exists());
        }
    }
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), 6);
    assert_eq!(code(&run(&["visualize", "--input", p(frames.path()), "--out", p(out.path()), "--pairs", "3"])), 2);
}

#[test]
fn static_scene_heatmap_is_the_morphological_gradient() {
    let frames = write_frames(2, |_| noise_frame(0, 32));
    let out = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["visualize", "--input", p(frames.path()), "--out", p(out.path())])), 0);
    let f = load_frame(&frames.path().join("frame_000.png")).unwrap();
    let want = out.path().join("expected.png");
    export_heatmap_png(&morphological_gradient(&f).unwrap(), &want).unwrap();
    assert_eq!(fs::read(out.path().join("pair_0000_me.png")).unwrap(), fs::read(want).unwrap());
}

#[test]
fn moving_square_heatmap_hugs_the_contour() {
    let frames = write_frames(2, square_frame);
    let out = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["visualize", "--input", p(frames.path()), "--out", p(out.path())])), 0);
    let heat = load_frame(&out.path().join("pair_0000_me.png")).unwrap();
    let n = 64;
    let plane = &heat.data()[..n * n];
    let mut nonzero: Vec<f32> = plane.iter().copied().filter(|&v| v > 0.0).collect();
    assert!(!nonzero.is_empty());
    nonzero.sort_by(f32::total_cmp);
    let cut = nonzero[nonzero.len() * 9 / 10];
    // distance to the square's outline in either frame
    let edge_dist = |x: usize, y: usize| {
        [16usize, 18]
            .iter()
            .map(|&x0| {
                let (x, y) = (x as i64, y as i64);
                let (l, r, t, b) = (x0 as i64, x0 as i64 + 15, 24, 39);
                let outside = (l - x).max(x - r).max(0).max((t - y).max(y - b).max(0));
                let inside = (x - l).min(r - x).min(y - t).min(b - y);
                outside.max(inside)
            })
            .min()
            .unwrap()
    };
    let top: Vec<(usize, usize)> = (0..n * n).filter(|&i| plane[i] >= cut).map(|i| (i % n, i / n)).collect();
    let near = top.iter().filter(|&&(x, y)| edge_dist(x, y) <= 2).count();
    assert!(near * 5 >= top.len() * 4, "{near} of {} top pixels near the contour", top.len());
}

fn last_metrics(path: &Path) -> Value {
    let text = fs::read_to_string(path).unwrap();
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

const SMOKE: [&str; 6] = ["--epochs", "2", "--train-clips", "16", "--val-clips", "16"];

#[test]
fn train_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train-toy", "--branch", "motion", "--labels", "direction", "--out", p(dir.path())];
    args.extend(SMOKE);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = dir.path().join("metrics.jsonl");
    assert_eq!(fs::read_to_string(&metrics).unwrap().lines().count(), 2);
    assert_eq!(stdout(&o), fs::read_to_string(&metrics).unwrap());
    let last = last_metrics(&metrics);
    assert_eq!(last["epoch"], 1);
    let ckpt = dir.path().join("motion.mtf");
    let e = run(&["eval", "--ckpt", p(&ckpt)]);
    assert_eq!(code(&e), 0);
    let report: Value = serde_json::from_str(stdout(&e).trim()).unwrap();
    assert_eq!(report["val_acc"], last["val_acc"]);
    assert_eq!(code(&run(&["eval"])), 2);
}

#[test]
fn two_stream_run_reports_fusion() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train-toy", "--out", p(dir.path()), "--transfer-init"];
    args.extend(SMOKE);
    assert_eq!(code(&run(&args)), 0);
    let fusion: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("fusion.json")).unwrap()).unwrap();
    let (m, a) = (dir.path().join("motion.mtf"), dir.path().join("appearance.mtf"));
    let e = run(&["eval", "--ckpt", p(&a), "--fuse-with", p(&m)]);
    assert_eq!(code(&e), 0);
    let report: Value = serde_json::from_str(stdout(&e).trim()).unwrap();
    assert_eq!(report["fused_acc"], fusion["fused_acc"]);
    assert_eq!(report["val_acc"], fusion["appearance_acc"]);
    assert_eq!(code(&run(&["eval", "--ckpt", p(&m), "--fuse-with", p(&m)])), 2);
}

#[test]
fn transfer_without_checkpoint_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train-toy", "--branch", "appearance", "--transfer-init", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--motion-ckpt"));
}

#[test]
fn appearance_branch_from_motion_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train-toy", "--branch", "motion", "--out", p(dir.path())];
    args.extend(SMOKE);
    assert_eq!(code(&run(&args)), 0);
    let ckpt = dir.path().join("motion.mtf");
    let mut args = vec![
        "train-toy",
        "--branch",
        "appearance",
        "--transfer-init",
        "--motion-ckpt",
        p(&ckpt),
        "--out",
        p(dir.path()),
    ];
    args.extend(["--epochs", "1", "--train-clips", "16", "--val-clips", "16"]);
    assert_eq!(code(&run(&args)), 0);
    assert!(dir.path().join("appearance.train.json").exists());
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn repeated_runs_are_byte_identical() {
    let frames = write_frames(12, |t| noise_frame(t, 24));
    let runs: Vec<(TempDir, TempDir)> = (0..2)
        .map(|_| {
            let (x, t) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
            let e = [
                "extract",
                "--input",
                p(frames.path()),
                "--out",
                p(x.path()),
                "--segments",
                "2",
                "--sampling",
                "train",
                "--seed",
                "5",
            ];
            assert_eq!(code(&run(&e)), 0);
            let mut tr = vec!["train-toy", "--branch", "motion", "--seed", "3", "--out", p(t.path())];
            tr.extend(SMOKE);
            assert_eq!(code(&run(&tr)), 0);
            (x, t)
        })
        .collect();
    assert_eq!(tree(runs[0].0.path()), tree(runs[1].0.path()));
    assert_eq!(tree(runs[0].1.path()), tree(runs[1].1.path()));
}

#[test]
fn config_file_flags_and_env_layer_in_order() {
    let frames = write_frames(12, |t| noise_frame(t, 8));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"extract.segments": 3, "extract.span": 2}"#).unwrap();
    let count = |out: &Path| {
        fs::read_dir(out)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "mtf"))
            .count()
    };
    let args = |out: &Path, extra: &[&str]| {
        let mut v: Vec<String> = ["--config", p(&cfg), "extract", "--input", p(frames.path()), "--out", p(out)]
            .iter()
            .map(|s| s.to_string())
            .collect();
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };

    let out = dir.path().join("a");
    let o = bin().args(args(&out, &[])).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(count(&out), 3);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("resolved config:") && stderr.contains("\"segments\":3"), "{stderr}");

    let out = dir.path().join("b");
    assert_eq!(code(&bin().args(args(&out, &["--segments", "2"])).output().unwrap()), 0);
    assert_eq!(count(&out), 2);

    let out = dir.path().join("c");
    let o = bin().args(args(&out, &["--segments", "2"])).env("MOTIONFORGE_EXTRACT_SEGMENTS", "4").output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(count(&out), 4);

    let o = bin().args(args(&dir.path().join("d"), &[])).env("MOTIONFORGE_EXTRACT_SEGMENTS", "many").output().unwrap();
    assert_eq!(code(&o), 2);
    let o = bin().args(args(&dir.path().join("d"), &[])).env("MOTIONFORGE_EXTRACT_COLOR", "1").output().unwrap();
    assert_eq!(code(&o), 2);

    fs::write(&cfg, r#"{"extract.segmnets": 3}"#).unwrap();
    assert_eq!(code(&bin().args(args(&dir.path().join("e"), &[])).output().unwrap()), 2);
    fs::write(&cfg, "not json").unwrap();
    assert_eq!(code(&bin().args(args(&dir.path().join("e"), &[])).output().unwrap()), 2);
    let missing = dir.path().join("missing.json");
    let o = bin().args(["--config", p(&missing), "extract", "--input", p(frames.path())]).output().unwrap();
    assert_eq!(code(&o), 3);
}
