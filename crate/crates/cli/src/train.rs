use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use motionforge::toynet::checkpoint;
use motionforge::toynet::data::LabelSet;
use motionforge::toynet::train::{evaluate, train, train_two_stream, validation_scores, EpochMetrics, TrainConfig};
use motionforge::toynet::{fuse, FusionConfig, Modality};
use motionforge::ToyNet32;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{io_err, CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Motion,
    Appearance,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Labels {
    /// Four motion directions
    Direction,
    /// Direction x shape, eight classes
    Full,
}

impl From<Labels> for LabelSet {
    fn from(l: Labels) -> Self {
        match l {
            Labels::Direction => LabelSet::Direction,
            Labels::Full => LabelSet::Full,
        }
    }
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Seed for data, initialization and sampling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Training epochs per branch
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,

    /// Which branch to train
    #[arg(long, value_enum, default_value_t = Branch::Both)]
    pub branch: Branch,

    /// Label set
    #[arg(long, value_enum, default_value_t = Labels::Full)]
    pub labels: Labels,

    /// Initialize the appearance stem from the motion branch (the freshly
    /// trained one with --branch both, else --motion-ckpt)
    #[arg(long)]
    pub transfer_init: bool,

    /// Motion checkpoint for --transfer-init with --branch appearance
    #[arg(long, value_name = "FILE")]
    pub motion_ckpt: Option<PathBuf>,

    /// Peak learning rate (cosine decay to zero)
    #[arg(long, default_value_t = 0.02)]
    pub lr: f64,

    /// Synthetic training clips
    #[arg(long, default_value_t = 320)]
    pub train_clips: usize,

    /// Synthetic validation clips
    #[arg(long, default_value_t = 128)]
    pub val_clips: usize,

    /// Output directory for checkpoints and metrics
    #[arg(long, value_name = "DIR", default_value = "toy-run")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Checkpoint written by train-toy (e.g. toy-run/motion.mtf)
    #[arg(long, value_name = "FILE")]
    pub ckpt: Option<PathBuf>,

    /// Second checkpoint of the other branch; also reports fused accuracy
    #[arg(long, value_name = "FILE")]
    pub fuse_with: Option<PathBuf>,

    /// Appearance weight for fusion
    #[arg(long, default_value_t = 1.0)]
    pub alpha_appearance: f64,

    /// Motion weight for fusion
    #[arg(long, default_value_t = 1.0)]
    pub alpha_motion: f64,
}

fn branch_config(a: &TrainArgs, modality: Modality) -> TrainConfig {
    let labels = a.labels.into();
    let mut cfg = match modality {
        Modality::Motion => TrainConfig::motion(labels),
        _ => TrainConfig::appearance(labels),
    };
    cfg.seed = a.seed;
    cfg.epochs = a.epochs;
    cfg.lr = a.lr;
    cfg.train_clips = a.train_clips;
    cfg.val_clips = a.val_clips;
    cfg
}

/// Training config stored beside a checkpoint, `<name>.train.json`.
fn config_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("train.json")
}

fn save_branch(out: &Path, name: &str, net: &ToyNet32, cfg: &TrainConfig) -> CliResult<()> {
    let path = out.join(format!("{name}.mtf"));
    checkpoint::save(net, &path)?;
    let cpath = config_path(&path);
    let text = serde_json::to_string_pretty(cfg).expect("config serializes");
    fs::write(&cpath, text + "\n").map_err(|e| io_err(&cpath, e))
}

pub fn run_train(a: TrainArgs) -> CliResult<()> {
    let source = match (a.transfer_init, a.branch, &a.motion_ckpt) {
        (true, Branch::Motion, _) => {
            return Err(CliError::Config("--transfer-init applies to the appearance branch".into()));
        }
        (true, Branch::Appearance, None) => {
            return Err(CliError::Config("--transfer-init with --branch appearance needs --motion-ckpt".into()));
        }
        (true, Branch::Appearance, Some(p)) => Some(checkpoint::load(p)?),
        _ => None,
    };
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let mut lines = String::new();
    let mut log = |m: &EpochMetrics| {
        let line = m.to_json_line();
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    };
    let motion_cfg = branch_config(&a, Modality::Motion);
    let app_cfg = branch_config(&a, Modality::Appearance);
    let mut summary = None;
    match a.branch {
        Branch::Motion => {
            let out = train(&motion_cfg, None, &mut log)?;
            save_branch(&a.out, "motion", &out.net, &motion_cfg)?;
        }
        Branch::Appearance => {
            let out = train(&app_cfg, source.as_ref(), &mut log)?;
            save_branch(&a.out, "appearance", &out.net, &app_cfg)?;
        }
        Branch::Both => {
            let out = train_two_stream(&motion_cfg, &app_cfg, a.transfer_init, &FusionConfig::default(), &mut log)?;
            save_branch(&a.out, "motion", &out.motion.net, &motion_cfg)?;
            save_branch(&a.out, "appearance", &out.appearance.net, &app_cfg)?;
            summary = Some(json!({
                "motion_acc": out.motion_acc,
                "appearance_acc": out.appearance_acc,
                "fused_acc": out.fused_acc,
            }));
        }
    }
    let mpath = a.out.join("metrics.jsonl");
    fs::write(&mpath, lines).map_err(|e| io_err(&mpath, e))?;
    if let Some(s) = summary {
        println!("{s}");
        let fpath = a.out.join("fusion.json");
        fs::write(&fpath, s.to_string() + "\n").map_err(|e| io_err(&fpath, e))?;
    }
    Ok(())
}

fn load_trained(ckpt: &Path) -> CliResult<(ToyNet32, TrainConfig)> {
    let net = checkpoint::load(ckpt)?;
    let cpath = config_path(ckpt);
    let text = fs::read_to_string(&cpath).map_err(|e| io_err(&cpath, e))?;
    let cfg: TrainConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", cpath.display())))?;
    if cfg.net_config() != net.config {
        return Err(CliError::Config(format!("{} does not describe {}", cpath.display(), ckpt.display())));
    }
    Ok((net, cfg))
}

pub fn run_eval(a: EvalArgs) -> CliResult<()> {
    let ckpt = a.ckpt.as_ref().ok_or_else(|| CliError::Config("--ckpt is required".into()))?;
    let (net, cfg) = load_trained(ckpt)?;
    let mut report = json!({
        "checkpoint": ckpt.display().to_string(),
        "branch": cfg.modality,
        "val_acc": evaluate(&net, &cfg)?,
    });
    if let Some(other) = &a.fuse_with {
        let (net2, cfg2) = load_trained(other)?;
        if cfg2.dataset() != cfg.dataset() || cfg2.labels != cfg.labels {
            return Err(CliError::Config("checkpoints were trained on different data".into()));
        }
        let ((app, app_cfg), (mot, mot_cfg)) = match (cfg.modality, cfg2.modality) {
            (Modality::Appearance, Modality::Motion) => ((&net, &cfg), (&net2, &cfg2)),
            (Modality::Motion, Modality::Appearance) => ((&net2, &cfg2), (&net, &cfg)),
            _ => return Err(CliError::Config("fusion needs one appearance and one motion checkpoint".into())),
        };
        let fusion = FusionConfig { appearance: a.alpha_appearance, motion: a.alpha_motion };
        let (sa, sm) = (validation_scores(app, app_cfg)?, validation_scores(mot, mot_cfg)?);
        let mut hits = 0;
        for ((s_a, label), (s_m, _)) in sa.iter().zip(&sm) {
            hits += (fuse(s_a, s_m, &fusion)?.1 == *label) as usize;
        }
        report["fused_acc"] = json!(hits as f64 / sa.len().max(1) as f64);
    }
    println!("{report}");
    Ok(())
}
