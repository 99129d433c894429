mod config;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pushlearn::checkpoint::{checkpoint_load, checkpoint_save, Provenance};
use pushlearn::geometry::Planar2;
use pushlearn::metrics::{moving_average, nmse_summary};
use pushlearn::optim::SgdConfig;
use pushlearn::pipeline::{
    evaluate_baseline, evaluate_combined, load_dir, online_adapt, read_loss_curve, segments,
    train_offline_artifacts, write_loss_curve, write_summary, write_theta_history,
    write_training_curve, LossCurveRow, OfflineConfig, OnlineOptions, SummaryRow,
    ADAPTED_CHECKPOINT_FILE, LOSS_CURVE_FILE, OFFLINE_CHECKPOINT_FILE, SUMMARY_FILE, THETA_FILE,
    TRAINING_CURVE_FILE,
};
use pushlearn::simulator::{SceneConfig, SuiteSpec};

use config::ConfigFile;

/// Push prediction with online adaptation of the center of mass and friction.
///
/// Settings come from flags, then from `--config FILE` (lines of
/// `key = value`, keys named like the long flags), then built-in defaults.
#[derive(Parser, Debug)]
#[command(name = "pushlearn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate offline and online trajectory suites with manifests.
    Simulate(SimulateArgs),
    /// Pre-train the combined model and the network baseline on an offline suite.
    Train(TrainArgs),
    /// Stream an online suite through a trained checkpoint, adapting (v, h).
    Adapt(AdaptArgs),
    /// Score a checkpoint on a suite without adaptation.
    Eval(EvalArgs),
    /// Render loss-curve SVGs from a loss curve CSV.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key = value file; flags take precedence over its entries.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed for data generation and weight initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Offline box half extents as `XxY` pairs separated by commas; the online scene uses the first.
    #[arg(long)]
    boxes: Option<String>,
    /// Offline pushes per box size.
    #[arg(long)]
    offline_per_box: Option<usize>,
    /// Online pushes.
    #[arg(long)]
    online_scripts: Option<usize>,
    /// Recorded steps per push.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    robot_radius: Option<f64>,
    /// Robot travel per step, in meters.
    #[arg(long)]
    step_length: Option<f64>,
    /// Observation noise std on object position, in meters.
    #[arg(long)]
    noise_pos: Option<f64>,
    /// Observation noise std on object orientation, in radians.
    #[arg(long)]
    noise_rot: Option<f64>,
    /// Largest fraction of tangential contact motion lost to slip.
    #[arg(long)]
    slip: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    offline_v_x: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    offline_v_y: Option<f64>,
    #[arg(long)]
    offline_h: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    online_v_x: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    online_v_y: Option<f64>,
    #[arg(long)]
    online_h: Option<f64>,
    /// Push offsets as a fraction of the half side.
    #[arg(long)]
    offset_frac: Option<f64>,
    /// Largest approach angle off the face normal, in radians.
    #[arg(long)]
    max_angle: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Offline suite directory.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Prediction horizon in steps.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Keep the dataset order fixed across epochs.
    #[arg(long)]
    no_shuffle: bool,
    /// Also fit (v, h) offline instead of holding them at their initial value.
    #[arg(long)]
    train_online_params: bool,
    #[arg(long, allow_negative_numbers = true)]
    initial_v_x: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    initial_v_y: Option<f64>,
    #[arg(long)]
    initial_h: Option<f64>,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Online suite directory.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Experiment label in the summary table.
    #[arg(long)]
    name: Option<String>,
    /// Gradient-descent learning rate for (v, h).
    #[arg(long)]
    online_lr: Option<f64>,
    /// Gradient steps per incoming sample.
    #[arg(long)]
    steps_per_update: Option<usize>,
    /// Cap on the gradient norm of each online step.
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Restore the checkpoint's (v, h) at the start of every trajectory.
    #[arg(long)]
    reset_per_trajectory: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Suite directory to score.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[command(flatten)]
    common: Common,
    /// Loss curve CSV written by `adapt`.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Moving-average window, in steps.
    #[arg(long)]
    window: Option<usize>,
    /// Offline training loss, drawn as a reference line on the total plot.
    #[arg(long)]
    offline_loss: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn out_dir(cfg: &ConfigFile, common: &Common) -> Result<PathBuf> {
    let dir: PathBuf = cfg.require("out", common.out.clone())?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(path)
}

fn parse_boxes(text: &str) -> Result<Vec<Planar2>> {
    text.split(',')
        .map(|b| {
            let (x, y) = b
                .trim()
                .split_once('x')
                .with_context(|| format!("box `{b}` is not of the form XxY"))?;
            Ok(Planar2::new(
                x.trim().parse().with_context(|| format!("box `{b}`"))?,
                y.trim().parse().with_context(|| format!("box `{b}`"))?,
            ))
        })
        .collect()
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let d = SuiteSpec::default();
    let boxes = match cfg.get_opt::<String>("boxes", a.boxes)? {
        Some(text) => parse_boxes(&text)?,
        None => d.offline_boxes.clone(),
    };
    let base = SceneConfig {
        robot_radius: cfg.get("robot-radius", a.robot_radius, d.base.robot_radius)?,
        step_length: cfg.get("step-length", a.step_length, d.base.step_length)?,
        noise_std_pos: cfg.get("noise-pos", a.noise_pos, d.base.noise_std_pos)?,
        noise_std_rot: cfg.get("noise-rot", a.noise_rot, d.base.noise_std_rot)?,
        slip: cfg.get("slip", a.slip, d.base.slip)?,
        ..d.base.clone()
    };
    let spec = SuiteSpec {
        offline_boxes: boxes,
        offline_scripts_per_box: cfg.get(
            "offline-per-box",
            a.offline_per_box,
            d.offline_scripts_per_box,
        )?,
        online_scripts: cfg.get("online-scripts", a.online_scripts, d.online_scripts)?,
        steps_per_push: cfg.get("steps", a.steps, d.steps_per_push)?,
        offline_v: Planar2::new(
            cfg.get("offline-v-x", a.offline_v_x, d.offline_v.x)?,
            cfg.get("offline-v-y", a.offline_v_y, d.offline_v.y)?,
        ),
        offline_h: cfg.get("offline-h", a.offline_h, d.offline_h)?,
        online_v: Planar2::new(
            cfg.get("online-v-x", a.online_v_x, d.online_v.x)?,
            cfg.get("online-v-y", a.online_v_y, d.online_v.y)?,
        ),
        online_h: cfg.get("online-h", a.online_h, d.online_h)?,
        base,
        offset_frac: cfg.get("offset-frac", a.offset_frac, d.offset_frac)?,
        max_angle: cfg.get("max-angle", a.max_angle, d.max_angle)?,
        sides: d.sides.clone(),
    };
    let seed = cfg.get("seed", a.common.seed, 0)?;
    let out = out_dir(&cfg, &a.common)?;
    let (offline, online) = spec.generate(&out, seed)?;
    println!(
        "wrote {} offline and {} online trajectories to {}",
        offline.entries.len(),
        online.entries.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    offline: &'a OfflineConfig,
    horizon: usize,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let d = OfflineConfig::default();
    let shuffle = if a.no_shuffle {
        false
    } else {
        cfg.get("shuffle", None, d.shuffle)?
    };
    let config = OfflineConfig {
        epochs: cfg.get("epochs", a.epochs, d.epochs)?,
        batch_size: cfg.get("batch-size", a.batch_size, d.batch_size)?,
        lr: cfg.get("lr", a.lr, d.lr)?,
        seed: cfg.get("seed", a.common.seed, d.seed)?,
        shuffle,
        train_online_params_offline: cfg.switch(
            "train-online-params",
            a.train_online_params,
            false,
        )?,
        initial_v: Planar2::new(
            cfg.get("initial-v-x", a.initial_v_x, d.initial_v.x)?,
            cfg.get("initial-v-y", a.initial_v_y, d.initial_v.y)?,
        ),
        initial_h: cfg.get("initial-h", a.initial_h, d.initial_h)?,
    };
    if config.epochs == 0 {
        bail!("--epochs must be positive");
    }
    let horizon = cfg.get("horizon", a.horizon, 1)?;
    let data = existing(cfg.require("data", a.data)?, "data directory")?;
    let out = out_dir(&cfg, &a.common)?;

    let dataset = segments(&load_dir(&data)?, horizon)?.concat();
    let artifacts = train_offline_artifacts(&dataset, &config)?;
    let provenance = Provenance::for_config(
        &TrainRecord {
            offline: &config,
            horizon,
        },
        config.seed,
    );
    checkpoint_save(
        &out.join(OFFLINE_CHECKPOINT_FILE),
        &artifacts.checkpoint(provenance),
    )?;
    write_training_curve(
        &out.join(TRAINING_CURVE_FILE),
        &artifacts.combined_curve,
        &artifacts.nn_curve,
    )?;
    let l = artifacts.losses;
    println!(
        "trained on {} pairs: combined pos {:.6} rot {:.6} total {:.6}; nn pos {:.6} rot {:.6}",
        dataset.len(),
        l.combined_pos,
        l.combined_rot,
        l.combined_total,
        l.nn_pos,
        l.nn_rot
    );
    Ok(())
}

fn cmd_adapt(a: AdaptArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let d = SgdConfig::default();
    let options = OnlineOptions {
        sgd: SgdConfig {
            lr: cfg.get("online-lr", a.online_lr, d.lr)?,
            steps_per_update: cfg.get(
                "steps-per-update",
                a.steps_per_update,
                d.steps_per_update,
            )?,
            clip_norm: cfg.get_opt("clip-norm", a.clip_norm)?,
        },
        reset_per_trajectory: cfg.switch("reset-per-trajectory", a.reset_per_trajectory, false)?,
    };
    let horizon = cfg.get("horizon", a.horizon, 1)?;
    let name: String = cfg.get("name", a.name, "experiment".to_string())?;
    let ckpt_path = existing(cfg.require("checkpoint", a.checkpoint)?, "checkpoint")?;
    let data = existing(cfg.require("data", a.data)?, "data directory")?;
    let out = out_dir(&cfg, &a.common)?;

    let ckpt = checkpoint_load(&ckpt_path)?;
    let baseline = ckpt
        .baseline_nn()
        .context("checkpoint has no baseline network; produce it with `train`")?;
    let offline = ckpt
        .provenance
        .offline
        .context("checkpoint has no offline losses; produce it with `train`")?;
    let stream = segments(&load_dir(&data)?, horizon)?;
    let run = online_adapt(&ckpt.model, &baseline, &stream, &options)?;

    write_loss_curve(&out.join(LOSS_CURVE_FILE), &run)?;
    write_summary(
        &out.join(SUMMARY_FILE),
        &[SummaryRow::new(&name, &offline, &run)],
    )?;
    write_theta_history(&out.join(THETA_FILE), &run)?;
    let mut adapted = ckpt;
    adapted.model.online = run.final_online;
    checkpoint_save(&out.join(ADAPTED_CHECKPOINT_FILE), &adapted)?;
    println!(
        "{} steps: online {:.6} fixed {:.6} nn {:.6}; final v ({:.5}, {:.5}) h {:.5}",
        run.online.len(),
        run.online_summary.mean_total,
        run.fixed_summary.mean_total,
        run.nn_summary.mean_total,
        run.final_online.v.x,
        run.final_online.v.y,
        run.final_online.h()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let horizon = cfg.get("horizon", a.horizon, 1)?;
    let ckpt_path = existing(cfg.require("checkpoint", a.checkpoint)?, "checkpoint")?;
    let data = existing(cfg.require("data", a.data)?, "data directory")?;
    let ckpt = checkpoint_load(&ckpt_path)?;
    let pairs = segments(&load_dir(&data)?, horizon)?.concat();

    let mut rows = vec![("combined", evaluate_combined(&ckpt.model, &pairs)?)];
    if let Some(nn) = ckpt.baseline_nn() {
        rows.push(("nn", evaluate_baseline(&nn, &pairs)));
    }
    let mut table = String::from("model,pos,rot,total\n");
    for (name, losses) in &rows {
        let s = nmse_summary(losses)?;
        let total = losses.iter().map(|l| l.total).sum::<f64>() / losses.len() as f64;
        table += &format!("{name},{},{},{}\n", s.pos, s.rot, total);
    }
    print!("{table}");
    if let Some(out) = cfg.get_opt::<PathBuf>("out", a.common.out)? {
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let path = out.join("eval.csv");
        fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

const SERIES: [(&str, &str); 3] = [
    ("online", "#d62728"),
    ("fixed", "#1f77b4"),
    ("nn", "#2ca02c"),
];

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.common.config.as_deref())?;
    let input = existing(cfg.require("input", a.input)?, "loss curve")?;
    let window = cfg.get("window", a.window, 10)?;
    let reference = cfg.get_opt("offline-loss", a.offline_loss)?;
    let rows = read_loss_curve(&input)?;
    if rows.is_empty() {
        bail!("{} holds no loss rows", input.display());
    }
    let out = out_dir(&cfg, &a.common)?;

    type Pick = fn(&LossCurveRow) -> f64;
    let components: [(&str, Pick); 4] = [
        ("pos_x", |r| r.pos_x),
        ("pos_y", |r| r.pos_y),
        ("rot", |r| r.rot),
        ("total", |r| r.total),
    ];
    for (component, pick) in components {
        let mut series = Vec::new();
        for (model, color) in SERIES {
            let raw: Vec<f64> = rows.iter().filter(|r| r.model == model).map(pick).collect();
            if raw.is_empty() {
                continue;
            }
            series.push(svg::Series {
                name: model,
                color,
                values: moving_average(&raw, window)?,
            });
        }
        if series.is_empty() {
            bail!(
                "{} holds no rows for models online, fixed or nn",
                input.display()
            );
        }
        let title = format!("{component} loss ({window}-step moving average)");
        let text = svg::render(&svg::Plot {
            title: &title,
            y_label: component,
            series,
            reference: if component == "total" {
                reference
            } else {
                None
            },
        })?;
        write_file(&out.join(format!("{component}.svg")), &text)?;
    }
    println!("wrote plots to {}", out.display());
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
