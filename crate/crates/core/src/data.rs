//! Trajectory files, supervised pairs, normalization statistics and splits.
//!
//! The canonical on-disk format is JSON Lines with one step per line:
//!
//! ```text
//! {"traj_id":"a","t":0,"po_x":0.0,"po_y":0.0,"omega":0.0,"pr_x":0.0,"pr_y":-0.2,"ur_x":0.0,"ur_y":0.005}
//! ```
//!
//! Lines may also carry the optional string fields `object`, `surface`, `com`
//! and `side`; the first line of a trajectory that sets them wins. The CSV
//! adapter uses the fixed header
//! `traj_id,t,po_x,po_y,omega,pr_x,pr_y,ur_x,ur_y` and no metadata.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{outcome_to_object_frame, to_object_frame, ObjectPose, Planar2};
use crate::metrics::NormStats;
use crate::model::{PredictionOutcome, PushInput};

pub const CSV_HEADER: [&str; 9] = [
    "traj_id", "t", "po_x", "po_y", "omega", "pr_x", "pr_y", "ur_x", "ur_y",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: trajectory `{traj_id}` step t = {t} does not follow t = {prev}")]
    NonMonotonic {
        line: usize,
        traj_id: String,
        t: i64,
        prev: i64,
    },
    #[error("trajectory `{traj_id}` has {len} steps, need more than {needed}")]
    TooShort {
        traj_id: String,
        len: usize,
        needed: usize,
    },
    #[error("degenerate dataset: {0} has zero variance")]
    Degenerate(&'static str),
    #[error("need at least {needed} pairs to fit statistics, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryFormat {
    Jsonl,
    Csv,
}

impl TrajectoryFormat {
    /// Guesses the format from the file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => TrajectoryFormat::Csv,
            _ => TrajectoryFormat::Jsonl,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: i64,
    pub object_pose: ObjectPose,
    pub robot_pos: Planar2,
    /// Motion command applied between `t` and `t + 1`.
    pub robot_motion: Planar2,
}

/// Free-form experiment labels.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    #[serde(default)]
    pub object: String,
    #[serde(default)]
    pub surface: String,
    #[serde(default)]
    pub com: String,
    #[serde(default)]
    pub side: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub meta: TrajectoryMeta,
    pub steps: Vec<TrajectoryStep>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupervisedPair {
    pub x: PushInput,
    pub y: PredictionOutcome,
}

/// One line of the canonical JSONL format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StepRecord {
    traj_id: String,
    t: i64,
    po_x: f64,
    po_y: f64,
    omega: f64,
    pr_x: f64,
    pr_y: f64,
    ur_x: f64,
    ur_y: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    object: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    surface: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    com: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    side: String,
}

impl StepRecord {
    fn new(traj: &Trajectory, step: &TrajectoryStep, with_meta: bool) -> Self {
        let meta = if with_meta {
            traj.meta.clone()
        } else {
            TrajectoryMeta::default()
        };
        Self {
            traj_id: traj.id.clone(),
            t: step.t,
            po_x: step.object_pose.position.x,
            po_y: step.object_pose.position.y,
            omega: step.object_pose.orientation.0,
            pr_x: step.robot_pos.x,
            pr_y: step.robot_pos.y,
            ur_x: step.robot_motion.x,
            ur_y: step.robot_motion.y,
            object: meta.object,
            surface: meta.surface,
            com: meta.com,
            side: meta.side,
        }
    }

    fn step(&self) -> TrajectoryStep {
        TrajectoryStep {
            t: self.t,
            object_pose: ObjectPose::new(self.po_x, self.po_y, self.omega),
            robot_pos: Planar2::new(self.pr_x, self.pr_y),
            robot_motion: Planar2::new(self.ur_x, self.ur_y),
        }
    }

    fn meta(&self) -> TrajectoryMeta {
        TrajectoryMeta {
            object: self.object.clone(),
            surface: self.surface.clone(),
            com: self.com.clone(),
            side: self.side.clone(),
        }
    }

    fn check_finite(&self, line: usize) -> Result<(), DataError> {
        let vals = [
            self.po_x, self.po_y, self.omega, self.pr_x, self.pr_y, self.ur_x, self.ur_y,
        ];
        if vals.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(DataError::Parse {
                line,
                message: "non-finite value".into(),
            })
        }
    }
}

/// Collects records into trajectories, enforcing strictly increasing `t`.
#[derive(Default)]
struct Assembler {
    trajs: BTreeMap<String, Trajectory>,
}

impl Assembler {
    fn push(&mut self, rec: StepRecord, line: usize) -> Result<(), DataError> {
        rec.check_finite(line)?;
        let traj = self
            .trajs
            .entry(rec.traj_id.clone())
            .or_insert_with(|| Trajectory {
                id: rec.traj_id.clone(),
                meta: TrajectoryMeta::default(),
                steps: Vec::new(),
            });
        if let Some(prev) = traj.steps.last() {
            if rec.t <= prev.t {
                return Err(DataError::NonMonotonic {
                    line,
                    traj_id: rec.traj_id,
                    t: rec.t,
                    prev: prev.t,
                });
            }
        }
        if traj.meta == TrajectoryMeta::default() {
            traj.meta = rec.meta();
        }
        traj.steps.push(rec.step());
        Ok(())
    }

    fn finish(self) -> Result<Vec<Trajectory>, DataError> {
        let out: Vec<Trajectory> = self.trajs.into_values().collect();
        for t in &out {
            if t.steps.len() < 2 {
                return Err(DataError::TooShort {
                    traj_id: t.id.clone(),
                    len: t.steps.len(),
                    needed: 1,
                });
            }
        }
        Ok(out)
    }
}

const REQUIRED: [&str; 9] = CSV_HEADER;

fn parse_jsonl_line(text: &str, line: usize) -> Result<StepRecord, DataError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| DataError::Parse {
        line,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| DataError::Parse {
        line,
        message: "expected a JSON object".into(),
    })?;
    if let Some(field) = REQUIRED.iter().find(|f| !obj.contains_key(**f)) {
        return Err(DataError::MissingField { line, field });
    }
    serde_json::from_value(value).map_err(|e| DataError::Parse {
        line,
        message: e.to_string(),
    })
}

/// Loads trajectories, ordered by id, each with at least two steps.
pub fn load_trajectories(
    path: &Path,
    format: TrajectoryFormat,
) -> Result<Vec<Trajectory>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut asm = Assembler::default();
    match format {
        TrajectoryFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line_no = i + 1;
                let text = line.map_err(|e| DataError::io(path, e))?;
                if text.trim().is_empty() {
                    continue;
                }
                let rec = parse_jsonl_line(&text, line_no)?;
                asm.push(rec, line_no)?;
            }
        }
        TrajectoryFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_reader(file);
            let headers = reader
                .headers()
                .map_err(|e| DataError::Parse {
                    line: 1,
                    message: e.to_string(),
                })?
                .clone();
            if headers.is_empty() {
                return Ok(Vec::new());
            }
            for field in CSV_HEADER {
                if !headers.iter().any(|h| h == field) {
                    return Err(DataError::MissingField { line: 1, field });
                }
            }
            for row in reader.records() {
                let row = row.map_err(|e| DataError::Parse {
                    line: e.position().map_or(0, |p| p.line() as usize),
                    message: e.to_string(),
                })?;
                let line_no = row.position().map_or(0, |p| p.line() as usize);
                let rec: StepRecord =
                    row.deserialize(Some(&headers))
                        .map_err(|e| DataError::Parse {
                            line: line_no,
                            message: e.to_string(),
                        })?;
                asm.push(rec, line_no)?;
            }
        }
    }
    asm.finish()
}

/// Writes trajectories in the given format. Metadata is written to the first
/// JSONL line of each trajectory only.
pub fn save_trajectories(
    path: &Path,
    trajs: &[Trajectory],
    format: TrajectoryFormat,
) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        TrajectoryFormat::Jsonl => {
            for traj in trajs {
                for (i, step) in traj.steps.iter().enumerate() {
                    let rec = StepRecord::new(traj, step, i == 0);
                    let line = serde_json::to_string(&rec).expect("records always serialize");
                    writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
                }
            }
        }
        TrajectoryFormat::Csv => {
            let mut cw = csv::Writer::from_writer(&mut w);
            cw.write_record(CSV_HEADER).map_err(|e| DataError::Parse {
                line: 1,
                message: e.to_string(),
            })?;
            for traj in trajs {
                for step in &traj.steps {
                    let r = StepRecord::new(traj, step, false);
                    cw.write_record([
                        r.traj_id.clone(),
                        r.t.to_string(),
                        r.po_x.to_string(),
                        r.po_y.to_string(),
                        r.omega.to_string(),
                        r.pr_x.to_string(),
                        r.pr_y.to_string(),
                        r.ur_x.to_string(),
                        r.ur_y.to_string(),
                    ])
                    .map_err(|e| DataError::Parse {
                        line: 0,
                        message: e.to_string(),
                    })?;
                }
            }
            cw.flush().map_err(|e| DataError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

/// Converts an external dataset layout into canonical trajectories.
///
/// Implementations exist outside this crate; the canonical JSONL written by
/// [`save_trajectories`] is the exchange format.
pub trait DatasetAdapter {
    fn name(&self) -> &str;
    fn convert(&self, source: &Path) -> Result<Vec<Trajectory>, DataError>;
}

/// Supervised pairs over `horizon` steps.
///
/// The input motion is the sum of the world-frame commands over the horizon,
/// rotated into the frame at `t`.
pub fn to_pairs(traj: &Trajectory, horizon: usize) -> Result<Vec<SupervisedPair>, DataError> {
    if horizon == 0 {
        return Err(DataError::Invalid("horizon must be at least 1".into()));
    }
    let n = traj.steps.len();
    if n <= horizon {
        return Err(DataError::TooShort {
            traj_id: traj.id.clone(),
            len: n,
            needed: horizon,
        });
    }
    Ok((0..n - horizon)
        .map(|t| {
            let now = &traj.steps[t];
            let later = &traj.steps[t + horizon];
            let mut motion = Planar2::ZERO;
            for s in &traj.steps[t..t + horizon] {
                motion += s.robot_motion;
            }
            let (p_r_o, u_r_o) = to_object_frame(&now.object_pose, now.robot_pos, motion);
            let (dp_o, dw_o) = outcome_to_object_frame(&now.object_pose, &later.object_pose);
            SupervisedPair {
                x: PushInput { p_r_o, u_r_o },
                y: PredictionOutcome { dp_o, dw_o: dw_o.0 },
            }
        })
        .collect())
}

/// Pairs of every trajectory, concatenated in trajectory order.
pub fn pairs_from_trajectories(
    trajs: &[Trajectory],
    horizon: usize,
) -> Result<Vec<SupervisedPair>, DataError> {
    let mut out = Vec::new();
    for t in trajs {
        out.extend(to_pairs(t, horizon)?);
    }
    Ok(out)
}

fn mean_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Population statistics of the pairs. The displacement variance is the
/// average of the per-component variances, so a mean predictor scores an NMSE
/// of exactly one.
pub fn fit_norm_stats(pairs: &[SupervisedPair]) -> Result<NormStats, DataError> {
    if pairs.len() < 2 {
        return Err(DataError::TooFewPairs {
            needed: 2,
            got: pairs.len(),
        });
    }
    type Getter = fn(&SupervisedPair) -> f64;
    let inputs: [(Getter, &'static str); 4] = [
        (|p| p.x.p_r_o.x, "p_r_o.x"),
        (|p| p.x.p_r_o.y, "p_r_o.y"),
        (|p| p.x.u_r_o.x, "u_r_o.x"),
        (|p| p.x.u_r_o.y, "u_r_o.y"),
    ];
    let mut input_mean = [0.0; 4];
    let mut input_std = [0.0; 4];
    for (i, (get, name)) in inputs.iter().enumerate() {
        let (m, v) = mean_var(pairs.iter().map(get));
        if !(v > 0.0) {
            return Err(DataError::Degenerate(name));
        }
        input_mean[i] = m;
        input_std[i] = v.sqrt();
    }
    let (mx, vx) = mean_var(pairs.iter().map(|p| p.y.dp_o.x));
    let (my, vy) = mean_var(pairs.iter().map(|p| p.y.dp_o.y));
    let dp_var = 0.5 * (vx + vy);
    if !(dp_var > 0.0) {
        return Err(DataError::Degenerate("dp_o"));
    }
    let (mw, vw) = mean_var(pairs.iter().map(|p| p.y.dw_o));
    if !(vw > 0.0) {
        return Err(DataError::Degenerate("dw_o"));
    }
    Ok(NormStats {
        input_mean,
        input_std,
        dp_mean: [mx, my],
        dp_std: dp_var.sqrt(),
        dw_mean: mw,
        dw_std: vw.sqrt(),
    })
}

/// Splits whole trajectories into `(train, validation)`; each side keeps the
/// input order.
pub fn split_dataset(
    trajs: &[Trajectory],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>), DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Invalid(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = trajs.len();
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(DataError::Invalid(format!(
            "{n} trajectories cannot populate both sides of a {fraction} split"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train_idx = idx[..n_train].to_vec();
    let mut val_idx = idx[n_train..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((
        train_idx.into_iter().map(|i| trajs[i].clone()).collect(),
        val_idx.into_iter().map(|i| trajs[i].clone()).collect(),
    ))
}
