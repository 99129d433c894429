//! Offline pre-training, online adaptation of the analytical parameters, and
//! the experiment driver that ties them to files on disk.
//!
//! Offline, the network weights are fitted with Adam while `(v, h)` stay at
//! their initial value. Online, every incoming sample is first predicted with
//! the current `(v, h)` and scored, then `(v, h)` take a few gradient steps on
//! that single sample. The network is never touched online.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{checkpoint_save, Checkpoint, CheckpointError, OfflineLosses, Provenance};
use crate::data::{
    fit_norm_stats, load_trajectories, to_pairs, DataError, SupervisedPair, Trajectory,
    TrajectoryFormat,
};
use crate::geometry::Planar2;
use crate::metrics::{
    mean_total, nmse_summary, step_loss, step_loss_grad, LossBreakdown, NmseSummary,
};
use crate::model::{combined_backward, combined_forward, BaselineNn, CombinedModel};
use crate::nn::{mlp_init, MlpParams, BASELINE_DIMS, CONTACT_DIMS};
use crate::optim::{sgd_steps, AdamConfig, AdamState, OptimError, SgdConfig};
use crate::physics::{OnlineParams, PhysicsError};
use crate::simulator::{derive_seed, Manifest, SimError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("non-finite loss during {phase} at step {step}")]
    NonFinite { phase: &'static str, step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Also fit `(v, h)` offline instead of holding them at `initial_online`.
    pub train_online_params_offline: bool,
    pub initial_v: Planar2,
    pub initial_h: f64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 0.005,
            seed: 0,
            shuffle: true,
            train_online_params_offline: false,
            initial_v: Planar2::ZERO,
            initial_h: 0.05,
        }
    }
}

impl OfflineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.batch_size == 0 {
            return Err(PipelineError::Config("batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(PipelineError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        self.initial_online()?;
        Ok(())
    }

    pub fn initial_online(&self) -> Result<OnlineParams, PipelineError> {
        Ok(OnlineParams::from_h(self.initial_v, self.initial_h)?)
    }
}

/// Mean training loss per epoch.
pub type TrainingCurve = Vec<f64>;

/// A model whose parameters can be flattened for Adam and that yields
/// per-sample loss gradients.
trait Trainable {
    fn flat(&self) -> Vec<f64>;
    fn set_flat(&mut self, flat: &[f64]);
    fn loss_and_grad(
        &self,
        pair: &SupervisedPair,
    ) -> Result<(LossBreakdown, Vec<f64>), PipelineError>;
}

struct CombinedTrainer {
    model: CombinedModel,
    train_online: bool,
}

impl Trainable for CombinedTrainer {
    fn flat(&self) -> Vec<f64> {
        let mut f = self.model.mlp.to_flat();
        if self.train_online {
            f.extend(self.model.online.to_array());
        }
        f
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let n = self.model.mlp.num_params();
        self.model
            .mlp
            .set_flat(&flat[..n])
            .expect("flat length matches");
        if self.train_online {
            self.model.online = OnlineParams::from_array([flat[n], flat[n + 1], flat[n + 2]]);
        }
    }

    fn loss_and_grad(
        &self,
        pair: &SupervisedPair,
    ) -> Result<(LossBreakdown, Vec<f64>), PipelineError> {
        let (pred, tape) = combined_forward(&self.model, &pair.x)?;
        let loss = step_loss(&pred, &pair.y, &self.model.norm);
        let g = combined_backward(
            &self.model,
            &tape,
            &step_loss_grad(&pred, &pair.y, &self.model.norm),
        );
        let mut flat = g.mlp.to_flat();
        if self.train_online {
            flat.extend(g.online_array());
        }
        Ok((loss, flat))
    }
}

impl Trainable for BaselineNn {
    fn flat(&self) -> Vec<f64> {
        self.mlp.to_flat()
    }

    fn set_flat(&mut self, flat: &[f64]) {
        self.mlp.set_flat(flat).expect("flat length matches");
    }

    fn loss_and_grad(
        &self,
        pair: &SupervisedPair,
    ) -> Result<(LossBreakdown, Vec<f64>), PipelineError> {
        let norm = self.norm;
        let (pred, g) = self.predict_with_grad(&pair.x, |p| step_loss_grad(p, &pair.y, &norm));
        Ok((step_loss(&pred, &pair.y, &norm), g.to_flat()))
    }
}

/// Mini-batch Adam on the mean step loss. Batch gradients are summed in
/// sample order, so results are reproducible bit for bit.
fn adam_fit<T: Trainable>(
    trainer: &mut T,
    dataset: &[SupervisedPair],
    config: &OfflineConfig,
) -> Result<TrainingCurve, PipelineError> {
    let mut params = trainer.flat();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        params.len(),
    );
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x5eed));
    let mut curve = Vec::with_capacity(config.epochs);
    let mut grad = vec![0.0; params.len()];
    let mut sample_index = 0usize;
    for _ in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (loss, g) = trainer.loss_and_grad(&dataset[i])?;
                if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
                    return Err(PipelineError::NonFinite {
                        phase: "offline training",
                        step: sample_index,
                    });
                }
                epoch_loss += loss.total;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
                sample_index += 1;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params, &grad)?;
            trainer.set_flat(&params);
        }
        curve.push(epoch_loss / dataset.len() as f64);
    }
    Ok(curve)
}

fn check_dataset(dataset: &[SupervisedPair]) -> Result<(), PipelineError> {
    if dataset.is_empty() {
        return Err(PipelineError::Config("offline dataset is empty".into()));
    }
    Ok(())
}

/// Fits normalization statistics on `dataset` and trains the combined model's
/// network with Adam.
pub fn offline_train(
    dataset: &[SupervisedPair],
    config: &OfflineConfig,
) -> Result<(CombinedModel, TrainingCurve), PipelineError> {
    config.validate()?;
    check_dataset(dataset)?;
    let norm = fit_norm_stats(dataset)?;
    let mut trainer = CombinedTrainer {
        model: CombinedModel {
            mlp: mlp_init(config.seed, &CONTACT_DIMS),
            online: config.initial_online()?,
            norm,
        },
        train_online: config.train_online_params_offline,
    };
    let curve = adam_fit(&mut trainer, dataset, config)?;
    Ok((trainer.model, curve))
}

/// Trains the pure-network baseline with the same optimizer settings.
pub fn train_baseline(
    dataset: &[SupervisedPair],
    config: &OfflineConfig,
) -> Result<(BaselineNn, TrainingCurve), PipelineError> {
    config.validate()?;
    check_dataset(dataset)?;
    let mut nn = BaselineNn {
        mlp: mlp_init(derive_seed(config.seed, 0xba5e), &BASELINE_DIMS),
        norm: fit_norm_stats(dataset)?,
    };
    let curve = adam_fit(&mut nn, dataset, config)?;
    Ok((nn, curve))
}

pub fn evaluate_combined(
    model: &CombinedModel,
    pairs: &[SupervisedPair],
) -> Result<Vec<LossBreakdown>, PipelineError> {
    pairs
        .iter()
        .map(|p| {
            let (pred, _) = combined_forward(model, &p.x)?;
            Ok(step_loss(&pred, &p.y, &model.norm))
        })
        .collect()
}

/// Scores the baseline with `norm` (the combined model's statistics), so both
/// predictors are measured on the same scale.
pub fn evaluate_baseline(nn: &BaselineNn, pairs: &[SupervisedPair]) -> Vec<LossBreakdown> {
    pairs
        .iter()
        .map(|p| step_loss(&nn.predict(&p.x), &p.y, &nn.norm))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OnlineOptions {
    pub sgd: SgdConfig,
    /// Restore the initial `(v, h)` at the start of every trajectory.
    pub reset_per_trajectory: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub nmse: NmseSummary,
    pub mean_total: f64,
}

impl ModelSummary {
    fn of(losses: &[LossBreakdown]) -> Result<Self, PipelineError> {
        Ok(Self {
            nmse: nmse_summary(losses).map_err(|e| PipelineError::Config(e.to_string()))?,
            mean_total: mean_total(losses).map_err(|e| PipelineError::Config(e.to_string()))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnlineRunResult {
    pub online: Vec<LossBreakdown>,
    pub fixed: Vec<LossBreakdown>,
    pub nn: Vec<LossBreakdown>,
    /// `(v_x, v_y, rho)` after each update.
    pub theta_history: Vec<[f64; 3]>,
    pub final_online: OnlineParams,
    pub online_summary: ModelSummary,
    pub fixed_summary: ModelSummary,
    pub nn_summary: ModelSummary,
}

/// Streams the segments through the model in order, adapting only `(v, h)`.
///
/// Each segment is one trajectory; `(v, h)` carry over between segments unless
/// `reset_per_trajectory` is set. The fixed model and the baseline are scored
/// on the same samples.
pub fn online_adapt(
    model: &CombinedModel,
    baseline: &BaselineNn,
    segments: &[Vec<SupervisedPair>],
    options: &OnlineOptions,
) -> Result<OnlineRunResult, PipelineError> {
    options.sgd.validate()?;
    let total: usize = segments.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(PipelineError::Config("online stream is empty".into()));
    }
    let mut online = Vec::with_capacity(total);
    let mut fixed = Vec::with_capacity(total);
    let mut nn = Vec::with_capacity(total);
    let mut theta_history = Vec::with_capacity(total);

    let mut work = model.clone();
    let mut step = 0usize;
    for segment in segments {
        if options.reset_per_trajectory {
            work.online = model.online;
        }
        for pair in segment {
            let (pred, _) = combined_forward(&work, &pair.x)?;
            let loss = step_loss(&pred, &pair.y, &work.norm);
            if !loss.is_finite() {
                return Err(PipelineError::NonFinite {
                    phase: "online adaptation",
                    step,
                });
            }
            online.push(loss);

            let (fixed_pred, _) = combined_forward(model, &pair.x)?;
            fixed.push(step_loss(&fixed_pred, &pair.y, &model.norm));
            nn.push(step_loss(&baseline.predict(&pair.x), &pair.y, &model.norm));

            let mut theta = work.online.to_array();
            let mut failure = None;
            sgd_steps(&options.sgd, &mut theta, |p| {
                work.online = OnlineParams::from_array([p[0], p[1], p[2]]);
                match combined_forward(&work, &pair.x) {
                    Ok((pred, tape)) => {
                        let g = step_loss_grad(&pred, &pair.y, &work.norm);
                        combined_backward(&work, &tape, &g).online_array().to_vec()
                    }
                    Err(e) => {
                        failure = Some(e);
                        vec![0.0; 3]
                    }
                }
            })?;
            if let Some(e) = failure {
                return Err(e.into());
            }
            if theta.iter().any(|x| !x.is_finite())
                || !OnlineParams::from_array(theta).h().is_finite()
            {
                return Err(PipelineError::NonFinite {
                    phase: "online adaptation",
                    step,
                });
            }
            work.online = OnlineParams::from_array(theta);
            theta_history.push(theta);
            step += 1;
        }
    }
    Ok(OnlineRunResult {
        online_summary: ModelSummary::of(&online)?,
        fixed_summary: ModelSummary::of(&fixed)?,
        nn_summary: ModelSummary::of(&nn)?,
        online,
        fixed,
        nn,
        theta_history,
        final_online: work.online,
    })
}

/// One row of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub offline_nn_pos: f64,
    pub offline_pos: f64,
    pub fixed_pos: f64,
    pub online_pos: f64,
    pub offline_nn_rot: f64,
    pub offline_rot: f64,
    pub fixed_rot: f64,
    pub online_rot: f64,
}

impl SummaryRow {
    pub fn new(experiment: &str, offline: &OfflineLosses, run: &OnlineRunResult) -> Self {
        Self {
            experiment: experiment.to_string(),
            offline_nn_pos: offline.nn_pos,
            offline_pos: offline.combined_pos,
            fixed_pos: run.fixed_summary.nmse.pos,
            online_pos: run.online_summary.nmse.pos,
            offline_nn_rot: offline.nn_rot,
            offline_rot: offline.combined_rot,
            fixed_rot: run.fixed_summary.nmse.rot,
            online_rot: run.online_summary.nmse.rot,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCurveRow {
    pub step: usize,
    pub model: String,
    pub pos_x: f64,
    pub pos_y: f64,
    pub rot: f64,
    pub total: f64,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Loss curve with one row per (step, model), models in the order online,
/// fixed, nn.
pub fn write_loss_curve(path: &Path, run: &OnlineRunResult) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for step in 0..run.online.len() {
        for (name, series) in [
            ("online", &run.online),
            ("fixed", &run.fixed),
            ("nn", &run.nn),
        ] {
            let l = series[step];
            w.serialize(LossCurveRow {
                step,
                model: name.into(),
                pos_x: l.pos_x,
                pos_y: l.pos_y,
                rot: l.rot,
                total: l.total,
            })
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_loss_curve(path: &Path) -> Result<Vec<LossCurveRow>, PipelineError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut rows = Vec::new();
    for (i, row) in r.deserialize::<LossCurveRow>().enumerate() {
        rows.push(row.map_err(|e| {
            PipelineError::Data(DataError::Parse {
                line: e.position().map_or(i + 2, |p| p.line() as usize),
                message: e.to_string(),
            })
        })?);
    }
    Ok(rows)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_training_curve(
    path: &Path,
    combined: &[f64],
    nn: &[f64],
) -> Result<(), PipelineError> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        combined_loss: f64,
        nn_loss: f64,
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for (epoch, (c, n)) in combined.iter().zip(nn).enumerate() {
        w.serialize(Row {
            epoch,
            combined_loss: *c,
            nn_loss: *n,
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_theta_history(path: &Path, run: &OnlineRunResult) -> Result<(), PipelineError> {
    #[derive(Serialize)]
    struct Row {
        step: usize,
        v_x: f64,
        v_y: f64,
        h: f64,
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for (step, th) in run.theta_history.iter().enumerate() {
        w.serialize(Row {
            step,
            v_x: th[0],
            v_y: th[1],
            h: OnlineParams::from_array(*th).h(),
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Trajectories of a directory: those listed in its manifest when present,
/// otherwise every `.jsonl`/`.csv` file in name order.
pub fn load_dir(dir: &Path) -> Result<Vec<Trajectory>, PipelineError> {
    let files = if dir.join(crate::simulator::MANIFEST_FILE).exists() {
        Manifest::load(dir)?.files(dir)
    } else {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("jsonl") | Some("csv")
                )
            })
            .collect();
        files.sort();
        files
    };
    let mut trajs = Vec::new();
    for f in files {
        trajs.extend(load_trajectories(&f, TrajectoryFormat::from_path(&f))?);
    }
    Ok(trajs)
}

pub fn segments(
    trajs: &[Trajectory],
    horizon: usize,
) -> Result<Vec<Vec<SupervisedPair>>, PipelineError> {
    trajs.iter().map(|t| Ok(to_pairs(t, horizon)?)).collect()
}

/// Trained offline artifacts: the combined model, the baseline, their curves
/// and their losses on the training set.
#[derive(Clone, Debug)]
pub struct OfflineArtifacts {
    pub model: CombinedModel,
    pub baseline: BaselineNn,
    pub combined_curve: TrainingCurve,
    pub nn_curve: TrainingCurve,
    pub losses: OfflineLosses,
}

impl OfflineArtifacts {
    pub fn checkpoint(&self, provenance: Provenance) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            baseline: Some(self.baseline.mlp.clone()),
            provenance: Provenance {
                offline: Some(self.losses),
                ..provenance
            },
        }
    }
}

pub fn train_offline_artifacts(
    dataset: &[SupervisedPair],
    config: &OfflineConfig,
) -> Result<OfflineArtifacts, PipelineError> {
    let (model, combined_curve) = offline_train(dataset, config)?;
    let (baseline, nn_curve) = train_baseline(dataset, config)?;
    let combined = evaluate_combined(&model, dataset)?;
    let nn = evaluate_baseline(&baseline, dataset);
    let cs = ModelSummary::of(&combined)?;
    let ns = ModelSummary::of(&nn)?;
    Ok(OfflineArtifacts {
        model,
        baseline,
        combined_curve,
        nn_curve,
        losses: OfflineLosses {
            combined_pos: cs.nmse.pos,
            combined_rot: cs.nmse.rot,
            combined_total: cs.mean_total,
            nn_pos: ns.nmse.pos,
            nn_rot: ns.nmse.rot,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub offline: OfflineConfig,
    pub online: OnlineOptions,
    pub horizon: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "synthetic-shift".into(),
            offline: OfflineConfig::default(),
            online: OnlineOptions::default(),
            horizon: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub offline: OfflineArtifacts,
    pub run: OnlineRunResult,
    pub summary: SummaryRow,
}

pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRAINING_CURVE_FILE: &str = "training_curve.csv";
pub const THETA_FILE: &str = "theta_history.csv";
pub const OFFLINE_CHECKPOINT_FILE: &str = "offline.ckpt";
pub const ADAPTED_CHECKPOINT_FILE: &str = "adapted.ckpt";

/// Trains on the offline suite, adapts across the online suite and writes the
/// loss curve, summary, training curve, parameter history and checkpoints to
/// `out_dir`.
pub fn run_experiment(
    offline_dir: &Path,
    online_dir: &Path,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentResult, PipelineError> {
    let offline_trajs = load_dir(offline_dir)?;
    let online_trajs = load_dir(online_dir)?;
    let dataset: Vec<SupervisedPair> = segments(&offline_trajs, config.horizon)?.concat();
    let stream = segments(&online_trajs, config.horizon)?;

    let offline = train_offline_artifacts(&dataset, &config.offline)?;
    let run = online_adapt(&offline.model, &offline.baseline, &stream, &config.online)?;
    let summary = SummaryRow::new(&config.name, &offline.losses, &run);

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_loss_curve(&out_dir.join(LOSS_CURVE_FILE), &run)?;
    write_summary(&out_dir.join(SUMMARY_FILE), std::slice::from_ref(&summary))?;
    write_training_curve(
        &out_dir.join(TRAINING_CURVE_FILE),
        &offline.combined_curve,
        &offline.nn_curve,
    )?;
    write_theta_history(&out_dir.join(THETA_FILE), &run)?;
    let provenance = Provenance::for_config(config, config.offline.seed);
    let offline_ckpt = offline.checkpoint(provenance);
    checkpoint_save(&out_dir.join(OFFLINE_CHECKPOINT_FILE), &offline_ckpt)?;
    let mut adapted = offline_ckpt;
    adapted.model.online = run.final_online;
    checkpoint_save(&out_dir.join(ADAPTED_CHECKPOINT_FILE), &adapted)?;

    Ok(ExperimentResult {
        offline,
        run,
        summary,
    })
}

/// The baseline's network shape, for callers building one by hand.
pub fn empty_baseline(norm: crate::metrics::NormStats) -> BaselineNn {
    BaselineNn {
        mlp: MlpParams::zeros(&BASELINE_DIMS),
        norm,
    }
}
