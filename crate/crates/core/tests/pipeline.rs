use std::fs;
use std::sync::OnceLock;

use pushlearn::checkpoint::checkpoint_load;
use pushlearn::data::SupervisedPair;
use pushlearn::geometry::Planar2;
use pushlearn::metrics::moving_average;
use pushlearn::optim::SgdConfig;
use pushlearn::pipeline::{
    load_dir, online_adapt, read_loss_curve, run_experiment, segments, train_offline_artifacts,
    ExperimentConfig, ExperimentResult, OfflineArtifacts, OfflineConfig, OnlineOptions,
    ADAPTED_CHECKPOINT_FILE, LOSS_CURVE_FILE, OFFLINE_CHECKPOINT_FILE, SUMMARY_FILE, THETA_FILE,
    TRAINING_CURVE_FILE,
};
use pushlearn::simulator::{SceneConfig, SuiteSpec};

const OUTPUTS: [&str; 6] = [
    LOSS_CURVE_FILE,
    SUMMARY_FILE,
    TRAINING_CURVE_FILE,
    THETA_FILE,
    OFFLINE_CHECKPOINT_FILE,
    ADAPTED_CHECKPOINT_FILE,
];

fn small_spec() -> SuiteSpec {
    SuiteSpec {
        offline_scripts_per_box: 8,
        online_scripts: 3,
        steps_per_push: 12,
        ..SuiteSpec::default()
    }
}

/// A briefly trained model with its online stream.
fn small_setup(seed: u64) -> (OfflineArtifacts, Vec<Vec<SupervisedPair>>) {
    let dir = tempfile::tempdir().unwrap();
    small_spec().generate(dir.path(), seed).unwrap();
    let offline = segments(&load_dir(&dir.path().join("offline")).unwrap(), 1)
        .unwrap()
        .concat();
    let stream = segments(&load_dir(&dir.path().join("online")).unwrap(), 1).unwrap();
    let config = OfflineConfig {
        epochs: 10,
        seed,
        ..OfflineConfig::default()
    };
    (train_offline_artifacts(&offline, &config).unwrap(), stream)
}

fn run_suite(spec: &SuiteSpec, seed: u64) -> ExperimentResult {
    let dir = tempfile::tempdir().unwrap();
    spec.generate(dir.path(), seed).unwrap();
    let config = ExperimentConfig {
        offline: OfflineConfig {
            seed,
            ..OfflineConfig::default()
        },
        ..ExperimentConfig::default()
    };
    run_experiment(
        &dir.path().join("offline"),
        &dir.path().join("online"),
        &config,
        &dir.path().join("out"),
    )
    .unwrap()
}

fn shift_run() -> &'static ExperimentResult {
    static RUN: OnceLock<ExperimentResult> = OnceLock::new();
    RUN.get_or_init(|| run_suite(&SuiteSpec::default(), 0))
}

#[test]
fn zero_learning_rate_matches_the_fixed_model() {
    let (art, stream) = small_setup(1);
    let options = OnlineOptions {
        sgd: SgdConfig {
            lr: 0.0,
            ..SgdConfig::default()
        },
        ..OnlineOptions::default()
    };
    let run = online_adapt(&art.model, &art.baseline, &stream, &options).unwrap();
    assert_eq!(run.online, run.fixed);
    assert_eq!(run.final_online, art.model.online);
}

#[test]
fn losses_never_see_the_future() {
    let (art, stream) = small_setup(2);
    let options = OnlineOptions::default();
    let base = online_adapt(&art.model, &art.baseline, &stream, &options).unwrap();
    let flat_len: usize = stream.iter().map(Vec::len).sum();
    for cut in [0, 5, flat_len / 2, flat_len - 1] {
        let mut perturbed = stream.clone();
        let mut k = 0;
        for seg in &mut perturbed {
            for pair in seg.iter_mut() {
                if k >= cut {
                    pair.y.dp_o += Planar2::new(0.3, -0.2);
                    pair.y.dw_o += 0.5;
                }
                k += 1;
            }
        }
        let run = online_adapt(&art.model, &art.baseline, &perturbed, &options).unwrap();
        assert_eq!(run.online[..cut], base.online[..cut], "cut {cut}");
        assert_eq!(
            run.theta_history[..cut],
            base.theta_history[..cut],
            "cut {cut}"
        );
        assert_ne!(run.online[cut], base.online[cut]);
    }
}

#[test]
fn adaptation_leaves_offline_parameters_untouched() {
    let (art, stream) = small_setup(3);
    let before = art.model.clone();
    let run = online_adapt(
        &art.model,
        &art.baseline,
        &stream,
        &OnlineOptions::default(),
    )
    .unwrap();
    assert_eq!(art.model, before);
    assert_ne!(run.final_online, before.online);
}

#[test]
fn resetting_per_trajectory_restarts_from_the_offline_values() {
    let (art, stream) = small_setup(4);
    let options = OnlineOptions {
        reset_per_trajectory: true,
        ..OnlineOptions::default()
    };
    let run = online_adapt(&art.model, &art.baseline, &stream, &options).unwrap();
    let alone = online_adapt(&art.model, &art.baseline, &stream[1..2], &options).unwrap();
    let start = stream[0].len();
    assert_eq!(run.online[start..start + stream[1].len()], alone.online[..]);
}

#[test]
fn empty_stream_is_an_error() {
    let (art, _) = small_setup(5);
    assert!(online_adapt(&art.model, &art.baseline, &[], &OnlineOptions::default()).is_err());
    assert!(online_adapt(
        &art.model,
        &art.baseline,
        &[vec![]],
        &OnlineOptions::default()
    )
    .is_err());
}

#[test]
fn rerun_writes_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    small_spec().generate(dir.path(), 6).unwrap();
    let config = ExperimentConfig {
        offline: OfflineConfig {
            epochs: 5,
            seed: 6,
            ..OfflineConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let (off, on) = (dir.path().join("offline"), dir.path().join("online"));
    run_experiment(&off, &on, &config, &dir.path().join("a")).unwrap();
    run_experiment(&off, &on, &config, &dir.path().join("b")).unwrap();
    for name in OUTPUTS {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(!a.is_empty(), "{name}");
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn output_files_have_the_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    small_spec().generate(dir.path(), 7).unwrap();
    let config = ExperimentConfig {
        offline: OfflineConfig {
            epochs: 4,
            seed: 7,
            ..OfflineConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let out = dir.path().join("nested/out");
    let res = run_experiment(
        &dir.path().join("offline"),
        &dir.path().join("online"),
        &config,
        &out,
    )
    .unwrap();

    let summary = fs::read_to_string(out.join(SUMMARY_FILE)).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment,offline_nn_pos,offline_pos,fixed_pos,online_pos,offline_nn_rot,offline_rot,fixed_rot,online_rot"
    );
    assert!(lines.next().unwrap().starts_with("synthetic-shift,"));

    let n = res.run.online.len();
    let curve = read_loss_curve(&out.join(LOSS_CURVE_FILE)).unwrap();
    assert_eq!(curve.len(), 3 * n);
    for model in ["online", "fixed", "nn"] {
        assert_eq!(curve.iter().filter(|r| r.model == model).count(), n);
    }
    let training = fs::read_to_string(out.join(TRAINING_CURVE_FILE)).unwrap();
    assert_eq!(training.lines().count(), 1 + 4);
    assert_eq!(
        fs::read_to_string(out.join(THETA_FILE))
            .unwrap()
            .lines()
            .count(),
        1 + n
    );

    let offline = checkpoint_load(&out.join(OFFLINE_CHECKPOINT_FILE)).unwrap();
    let adapted = checkpoint_load(&out.join(ADAPTED_CHECKPOINT_FILE)).unwrap();
    assert_eq!(offline.model.mlp, adapted.model.mlp);
    assert_eq!(offline.model.norm, adapted.model.norm);
    assert_eq!(adapted.model.online, res.run.final_online);
    assert_eq!(offline.provenance.offline, Some(res.offline.losses));
}

#[test]
fn missing_input_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let err = run_experiment(
        &missing,
        &missing,
        &ExperimentConfig::default(),
        &dir.path().join("out"),
    )
    .unwrap_err();
    assert!(err.to_string().contains("nope"), "{err}");
}

#[test]
fn noiseless_training_fits_well() {
    let spec = SuiteSpec {
        offline_scripts_per_box: 25,
        base: SceneConfig::default(),
        ..SuiteSpec::default()
    };
    let res = run_suite(&spec, 0);
    let l = res.offline.losses;
    assert!(l.combined_pos <= 0.1 && l.combined_rot <= 0.1, "{l:?}");

    // Near its floor the per-epoch loss jitters by tens of percent, so the
    // trend is checked on the means of each quarter of training.
    let curve = &res.offline.combined_curve;
    assert!(curve[curve.len() - 1] < 0.01 * curve[0]);
    let quarters: Vec<f64> = curve
        .chunks(curve.len() / 4)
        .map(|q| q.iter().sum::<f64>() / q.len() as f64)
        .collect();
    for w in quarters.windows(2) {
        assert!(w[1] <= 1.05 * w[0], "quarter means {quarters:?}");
    }
}

#[test]
fn adaptation_does_not_hurt_in_distribution() {
    let base = SuiteSpec::default();
    let spec = SuiteSpec {
        online_v: base.offline_v,
        online_h: base.offline_h,
        ..base
    };
    let run = &run_suite(&spec, 0).run;
    let ratio = run.online_summary.mean_total / run.fixed_summary.mean_total;
    assert!(ratio <= 1.1, "online/fixed {ratio}");
}

#[test]
fn adaptation_helps_under_com_shift() {
    let res = shift_run();
    let spec = SuiteSpec::default();
    assert!(res.run.online_summary.mean_total < res.run.fixed_summary.mean_total);

    let err: Vec<f64> = res
        .run
        .theta_history
        .iter()
        .map(|t| (Planar2::new(t[0], t[1]) - spec.online_v).norm())
        .collect();
    let ma = moving_average(&err, 10).unwrap();
    let n = ma.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ma.iter().sum::<f64>() / n;
    let (num, den) = ma.iter().enumerate().fold((0.0, 0.0), |(a, b), (i, y)| {
        let dx = i as f64 - mx;
        (a + dx * (y - my), b + dx * dx)
    });
    assert!(num / den < 0.0, "trend slope {}", num / den);
}
