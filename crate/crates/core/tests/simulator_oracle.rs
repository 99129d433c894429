use std::fs;

use pushlearn::data::{fit_norm_stats, load_trajectories, to_pairs, TrajectoryFormat};
use pushlearn::geometry::{outcome_to_world_frame, Angle, Planar2};
use pushlearn::metrics::step_loss;
use pushlearn::model::PredictionOutcome;
use pushlearn::physics::{correct_output_motion, physical_push};
use pushlearn::simulator::{
    contact_resolve, generate_suite, random_scripts, simulate_push, BoxSide, Manifest, PushScript,
    SceneConfig, SuiteSpec,
};

fn scene(v: Planar2) -> SceneConfig {
    SceneConfig {
        true_v: v,
        ..SceneConfig::default()
    }
}

fn scripts() -> Vec<PushScript> {
    random_scripts(
        &BoxSide::ALL,
        24,
        25,
        SceneConfig::default().box_half_extents,
        0.6,
        0.4,
        17,
    )
}

#[test]
fn recorded_outcomes_match_physics_with_true_contact() {
    for v in [
        Planar2::ZERO,
        Planar2::new(0.02, -0.01),
        Planar2::new(-0.03, 0.04),
    ] {
        let sc = scene(v);
        for (i, script) in scripts().iter().enumerate() {
            let traj = simulate_push(&sc, script, &format!("t{i}")).unwrap();
            let pairs = to_pairs(&traj, 1).unwrap();
            let norm = fit_norm_stats(&pairs).unwrap();
            let mut contacts = 0;
            for (t, pair) in pairs.iter().enumerate() {
                let step = &traj.steps[t];
                let Some(contact) =
                    contact_resolve(&sc, &step.object_pose, step.robot_pos, step.robot_motion)
                else {
                    continue;
                };
                contacts += 1;
                let out = physical_push(&contact, sc.true_h).unwrap();
                let pred = PredictionOutcome {
                    dp_o: correct_output_motion(out.d_com, out.d_omega, sc.true_v),
                    dw_o: out.d_omega,
                };
                let loss = step_loss(&pred, &pair.y, &norm);
                assert!(loss.total < 1e-12, "traj {i} step {t}: {loss:?}");
            }
            assert!(contacts > 0, "traj {i} never touched the box");
        }
    }
}

#[test]
fn contact_point_lies_on_the_box_boundary() {
    let v = Planar2::new(0.02, -0.01);
    let sc = scene(v);
    let half = sc.box_half_extents;
    for script in scripts() {
        let traj = simulate_push(&sc, &script, "b").unwrap();
        for step in &traj.steps {
            if let Some(contact) =
                contact_resolve(&sc, &step.object_pose, step.robot_pos, step.robot_motion)
            {
                let b = contact.c - v;
                let gap = (b.x.abs() - half.x).max(b.y.abs() - half.y);
                assert!(gap.abs() <= 1e-9, "gap {gap}");
            }
        }
    }
}

#[test]
fn push_through_com_keeps_orientation() {
    // With the COM offset along the face normal, a centered push still passes
    // through the COM.
    for (side, v) in [
        (BoxSide::Front, Planar2::new(0.0, 0.05)),
        (BoxSide::Right, Planar2::new(-0.04, 0.0)),
        (BoxSide::Back, Planar2::ZERO),
    ] {
        let script = PushScript {
            side,
            offset: 0.0,
            approach_angle: 0.0,
            steps: 40,
            initial_orientation: 0.7,
        };
        let traj = simulate_push(&scene(v), &script, "c").unwrap();
        let first = traj.steps[0].object_pose;
        let last = traj.steps.last().unwrap().object_pose;
        assert!(
            (last.orientation.0 - first.orientation.0).abs() < 1e-9,
            "{side:?}"
        );
        assert!(
            (last.position - first.position).norm() > 0.1,
            "{side:?} did not move"
        );
    }
}

#[test]
fn central_push_translates_along_push_direction() {
    let script = PushScript {
        side: BoxSide::Left,
        offset: 0.0,
        approach_angle: 0.0,
        steps: 30,
        initial_orientation: -1.1,
    };
    let traj = simulate_push(&scene(Planar2::ZERO), &script, "d").unwrap();
    let dir = traj.steps[0].robot_motion;
    let disp = traj.steps.last().unwrap().object_pose.position - traj.steps[0].object_pose.position;
    assert!(disp.norm() > 0.1);
    assert!(disp.cross(dir).abs() < 1e-12 * disp.norm() * dir.norm() * 1e3);
    assert!(disp.dot(dir) > 0.0);
}

#[test]
fn poses_rebuild_from_object_frame_outcomes() {
    let sc = scene(Planar2::new(0.01, 0.01));
    let traj = simulate_push(&sc, &scripts()[5], "e").unwrap();
    let pairs = to_pairs(&traj, 1).unwrap();
    let mut pose = traj.steps[0].object_pose;
    for (pair, step) in pairs.iter().zip(&traj.steps[1..]) {
        pose = outcome_to_world_frame(&pose, pair.y.dp_o, Angle(pair.y.dw_o));
        assert!((pose.position - step.object_pose.position).norm() < 1e-12);
        assert!((pose.orientation.0 - step.object_pose.orientation.0).abs() < 1e-12);
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let noisy = SceneConfig {
        noise_std_pos: 0.001,
        noise_std_rot: 0.001,
        ..SceneConfig::default()
    };
    let variants = vec![noisy.clone(), scene(Planar2::new(0.01, 0.0))];
    let scr = scripts();
    let a = generate_suite("s", &variants, &scr, &dir.path().join("a"), 42).unwrap();
    let _ = generate_suite("s", &variants, &scr, &dir.path().join("b"), 42).unwrap();
    assert_eq!(a.entries.len(), variants.len() * scr.len());
    for entry in &a.entries {
        let fa = fs::read(dir.path().join("a").join(&entry.file)).unwrap();
        let fb = fs::read(dir.path().join("b").join(&entry.file)).unwrap();
        assert_eq!(fa, fb, "{}", entry.file);
    }
    assert_eq!(
        fs::read(dir.path().join("a/manifest.json")).unwrap(),
        fs::read(dir.path().join("b/manifest.json")).unwrap()
    );
    let c = generate_suite("s", &variants, &scr, &dir.path().join("c"), 43).unwrap();
    let first = &c.entries[0].file;
    assert_ne!(
        fs::read(dir.path().join("a").join(first)).unwrap(),
        fs::read(dir.path().join("c").join(first)).unwrap()
    );
}

#[test]
fn generated_suite_loads_and_matches_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SuiteSpec {
        offline_scripts_per_box: 6,
        online_scripts: 4,
        steps_per_push: 8,
        ..SuiteSpec::default()
    };
    let (offline, online) = spec.generate(dir.path(), 3).unwrap();
    assert_eq!(offline.entries.len(), 6 * spec.offline_boxes.len());
    assert_eq!(online.entries.len(), 4);
    for (sub, manifest) in [("offline", &offline), ("online", &online)] {
        let root = dir.path().join(sub);
        let reread = Manifest::load(&root).unwrap();
        assert_eq!(&reread, manifest);
        for (entry, path) in manifest.entries.iter().zip(manifest.files(&root)) {
            let trajs = load_trajectories(&path, TrajectoryFormat::Jsonl).unwrap();
            assert_eq!(trajs.len(), 1);
            assert_eq!(trajs[0].id, entry.traj_id);
            assert_eq!(trajs[0].steps.len(), 8);
        }
    }
    assert!(online
        .entries
        .iter()
        .all(|e| e.scene_config.true_v == spec.online_v));
}

#[test]
fn fast_robots_are_rejected() {
    let sc = SceneConfig {
        step_length: 0.5 * SceneConfig::default().robot_radius,
        ..SceneConfig::default()
    };
    assert!(simulate_push(&sc, &scripts()[0], "f").is_err());
}
