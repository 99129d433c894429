//! Synthetic ground truth: a disc robot pushing a rectangular box.
//!
//! The box dynamics are the same quasi-static model the predictor uses, with a
//! known COM offset and friction parameter, so a predictor handed the true
//! contact reproduces every recorded step. Observation noise is added to the
//! recorded object poses only; the rollout itself is noise-free.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    save_trajectories, DataError, Trajectory, TrajectoryFormat, TrajectoryMeta, TrajectoryStep,
};
use crate::geometry::{
    outcome_to_world_frame, rotate, to_object_frame, Angle, ObjectPose, Planar2,
};
use crate::physics::{correct_output_motion, physical_push, ContactState};

/// Slack when deciding whether the disc touches the box.
const CONTACT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub box_half_extents: Planar2,
    pub robot_radius: f64,
    /// Offset from the true COM to the box center, in the box frame.
    pub true_v: Planar2,
    pub true_h: f64,
    pub noise_std_pos: f64,
    pub noise_std_rot: f64,
    pub step_length: f64,
    pub seed: u64,
    /// Maximum fraction of the tangential contact motion lost to slip.
    #[serde(default)]
    pub slip: f64,
    #[serde(default)]
    pub label: String,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            box_half_extents: Planar2::new(0.5, 0.4),
            robot_radius: 0.2,
            true_v: Planar2::ZERO,
            true_h: 0.05,
            noise_std_pos: 0.0,
            noise_std_rot: 0.0,
            step_length: 0.02,
            seed: 0,
            slip: 0.0,
            label: String::new(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let err = |m: String| Err(SimError::Config(m));
        if !(pos(self.box_half_extents.x) && pos(self.box_half_extents.y)) {
            return err(format!(
                "box half extents must be positive, got {:?}",
                self.box_half_extents
            ));
        }
        if !pos(self.robot_radius) {
            return err(format!(
                "robot radius must be positive, got {}",
                self.robot_radius
            ));
        }
        if !pos(self.true_h) {
            return err(format!("true_h must be positive, got {}", self.true_h));
        }
        if !pos(self.step_length) {
            return err(format!(
                "step length must be positive, got {}",
                self.step_length
            ));
        }
        if self.step_length >= 0.5 * self.robot_radius {
            return err(format!(
                "step length {} must stay below half the robot radius {}",
                self.step_length, self.robot_radius
            ));
        }
        if !self.true_v.is_finite() {
            return err("true_v must be finite".into());
        }
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(nonneg(self.noise_std_pos) && nonneg(self.noise_std_rot)) {
            return err("noise stds must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return err(format!("slip must be in [0, 1], got {}", self.slip));
        }
        Ok(())
    }
}

/// Box side the robot starts on, in the box frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxSide {
    /// `-y` face.
    Front,
    /// `+x` face.
    Right,
    /// `+y` face.
    Back,
    /// `-x` face.
    Left,
}

impl BoxSide {
    pub const ALL: [BoxSide; 4] = [BoxSide::Front, BoxSide::Right, BoxSide::Back, BoxSide::Left];

    /// Outward normal and the tangent along which the offset is measured.
    fn frame(self) -> (Planar2, Planar2) {
        match self {
            BoxSide::Front => (Planar2::new(0.0, -1.0), Planar2::new(1.0, 0.0)),
            BoxSide::Right => (Planar2::new(1.0, 0.0), Planar2::new(0.0, 1.0)),
            BoxSide::Back => (Planar2::new(0.0, 1.0), Planar2::new(-1.0, 0.0)),
            BoxSide::Left => (Planar2::new(-1.0, 0.0), Planar2::new(0.0, -1.0)),
        }
    }

    fn name(self) -> &'static str {
        match self {
            BoxSide::Front => "front",
            BoxSide::Right => "right",
            BoxSide::Back => "back",
            BoxSide::Left => "left",
        }
    }
}

/// A straight push: where the robot starts and which way it drives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushScript {
    pub side: BoxSide,
    /// Start offset along the side from its midpoint, meters.
    pub offset: f64,
    /// Drive direction relative to the inward normal, radians.
    pub approach_angle: f64,
    /// Number of recorded steps.
    pub steps: usize,
    /// World heading of the box at the start.
    #[serde(default)]
    pub initial_orientation: f64,
}

impl PushScript {
    pub fn validate(&self, scene: &SceneConfig) -> Result<(), SimError> {
        if self.steps < 2 {
            return Err(SimError::Config(format!(
                "a push needs at least 2 steps, got {}",
                self.steps
            )));
        }
        if !(self.offset.is_finite()
            && self.approach_angle.is_finite()
            && self.initial_orientation.is_finite())
        {
            return Err(SimError::Config("push script values must be finite".into()));
        }
        if self.approach_angle.abs() >= 0.5 * PI {
            return Err(SimError::Config(format!(
                "approach angle {} does not point into the box",
                self.approach_angle
            )));
        }
        let (_, tangent) = self.side.frame();
        let half_side =
            tangent.x.abs() * scene.box_half_extents.x + tangent.y.abs() * scene.box_half_extents.y;
        if self.offset.abs() > half_side {
            return Err(SimError::Config(format!(
                "offset {} lies beyond the side half-length {half_side}",
                self.offset
            )));
        }
        Ok(())
    }
}

/// Closest point of the box boundary to `q` and the outward unit normal there.
/// Points inside the box project onto the nearest face.
fn closest_boundary_point(half: Planar2, q: Planar2) -> (Planar2, Planar2, f64) {
    let clamped = Planar2::new(q.x.clamp(-half.x, half.x), q.y.clamp(-half.y, half.y));
    let outside = clamped != q;
    if outside {
        let d = q - clamped;
        let dist = d.norm();
        return (clamped, d * (1.0 / dist), dist);
    }
    let gaps = [
        (half.x - q.x, Planar2::new(1.0, 0.0)),
        (q.x + half.x, Planar2::new(-1.0, 0.0)),
        (half.y - q.y, Planar2::new(0.0, 1.0)),
        (q.y + half.y, Planar2::new(0.0, -1.0)),
    ];
    let (gap, n) = gaps
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("four faces");
    (q + n * gap, n, -gap)
}

struct ResolvedContact {
    contact: ContactState,
    normal: Planar2,
}

fn resolve(
    scene: &SceneConfig,
    object: &ObjectPose,
    robot_pos: Planar2,
    robot_motion: Planar2,
) -> Option<ResolvedContact> {
    let (p, u) = to_object_frame(object, robot_pos, robot_motion);
    let q = p + u;
    let (b, normal, signed_dist) = closest_boundary_point(scene.box_half_extents, q);
    if signed_dist > scene.robot_radius + CONTACT_TOL {
        return None;
    }
    Some(ResolvedContact {
        contact: ContactState {
            c: b + scene.true_v,
            u_c: u,
        },
        normal,
    })
}

/// Contact point and motion relative to the true COM, if the disc touches the
/// box after moving by `robot_motion`. Contact is sticking: `u_c` equals the
/// robot motion in the box frame.
pub fn contact_resolve(
    scene: &SceneConfig,
    object_pose: &ObjectPose,
    robot_pos: Planar2,
    robot_motion: Planar2,
) -> Option<ContactState> {
    resolve(scene, object_pose, robot_pos, robot_motion).map(|r| r.contact)
}

/// Moves the robot out of the box so it is at most touching.
fn depenetrate(scene: &SceneConfig, object: &ObjectPose, robot_pos: Planar2) -> Planar2 {
    let (p, _) = to_object_frame(object, robot_pos, Planar2::ZERO);
    let (b, normal, signed_dist) = closest_boundary_point(scene.box_half_extents, p);
    if signed_dist >= scene.robot_radius {
        return robot_pos;
    }
    let fixed = b + normal * scene.robot_radius;
    object.position + rotate(object.orientation, fixed)
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std).expect("validated std").sample(rng)
}

/// Rolls out one straight push. Deterministic in `scene.seed`.
pub fn simulate_push(
    scene: &SceneConfig,
    script: &PushScript,
    traj_id: &str,
) -> Result<Trajectory, SimError> {
    scene.validate()?;
    script.validate(scene)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);

    let (normal, tangent) = script.side.frame();
    let half = scene.box_half_extents;
    let half_normal = normal.x.abs() * half.x + normal.y.abs() * half.y;
    let start_local = normal * (half_normal + scene.robot_radius) + tangent * script.offset;
    let dir_local = rotate(Angle(script.approach_angle), -normal);

    let heading = Angle(script.initial_orientation);
    let mut pose = ObjectPose {
        position: Planar2::ZERO,
        orientation: heading,
    };
    let mut robot = rotate(heading, start_local);
    let motion = rotate(heading, dir_local) * scene.step_length;

    let mut steps = Vec::with_capacity(script.steps);
    for t in 0..script.steps {
        robot = depenetrate(scene, &pose, robot);
        let recorded = ObjectPose {
            position: Planar2::new(
                pose.position.x + gaussian(&mut rng, scene.noise_std_pos),
                pose.position.y + gaussian(&mut rng, scene.noise_std_pos),
            ),
            orientation: Angle(pose.orientation.0 + gaussian(&mut rng, scene.noise_std_rot)),
        };
        steps.push(TrajectoryStep {
            t: t as i64,
            object_pose: recorded,
            robot_pos: robot,
            robot_motion: motion,
        });
        if let Some(hit) = resolve(scene, &pose, robot, motion) {
            let mut contact = hit.contact;
            if scene.slip > 0.0 {
                let tangential_dir = Planar2::new(-hit.normal.y, hit.normal.x);
                let along = contact.u_c.dot(tangential_dir);
                let lost = scene.slip * rng.random::<f64>();
                contact.u_c = contact.u_c - tangential_dir * (along * lost);
            }
            let out = physical_push(&contact, scene.true_h)
                .map_err(|e| SimError::Config(e.to_string()))?;
            let dp = correct_output_motion(out.d_com, out.d_omega, scene.true_v);
            pose = outcome_to_world_frame(&pose, dp, Angle(out.d_omega));
        }
        robot += motion;
    }
    Ok(Trajectory {
        id: traj_id.to_string(),
        meta: TrajectoryMeta {
            object: format!("box{:.3}x{:.3}", 2.0 * half.x, 2.0 * half.y),
            surface: format!("h{}", scene.true_h),
            com: format!("{},{}", scene.true_v.x, scene.true_v.y),
            side: script.side.name().to_string(),
        },
        steps,
    })
}

/// Mixes a master seed with a trajectory index into an independent stream seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(master ^ splitmix(index))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub traj_id: String,
    pub variant: usize,
    pub script: usize,
    pub scene_config: SceneConfig,
    pub push_script: PushScript,
}

/// Provenance of a generated suite; serialized as `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub master_seed: u64,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, SimError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| SimError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))
    }

    pub fn files(&self, dir: &Path) -> Vec<PathBuf> {
        self.entries.iter().map(|e| dir.join(&e.file)).collect()
    }
}

/// Simulates every (variant, script) pair and writes one JSONL file per
/// trajectory plus `manifest.json` into `out_dir`.
pub fn generate_suite(
    name: &str,
    variants: &[SceneConfig],
    scripts: &[PushScript],
    out_dir: &Path,
    master_seed: u64,
) -> Result<Manifest, SimError> {
    if variants.is_empty() || scripts.is_empty() {
        return Err(SimError::Config(
            "suite needs at least one variant and one script".into(),
        ));
    }
    fs::create_dir_all(out_dir).map_err(|source| SimError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut entries = Vec::with_capacity(variants.len() * scripts.len());
    for (vi, variant) in variants.iter().enumerate() {
        for (si, script) in scripts.iter().enumerate() {
            let index = (vi * scripts.len() + si) as u64;
            let scene = SceneConfig {
                seed: derive_seed(master_seed, index),
                ..variant.clone()
            };
            let traj_id = format!("{name}-{vi:02}-{si:03}");
            let traj = simulate_push(&scene, script, &traj_id)?;
            let file = format!("{traj_id}.jsonl");
            save_trajectories(&out_dir.join(&file), &[traj], TrajectoryFormat::Jsonl)?;
            entries.push(ManifestEntry {
                file,
                traj_id,
                variant: vi,
                script: si,
                scene_config: scene,
                push_script: script.clone(),
            });
        }
    }
    let manifest = Manifest {
        name: name.to_string(),
        master_seed,
        entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|source| SimError::Io { path, source })?;
    Ok(manifest)
}

/// Random straight pushes cycling through `sides`, with offsets within
/// `offset_frac` of each half side and approach angles within `max_angle`.
pub fn random_scripts(
    sides: &[BoxSide],
    count: usize,
    steps: usize,
    half_extents: Planar2,
    offset_frac: f64,
    max_angle: f64,
    seed: u64,
) -> Vec<PushScript> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let side = sides[i % sides.len()];
            let (_, tangent) = side.frame();
            let half_side = tangent.x.abs() * half_extents.x + tangent.y.abs() * half_extents.y;
            PushScript {
                side,
                offset: rng.random_range(-1.0..=1.0) * offset_frac * half_side,
                approach_angle: rng.random_range(-max_angle..=max_angle),
                steps,
                initial_orientation: rng.random_range(-PI..PI),
            }
        })
        .collect()
}

/// Shape and size of a default offline/online suite pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    /// Box sizes seen offline; the online scene uses the first.
    pub offline_boxes: Vec<Planar2>,
    pub offline_scripts_per_box: usize,
    pub online_scripts: usize,
    pub steps_per_push: usize,
    pub offline_v: Planar2,
    pub offline_h: f64,
    pub online_v: Planar2,
    pub online_h: f64,
    pub base: SceneConfig,
    pub offset_frac: f64,
    pub max_angle: f64,
    pub sides: Vec<BoxSide>,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            offline_boxes: vec![Planar2::new(0.5, 0.4), Planar2::new(0.4, 0.3)],
            offline_scripts_per_box: 100,
            online_scripts: 20,
            steps_per_push: 31,
            offline_v: Planar2::ZERO,
            offline_h: 0.05,
            online_v: Planar2::new(0.01, 0.01),
            online_h: 0.05,
            base: SceneConfig {
                noise_std_pos: 0.0005,
                noise_std_rot: 0.0005,
                ..SceneConfig::default()
            },
            offset_frac: 0.5,
            max_angle: 0.35,
            sides: BoxSide::ALL.to_vec(),
        }
    }
}

impl SuiteSpec {
    pub fn offline_variants(&self) -> Vec<SceneConfig> {
        self.offline_boxes
            .iter()
            .map(|b| SceneConfig {
                box_half_extents: *b,
                true_v: self.offline_v,
                true_h: self.offline_h,
                label: "offline".into(),
                ..self.base.clone()
            })
            .collect()
    }

    pub fn online_variant(&self) -> SceneConfig {
        SceneConfig {
            box_half_extents: self.offline_boxes[0],
            true_v: self.online_v,
            true_h: self.online_h,
            label: "online".into(),
            ..self.base.clone()
        }
    }

    /// Writes `offline/` and `online/` suites under `out_dir`.
    pub fn generate(
        &self,
        out_dir: &Path,
        master_seed: u64,
    ) -> Result<(Manifest, Manifest), SimError> {
        if self.offline_boxes.is_empty() {
            return Err(SimError::Config(
                "at least one offline box size is required".into(),
            ));
        }
        if self.sides.is_empty() {
            return Err(SimError::Config(
                "at least one push side is required".into(),
            ));
        }
        // Offsets are drawn against the smallest box so every script fits every variant.
        let smallest = self
            .offline_boxes
            .iter()
            .fold(Planar2::new(f64::INFINITY, f64::INFINITY), |a, b| {
                Planar2::new(a.x.min(b.x), a.y.min(b.y))
            });
        let offline_scripts = random_scripts(
            &self.sides,
            self.offline_scripts_per_box,
            self.steps_per_push,
            smallest,
            self.offset_frac,
            self.max_angle,
            derive_seed(master_seed, u64::MAX),
        );
        let online_scripts = random_scripts(
            &self.sides,
            self.online_scripts,
            self.steps_per_push,
            self.offline_boxes[0],
            self.offset_frac,
            self.max_angle,
            derive_seed(master_seed, u64::MAX - 1),
        );
        let offline = generate_suite(
            "offline",
            &self.offline_variants(),
            &offline_scripts,
            &out_dir.join("offline"),
            master_seed,
        )?;
        let online = generate_suite(
            "online",
            &[self.online_variant()],
            &online_scripts,
            &out_dir.join("online"),
            derive_seed(master_seed, 1),
        )?;
        Ok((offline, online))
    }
}
