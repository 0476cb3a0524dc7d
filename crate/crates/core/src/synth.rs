//! Synthetic egocentric driving scenes.
//!
//! Builds complete training examples from first principles: a clean ego
//! odometry profile (speed + yaw rate per tick), the pose track it integrates
//! to, one moving target in the world plane, and the target's bounding-box
//! track as seen by a forward-facing pinhole camera rigidly attached to the
//! ego vehicle. Observations are the clean signals plus Gaussian sensor
//! noise; the clean signals are kept alongside so metrics can be computed
//! against ground truth.
//!
//! Everything is deterministic given a seed: the same `ScenarioConfig` and
//! the same RNG state produce bit-identical scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ego::{dead_reckon_poses, OdomStep, Pose2D, DT};
use crate::error::{Error, Result};
use crate::loc::{flows_from_boxes, BoxState, FlowFeature, DIM_FLOOR, IMG_H, IMG_W};

/// Scene length in ticks (3 s at 10 Hz): a 10-tick observation window plus a
/// 20-tick forecast horizon.
pub const TICKS: usize = 30;

/// Minimum forward distance (m) at which a target still projects; anything
/// closer (or behind the camera) is treated as not visible.
pub const MIN_DEPTH: f64 = 0.5;

/// Upper bound on ego and target speeds (m/s) accepted by configs.
pub const V_MAX: f64 = 20.0;

/// Upper bound on the magnitude of the ego yaw rate (rad/s).
pub const YAW_MAX: f64 = 0.6;

/// Ego maneuver family for a scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EgoKind {
    /// Constant speed, zero yaw rate for the whole scene.
    Straight,
    /// Straight during the observation window, then a left turn.
    LeftTurn,
    /// Straight during the observation window, then a right turn.
    RightTurn,
    /// Straight, then braking to a standstill.
    Stop,
}

impl EgoKind {
    /// All ego maneuver kinds, in a fixed order used for balanced sampling.
    pub const ALL: [EgoKind; 4] = [
        EgoKind::Straight,
        EgoKind::LeftTurn,
        EgoKind::RightTurn,
        EgoKind::Stop,
    ];
}

/// Target motion family for a scene, relative to the ego's initial heading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    /// Drives ahead of the ego in the same direction.
    Leading,
    /// Approaches head-on in the adjacent lane.
    Oncoming,
    /// Crosses the ego's path from the left.
    CrossingLeft,
    /// Crosses the ego's path from the right.
    CrossingRight,
    /// Parked in or near the ego's lane.
    Stopped,
}

impl TargetKind {
    /// All target kinds, in a fixed order used for balanced sampling.
    pub const ALL: [TargetKind; 5] = [
        TargetKind::Leading,
        TargetKind::Oncoming,
        TargetKind::CrossingLeft,
        TargetKind::CrossingRight,
        TargetKind::Stopped,
    ];
}

/// Forward-facing pinhole camera rigidly mounted on the ego vehicle.
///
/// The ego frame has +x forward and +y left; image u grows to the right and
/// v grows downward, with the principal point at the image center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Focal length in pixels. Must be positive.
    pub focal: f64,
    /// Height of the optical center above the ground plane (m).
    pub height: f64,
    /// Physical target width (m) assigned to newly placed targets.
    pub target_width: f64,
    /// Physical target height (m) assigned to newly placed targets.
    pub target_height: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            focal: 1000.0,
            height: 1.4,
            target_width: 1.8,
            target_height: 1.5,
        }
    }
}

impl Camera {
    /// Projects a target at `rel` (ego-frame position, m) with physical size
    /// `(width, height)` (m) into a normalized box.
    ///
    /// Returns `None` when the target is closer than [`MIN_DEPTH`] in front
    /// of the camera or its center falls outside the image.
    pub fn project(&self, rel: [f64; 2], width: f64, height: f64) -> Option<BoxState> {
        assert!(self.focal > 0.0, "camera focal length must be positive");
        let (x, y) = (rel[0], rel[1]);
        if x <= MIN_DEPTH {
            return None;
        }
        let u = 0.5 * IMG_W - self.focal * (y / x);
        let v = 0.5 * IMG_H + self.focal * (self.height - 0.5 * height) / x;
        if !(0.0..=IMG_W).contains(&u) || !(0.0..=IMG_H).contains(&v) {
            return None;
        }
        let w_px = self.focal * width / x;
        let h_px = self.focal * height / x;
        Some(BoxState::new(
            u / IMG_W,
            v / IMG_H,
            w_px / IMG_W,
            h_px / IMG_H,
        ))
    }
}

/// Parameters for one synthetic scene draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub ego: EgoKind,
    pub target: TargetKind,
    /// Ego cruise speed is drawn uniformly from this range (m/s).
    pub v_range: (f64, f64),
    /// Turn maneuvers draw the yaw-rate magnitude from this range (rad/s).
    pub yaw_range: (f64, f64),
    /// Moving targets draw their speed from this range (m/s).
    pub target_speed: (f64, f64),
    /// Std of the Gaussian noise added to observed speed (m/s).
    pub odom_noise_v: f64,
    /// Std of the Gaussian noise added to observed yaw rate (rad/s).
    pub odom_noise_yaw: f64,
    /// Std of the Gaussian jitter added to each normalized box field.
    pub box_jitter: f64,
    pub camera: Camera,
}

impl ScenarioConfig {
    /// Default ranges for an ego/target kind pair.
    pub fn for_kinds(ego: EgoKind, target: TargetKind) -> Self {
        let (v_range, yaw_range) = match ego {
            EgoKind::Straight => ((6.0, 16.0), (0.0, 0.0)),
            EgoKind::LeftTurn | EgoKind::RightTurn => ((4.0, 10.0), (0.25, 0.55)),
            EgoKind::Stop => ((6.0, 14.0), (0.0, 0.0)),
        };
        let target_speed = match target {
            TargetKind::Leading => (3.0, 12.0),
            TargetKind::Oncoming => (4.0, 10.0),
            TargetKind::CrossingLeft | TargetKind::CrossingRight => (2.0, 5.0),
            TargetKind::Stopped => (0.0, 0.0),
        };
        ScenarioConfig {
            ego,
            target,
            v_range,
            yaw_range,
            target_speed,
            odom_noise_v: 0.1,
            odom_noise_yaw: 0.01,
            box_jitter: 0.002,
            camera: Camera::default(),
        }
    }

    /// Checks the documented ranges: speeds within `[0, V_MAX]`, yaw-rate
    /// magnitudes within `[0, YAW_MAX]`, non-negative noise levels, and a
    /// positive focal length.
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64), max: f64| {
            lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi <= max
        };
        if !range_ok(self.v_range, V_MAX) {
            return Err(Error::contract(format!(
                "ego speed range {:?} must satisfy 0 <= lo <= hi <= {V_MAX}",
                self.v_range
            )));
        }
        if !range_ok(self.yaw_range, YAW_MAX) {
            return Err(Error::contract(format!(
                "yaw-rate range {:?} must satisfy 0 <= lo <= hi <= {YAW_MAX}",
                self.yaw_range
            )));
        }
        if !range_ok(self.target_speed, V_MAX) {
            return Err(Error::contract(format!(
                "target speed range {:?} must satisfy 0 <= lo <= hi <= {V_MAX}",
                self.target_speed
            )));
        }
        for (name, v) in [
            ("odom_noise_v", self.odom_noise_v),
            ("odom_noise_yaw", self.odom_noise_yaw),
            ("box_jitter", self.box_jitter),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::contract(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(self.camera.focal > 0.0) {
            return Err(Error::contract(format!(
                "camera focal length must be positive, got {}",
                self.camera.focal
            )));
        }
        Ok(())
    }
}

/// One target's ground-truth world track and its observed image track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetTrack {
    pub kind: TargetKind,
    /// Physical size (width, height) in meters, constant over the scene.
    pub size: (f64, f64),
    /// World position per tick (m), same length as the scene.
    pub world: Vec<[f64; 2]>,
    /// Exact projection of `world` through the ego pose track.
    pub boxes_clean: Vec<BoxState>,
    /// Observed boxes: `boxes_clean` plus per-field Gaussian jitter.
    pub boxes: Vec<BoxState>,
    /// First differences of the observed boxes (first entry is zero).
    pub flows: Vec<FlowFeature>,
}

/// A complete synthetic scene: ego motion, pose track, and one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Seed this scene was generated from (also used as a stable id).
    pub seed: u64,
    pub ego_kind: EgoKind,
    /// Noise-free odometry per tick.
    pub odom_clean: Vec<OdomStep>,
    /// Observed odometry: clean plus Gaussian noise.
    pub odom: Vec<OdomStep>,
    /// Ego pose after each tick, integrated from the clean odometry.
    pub poses: Vec<Pose2D>,
    pub targets: Vec<TargetTrack>,
    pub camera: Camera,
}

impl Scene {
    /// Ticks in the scene.
    pub fn len(&self) -> usize {
        self.odom_clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.odom_clean.is_empty()
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Clean per-tick odometry for one ego maneuver.
///
/// Profiles are piecewise constant with short linear ramps between levels so
/// that speed and yaw rate never jump by more than a vehicle could manage in
/// one tick.
fn ego_profile(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<OdomStep> {
    const RAMP: usize = 3;
    let v0 = draw(rng, cfg.v_range);
    let blend = |t: usize, start: usize| ((t - start + 1) as f64 / RAMP as f64).min(1.0);
    match cfg.ego {
        EgoKind::Straight => (0..TICKS).map(|_| OdomStep::new(v0, 0.0)).collect(),
        EgoKind::LeftTurn | EgoKind::RightTurn => {
            let sign = if cfg.ego == EgoKind::LeftTurn { 1.0 } else { -1.0 };
            let w = sign * draw(rng, cfg.yaw_range);
            let v_turn = 0.7 * v0;
            let turn_start = rng.gen_range(10..=14);
            let turn_end = turn_start + rng.gen_range(9..=13);
            (0..TICKS)
                .map(|t| {
                    if t < turn_start {
                        OdomStep::new(v0, 0.0)
                    } else if t < turn_end.min(TICKS) {
                        let a = blend(t, turn_start);
                        OdomStep::new(v0 + a * (v_turn - v0), a * w)
                    } else {
                        let a = blend(t, turn_end);
                        OdomStep::new(v_turn + a * (v0 - v_turn), (1.0 - a) * w)
                    }
                })
                .collect()
        }
        EgoKind::Stop => {
            let stop_start = rng.gen_range(8..=12);
            let stop_len = rng.gen_range(8..=12);
            (0..TICKS)
                .map(|t| {
                    let v = if t < stop_start {
                        v0
                    } else {
                        let a = ((t - stop_start + 1) as f64 / stop_len as f64).min(1.0);
                        v0 * (1.0 - a)
                    };
                    OdomStep::new(v, 0.0)
                })
                .collect()
        }
    }
}

/// Initial state of a target: world position and world velocity.
///
/// Placement is anchored at the ego's final pose — the moment of closest
/// approach and therefore the visibility pinch point — by drawing where the
/// target should END in that frame and integrating its constant world
/// velocity backwards to the start of the scene.
fn draw_target_state(
    kind: TargetKind,
    cfg: &ScenarioConfig,
    poses: &[Pose2D],
    rng: &mut ChaCha8Rng,
) -> ([f64; 2], [f64; 2]) {
    let speed = draw(rng, cfg.target_speed);
    let pose_end = poses.last().expect("pose track is non-empty");
    let elapsed = (poses.len() - 1) as f64 * DT;
    let (rel_end, vel): ([f64; 2], [f64; 2]) = match kind {
        TargetKind::Leading => (
            [rng.gen_range(6.0..15.0), rng.gen_range(-1.5..1.5)],
            // Leading traffic keeps driving along the ego's original heading.
            [speed, 0.0],
        ),
        TargetKind::Oncoming => (
            [rng.gen_range(6.0..18.0), rng.gen_range(2.5..4.5)],
            [-speed, 0.0],
        ),
        TargetKind::CrossingLeft | TargetKind::CrossingRight => {
            let sign = if kind == TargetKind::CrossingLeft { 1.0 } else { -1.0 };
            // Ends just past (or on) the ego's path, having arrived from the
            // named side.
            let lateral = sign * rng.gen_range(-2.0..1.0);
            ([rng.gen_range(4.0..12.0), lateral], [0.0, -sign * speed])
        }
        TargetKind::Stopped => (
            [rng.gen_range(4.0..15.0), rng.gen_range(-2.0..2.0)],
            [0.0, 0.0],
        ),
    };
    let end = pose_end.transform(rel_end);
    (
        [end[0] - vel[0] * elapsed, end[1] - vel[1] * elapsed],
        vel,
    )
}

/// One placement attempt: constant-velocity world track, projected through
/// every ego pose. Fails (returns `None`) if the target ever leaves view.
fn try_place_target(
    kind: TargetKind,
    cfg: &ScenarioConfig,
    poses: &[Pose2D],
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<[f64; 2]>, Vec<BoxState>)> {
    let (p0, vel) = draw_target_state(kind, cfg, poses, rng);
    let mut world = Vec::with_capacity(poses.len());
    let mut boxes = Vec::with_capacity(poses.len());
    for (t, pose) in poses.iter().enumerate() {
        let p = [p0[0] + vel[0] * DT * t as f64, p0[1] + vel[1] * DT * t as f64];
        let rel = pose.to_local(p);
        let b = cfg.camera.project(
            rel,
            cfg.camera.target_width,
            cfg.camera.target_height,
        )?;
        world.push(p);
        boxes.push(b);
    }
    Some((world, boxes))
}

/// Generates one scene from `cfg` using `rng` for every random draw.
///
/// The target placement is retried (with fresh draws) until the target stays
/// visible for the whole scene; after 200 failed attempts the configuration
/// is reported as unsatisfiable.
pub fn generate_scene(cfg: &ScenarioConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let odom_clean = ego_profile(cfg, &mut rng);
    let poses = dead_reckon_poses(&odom_clean, &Pose2D::identity());

    let noise_v = Normal::new(0.0, cfg.odom_noise_v).expect("validated std");
    let noise_yaw = Normal::new(0.0, cfg.odom_noise_yaw).expect("validated std");
    let odom: Vec<OdomStep> = odom_clean
        .iter()
        .map(|s| {
            OdomStep::new(
                s.v + noise_v.sample(&mut rng),
                s.yaw_rate + noise_yaw.sample(&mut rng),
            )
        })
        .collect();

    let mut placed = None;
    for _ in 0..500 {
        if let Some(p) = try_place_target(cfg.target, cfg, &poses, &mut rng) {
            placed = Some(p);
            break;
        }
    }
    let (world, boxes_clean) = placed.ok_or_else(|| {
        Error::contract(format!(
            "no fully visible {:?} target placement found for {:?} ego after 500 attempts",
            cfg.target, cfg.ego
        ))
    })?;

    let jitter = Normal::new(0.0, cfg.box_jitter).expect("validated std");
    let boxes: Vec<BoxState> = boxes_clean
        .iter()
        .map(|b| {
            BoxState::new(
                (b.cx + jitter.sample(&mut rng)).clamp(0.0, 1.0),
                (b.cy + jitter.sample(&mut rng)).clamp(0.0, 1.0),
                (b.w + jitter.sample(&mut rng)).max(DIM_FLOOR),
                (b.h + jitter.sample(&mut rng)).max(DIM_FLOOR),
            )
        })
        .collect();
    let flows = flows_from_boxes(&boxes);

    Ok(Scene {
        seed,
        ego_kind: cfg.ego,
        odom_clean,
        odom,
        poses,
        targets: vec![TargetTrack {
            kind: cfg.target,
            size: (cfg.camera.target_width, cfg.camera.target_height),
            world,
            boxes_clean,
            boxes,
            flows,
        }],
        camera: cfg.camera,
    })
}
