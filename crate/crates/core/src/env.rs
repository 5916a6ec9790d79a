//! Kinematic pick-and-place world.
//!
//! A point gripper moves by bounded per-step displacements inside the unit
//! cube, can close on a box resting on the table plane `z = 0`, and must bring
//! it to a sampled goal. There is no physics: a grasped box follows the
//! gripper exactly, a released box settles on the table immediately.
//!
//! The [`Task::Reach`] variant keeps the same state and observation layout but
//! disables grasping, and the gripper itself is the achieved goal.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::vec3::Vec3;

/// Length of [`Observation::features`].
pub const FEATURE_DIM: usize = 14;
/// Length of an action vector `(dx, dy, dz, grip)`.
pub const ACTION_DIM: usize = 4;
/// Length of a goal vector.
pub const GOAL_DIM: usize = 3;

const MAX_REJECTIONS: usize = 1000;
const MIN_OBJECT_GRIPPER_XY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    PickAndPlace,
    Reach,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::PickAndPlace => "pick_and_place",
            Task::Reach => "reach",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub horizon: usize,
    pub action_scale: f64,
    pub grasp_radius: f64,
    pub success_threshold: f64,
    pub object_half_height: f64,
    pub air_goal_probability: f64,
    /// Probability that an episode starts with the object already held.
    pub grasped_start_probability: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            horizon: 50,
            action_scale: 0.05,
            grasp_radius: 0.03,
            success_threshold: 0.05,
            object_half_height: 0.02,
            air_goal_probability: 0.5,
            grasped_start_probability: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("env.action_scale", self.action_scale),
            ("env.grasp_radius", self.grasp_radius),
            ("env.success_threshold", self.success_threshold),
            ("env.object_half_height", self.object_half_height),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("env.horizon must be at least 1".into()));
        }
        for (name, p) in [
            ("env.air_goal_probability", self.air_goal_probability),
            ("env.grasped_start_probability", self.grasped_start_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Full simulator state. Plain value; stepping returns a new one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub gripper_pos: Vec3,
    pub grip_closed: bool,
    pub object_pos: Vec3,
    pub attached: bool,
    pub prev_gripper_delta: Vec3,
    pub step_index: usize,
}

/// Normalized displacement command plus gripper command; `grip <= 0` closes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub grip: f64,
}

impl Action {
    pub const fn new(dx: f64, dy: f64, dz: f64, grip: f64) -> Self {
        Action { dx, dy, dz, grip }
    }

    /// Panics unless `v` has exactly [`ACTION_DIM`] entries.
    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), ACTION_DIM, "action vector length");
        Action::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [f64; ACTION_DIM] {
        [self.dx, self.dy, self.dz, self.grip]
    }

    /// Every component clamped to `[-1, 1]`; NaN maps to 0.
    pub fn clamped(self) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Action::new(c(self.dx), c(self.dy), c(self.dz), c(self.grip))
    }

    pub fn displacement(self) -> Vec3 {
        Vec3::new(self.dx, self.dy, self.dz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// gripper_pos(3), grip_closed(1), object_pos(3), object_rel_pos(3),
    /// prev_gripper_delta(3), attached(1)
    pub features: [f64; FEATURE_DIM],
    pub achieved_goal: Vec3,
    pub desired_goal: Vec3,
}

/// An environment instance: configuration plus task variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    pub cfg: EnvConfig,
    pub task: Task,
}

impl Env {
    pub fn new(cfg: EnvConfig, task: Task) -> Result<Self> {
        cfg.validate()?;
        Ok(Env { cfg, task })
    }

    /// Samples a fresh episode start and its goal.
    pub fn reset(&self, rng: &mut Rng) -> Result<(EnvState, Vec3)> {
        let cfg = &self.cfg;
        let gripper_pos = Vec3::new(
            rng.gen_range(0.2..=0.8),
            rng.gen_range(0.2..=0.8),
            rng.gen_range(0.3..=0.7),
        );
        let mut rejections = 0;
        let object_pos = loop {
            let candidate = Vec3::new(
                rng.gen_range(0.2..=0.8),
                rng.gen_range(0.2..=0.8),
                cfg.object_half_height,
            );
            let dxy = (candidate.x - gripper_pos.x).hypot(candidate.y - gripper_pos.y);
            if dxy >= MIN_OBJECT_GRIPPER_XY {
                break candidate;
            }
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::ResetRejected(rejections));
            }
        };
        let mut state = EnvState {
            gripper_pos,
            grip_closed: false,
            object_pos,
            attached: false,
            prev_gripper_delta: Vec3::ZERO,
            step_index: 0,
        };
        // Only consume randomness when the option is on, so default streams
        // are unaffected.
        if self.task == Task::PickAndPlace
            && cfg.grasped_start_probability > 0.0
            && rng.gen_bool(cfg.grasped_start_probability)
        {
            state.object_pos = gripper_pos;
            state.attached = true;
            state.grip_closed = true;
        }
        let achieved = self.achieved_goal(&state);
        let goal = loop {
            let candidate = sample_goal(cfg, rng);
            if candidate.distance(achieved) >= cfg.success_threshold {
                break candidate;
            }
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::ResetRejected(rejections));
            }
        };
        Ok((state, goal))
    }

    /// Advances one step. Fails if the episode horizon is already reached.
    pub fn step(&self, state: &EnvState, action: Action) -> Result<(EnvState, Vec3)> {
        if state.step_index >= self.cfg.horizon {
            return Err(Error::HorizonExceeded {
                step: state.step_index,
                horizon: self.cfg.horizon,
            });
        }
        let action = action.clamped();
        let old = state.gripper_pos;
        let gripper_pos = (old + action.displacement() * self.cfg.action_scale).clamp(0.0, 1.0);
        let grip_closed = action.grip <= 0.0;

        let mut object_pos = state.object_pos;
        let mut attached = false;
        if self.task == Task::PickAndPlace {
            if grip_closed {
                attached = state.attached
                    || gripper_pos.distance(object_pos) <= self.cfg.grasp_radius;
            } else if state.attached {
                object_pos.z = self.cfg.object_half_height;
            }
            if attached {
                object_pos = gripper_pos;
            }
        }

        let next = EnvState {
            gripper_pos,
            grip_closed,
            object_pos,
            attached,
            prev_gripper_delta: gripper_pos - old,
            step_index: state.step_index + 1,
        };
        Ok((next, self.achieved_goal(&next)))
    }

    pub fn achieved_goal(&self, state: &EnvState) -> Vec3 {
        match self.task {
            Task::PickAndPlace => state.object_pos,
            Task::Reach => state.gripper_pos,
        }
    }

    pub fn observe(&self, state: &EnvState, goal: Vec3) -> Observation {
        let g = state.gripper_pos;
        let o = state.object_pos;
        let rel = o - g;
        let d = state.prev_gripper_delta;
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        Observation {
            features: [
                g.x,
                g.y,
                g.z,
                flag(state.grip_closed),
                o.x,
                o.y,
                o.z,
                rel.x,
                rel.y,
                rel.z,
                d.x,
                d.y,
                d.z,
                flag(state.attached),
            ],
            achieved_goal: self.achieved_goal(state),
            desired_goal: goal,
        }
    }
}

/// Goal xy uniform over the central square; height is either the table rest
/// height or uniform in the air band `(0.05, 0.45]`.
pub fn sample_goal(cfg: &EnvConfig, rng: &mut Rng) -> Vec3 {
    let air = rng.gen_bool(cfg.air_goal_probability);
    sample_goal_branch(cfg, rng, air)
}

/// [`sample_goal`] with the air/table branch fixed by the caller.
pub fn sample_goal_branch(cfg: &EnvConfig, rng: &mut Rng, air: bool) -> Vec3 {
    let x = rng.gen_range(0.2..=0.8);
    let y = rng.gen_range(0.2..=0.8);
    let z = if air {
        0.45 - 0.4 * rng.gen::<f64>()
    } else {
        cfg.object_half_height
    };
    Vec3::new(x, y, z)
}
