//! Running a policy for one episode and recording what happened.

use crate::analysis::EpisodeTrace;
use crate::env::{Action, Env, Observation, Task, FEATURE_DIM};
use crate::error::Result;
use crate::rewards::{self, RewardInput, RewardSpec};
use crate::rng::Rng;
use crate::vec3::Vec3;

pub trait Policy {
    fn act(&self, observation: &Observation, rng: &mut Rng) -> Action;
}

/// Adapts a closure that ignores the random stream.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&Observation) -> Action> Policy for FnPolicy<F> {
    fn act(&self, observation: &Observation, _rng: &mut Rng) -> Action {
        (self.0)(observation)
    }
}

/// An [`EpisodeTrace`] plus the per-state data the learner needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedEpisode {
    pub task: Task,
    pub trace: EpisodeTrace,
    /// Observation features for states `0..=T`.
    pub features: Vec<[f64; FEATURE_DIM]>,
    /// Achieved goals for states `0..=T`.
    pub achieved_goals: Vec<Vec3>,
}

impl RecordedEpisode {
    pub fn steps(&self) -> usize {
        self.trace.steps()
    }
}

/// Resets `env` and runs `policy` for the full horizon. Rewards and success
/// flags are evaluated on each post-step state.
pub fn rollout<P: Policy + ?Sized>(
    env: &Env,
    spec: &RewardSpec,
    policy: &P,
    rng: &mut Rng,
) -> Result<RecordedEpisode> {
    let (mut state, goal) = env.reset(rng)?;
    let horizon = env.cfg.horizon;
    let mut trace = EpisodeTrace {
        goal,
        gripper_positions: Vec::with_capacity(horizon + 1),
        object_positions: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        success_flags: Vec::with_capacity(horizon),
    };
    let mut features = Vec::with_capacity(horizon + 1);
    let mut achieved_goals = Vec::with_capacity(horizon + 1);

    let mut obs = env.observe(&state, goal);
    trace.gripper_positions.push(state.gripper_pos);
    trace.object_positions.push(state.object_pos);
    features.push(obs.features);
    achieved_goals.push(obs.achieved_goal);

    for _ in 0..horizon {
        let action = policy.act(&obs, rng).clamped();
        let (next, achieved) = env.step(&state, action)?;
        let input = RewardInput {
            gripper_pos: next.gripper_pos,
            achieved_goal: achieved,
            desired_goal: goal,
        };
        trace.actions.push(action);
        trace.rewards.push(rewards::compute(spec, &input));
        trace
            .success_flags
            .push(rewards::is_success(achieved, goal, spec.success_threshold));
        state = next;
        obs = env.observe(&state, goal);
        trace.gripper_positions.push(state.gripper_pos);
        trace.object_positions.push(state.object_pos);
        features.push(obs.features);
        achieved_goals.push(obs.achieved_goal);
    }
    Ok(RecordedEpisode {
        task: env.task,
        trace,
        features,
        achieved_goals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::rewards::RewardKind;
    use crate::rng::stream;

    #[test]
    fn lengths_follow_horizon() {
        let env = Env::new(EnvConfig::default(), Task::PickAndPlace).unwrap();
        let spec = RewardSpec::new(RewardKind::Manhattan);
        let policy = FnPolicy(|_: &Observation| Action::new(0.3, -0.2, -1.0, -1.0));
        let ep = rollout(&env, &spec, &policy, &mut stream(0, &[])).unwrap();
        ep.trace.validate().unwrap();
        assert_eq!(ep.steps(), 50);
        assert_eq!(ep.features.len(), 51);
        assert_eq!(ep.achieved_goals.len(), 51);
        assert_eq!(ep.achieved_goals[0], ep.trace.object_positions[0]);
    }

    #[test]
    fn scripted_reach_succeeds() {
        let env = Env::new(EnvConfig::default(), Task::Reach).unwrap();
        let spec = RewardSpec::new(RewardKind::Vanilla);
        let policy = FnPolicy(|o: &Observation| {
            let d = (o.desired_goal - o.achieved_goal) * 20.0;
            Action::new(d.x, d.y, d.z, 1.0)
        });
        let ep = rollout(&env, &spec, &policy, &mut stream(3, &[])).unwrap();
        assert!(ep.trace.final_success());
        assert_eq!(*ep.trace.rewards.last().unwrap(), 1.0);
    }
}
