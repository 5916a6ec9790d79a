//! Replay buffer with hindsight goal relabeling applied at store time.
//!
//! Each episode step is stored once with its original goal and then up to `k`
//! more times with the goal replaced by something the episode actually
//! achieved. Rewards of relabeled copies are recomputed from the post-step
//! outcome, so shaped rewards stay consistent with the substituted goal.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{Action, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::rewards::{self, RewardInput, RewardSpec};
use crate::rng::Rng;
use crate::rollout::RecordedEpisode;
use crate::vec3::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation_features: [f64; FEATURE_DIM],
    pub action: Action,
    pub reward: f64,
    pub next_observation_features: [f64; FEATURE_DIM],
    pub goal: Vec3,
    pub achieved_goal_next: Vec3,
    pub gripper_pos: Vec3,
    pub next_gripper_pos: Vec3,
    pub success: bool,
}

impl Transition {
    /// Reward and success under `spec` for this transition's outcome and goal.
    pub fn evaluate(&self, spec: &RewardSpec) -> (f64, bool) {
        evaluate(spec, self.next_gripper_pos, self.achieved_goal_next, self.goal)
    }
}

fn evaluate(spec: &RewardSpec, gripper: Vec3, achieved: Vec3, goal: Vec3) -> (f64, bool) {
    let input = RewardInput {
        gripper_pos: gripper,
        achieved_goal: achieved,
        desired_goal: goal,
    };
    (
        rewards::compute(spec, &input),
        rewards::is_success(achieved, goal, spec.success_threshold),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelKind {
    /// Achieved goal of a strictly later step of the same episode.
    Future,
    /// Achieved goal of the last step.
    Final,
    /// Achieved goal of any step.
    Episode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelabelStrategy {
    pub kind: RelabelKind,
    pub k: usize,
}

impl Default for RelabelStrategy {
    fn default() -> Self {
        RelabelStrategy {
            kind: RelabelKind::Future,
            k: 4,
        }
    }
}

impl RelabelStrategy {
    pub fn disabled() -> Self {
        RelabelStrategy {
            kind: RelabelKind::Future,
            k: 0,
        }
    }

    /// Step indices whose achieved goals relabel step `t` of a `steps`-long
    /// episode. `future` draws `min(k, steps - 1 - t)` distinct later steps;
    /// the other kinds always draw `k`.
    pub fn sample_sources(&self, t: usize, steps: usize, rng: &mut Rng) -> Vec<usize> {
        match self.kind {
            RelabelKind::Future => {
                let available = steps - 1 - t;
                let n = self.k.min(available);
                let mut picks: Vec<usize> = index::sample(rng, available, n)
                    .into_iter()
                    .map(|i| t + 1 + i)
                    .collect();
                picks.sort_unstable();
                picks
            }
            RelabelKind::Final => vec![steps - 1; self.k],
            RelabelKind::Episode => (0..self.k).map(|_| rng.gen_range(0..steps)).collect(),
        }
    }
}

/// Fixed-capacity ring of transitions; the oldest entry is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 100_000;

    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 20)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity { 0 } else { self.next };
        self.storage[split..].iter().chain(&self.storage[..split])
    }

    /// `n` uniform draws with replacement.
    pub fn sample_batch(&self, n: usize, rng: &mut Rng) -> Result<Vec<&Transition>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let len = self.storage.len();
        Ok((0..n).map(|_| &self.storage[rng.gen_range(0..len)]).collect())
    }

    /// Stores every step of `episode` plus its hindsight copies and returns
    /// how many transitions were written.
    pub fn store_episode(
        &mut self,
        episode: &RecordedEpisode,
        strategy: &RelabelStrategy,
        spec: &RewardSpec,
        rng: &mut Rng,
    ) -> Result<usize> {
        let steps = episode.steps();
        if steps == 0 {
            return Err(Error::EmptyEpisode);
        }
        episode.trace.validate()?;
        if episode.features.len() != steps + 1 || episode.achieved_goals.len() != steps + 1 {
            return Err(Error::Shape {
                context: "recorded episode",
                expected: steps + 1,
                actual: episode.features.len().min(episode.achieved_goals.len()),
            });
        }
        let trace = &episode.trace;
        let mut stored = 0;
        for t in 0..steps {
            let next_gripper = trace.gripper_positions[t + 1];
            let achieved_next = episode.achieved_goals[t + 1];
            let (reward, success) = evaluate(spec, next_gripper, achieved_next, trace.goal);
            let original = Transition {
                observation_features: episode.features[t],
                action: trace.actions[t],
                reward,
                next_observation_features: episode.features[t + 1],
                goal: trace.goal,
                achieved_goal_next: achieved_next,
                gripper_pos: trace.gripper_positions[t],
                next_gripper_pos: next_gripper,
                success,
            };
            for source in strategy.sample_sources(t, steps, rng) {
                let goal = episode.achieved_goals[source + 1];
                let (reward, success) = evaluate(spec, next_gripper, achieved_next, goal);
                self.push(Transition {
                    goal,
                    reward,
                    success,
                    ..original.clone()
                });
                stored += 1;
            }
            self.push(original);
            stored += 1;
        }
        Ok(stored)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, EnvConfig, Observation, Task};
    use crate::rewards::RewardKind;
    use crate::rng::stream;
    use crate::rollout::{rollout, FnPolicy};

    fn random_episode(seed: u64, task: Task, spec: &RewardSpec) -> RecordedEpisode {
        let env = Env::new(EnvConfig::default(), task).unwrap();
        let policy = FnPolicy(|o: &Observation| {
            // Deterministic wiggle driven by the state so achieved goals vary.
            let f = &o.features;
            Action::new((f[0] * 37.0).sin(), (f[1] * 53.0).cos(), -0.6, (f[2] * 11.0).sin())
        });
        rollout(&env, spec, &policy, &mut stream(seed, &[])).unwrap()
    }

    #[test]
    fn future_count_matches_index_oracle() {
        let spec = RewardSpec::new(RewardKind::Vanilla);
        let ep = random_episode(0, Task::PickAndPlace, &spec);
        let mut buf = ReplayBuffer::new(10_000);
        let strategy = RelabelStrategy::default();
        let n = buf.store_episode(&ep, &strategy, &spec, &mut stream(1, &[])).unwrap();
        let expected: usize = (0..50).map(|t| 1 + 4usize.min(49 - t)).sum();
        assert_eq!(n, expected);
        assert_eq!(n, 240);
        assert_eq!(buf.len(), 240);
    }

    #[test]
    fn disabled_relabeling_stores_each_step_once() {
        let spec = RewardSpec::new(RewardKind::PrioritizedXyz);
        let ep = random_episode(2, Task::PickAndPlace, &spec);
        let mut buf = ReplayBuffer::new(1000);
        let n = buf
            .store_episode(&ep, &RelabelStrategy::disabled(), &spec, &mut stream(1, &[]))
            .unwrap();
        assert_eq!(n, 50);
        for (t, tr) in buf.iter().enumerate() {
            assert_eq!(tr.goal, ep.trace.goal);
            assert_eq!(tr.reward, ep.trace.rewards[t]);
        }
    }

    #[test]
    fn final_relabel_of_last_step_is_a_success() {
        let spec = RewardSpec::new(RewardKind::PrioritizedXyz);
        let ep = random_episode(4, Task::Reach, &spec);
        let mut buf = ReplayBuffer::new(1000);
        let strategy = RelabelStrategy {
            kind: RelabelKind::Final,
            k: 1,
        };
        buf.store_episode(&ep, &strategy, &spec, &mut stream(1, &[])).unwrap();
        let all: Vec<&Transition> = buf.iter().collect();
        assert_eq!(all.len(), 100);
        // The relabeled copy precedes its original.
        let last = all[98];
        assert_eq!(last.goal, *ep.achieved_goals.last().unwrap());
        assert!(last.success);
        // Reach: the gripper is the achieved goal, so shaping vanishes too.
        assert_eq!(last.reward, spec.success_reward);
    }

    #[test]
    fn empty_episode_is_rejected() {
        let spec = RewardSpec::new(RewardKind::Vanilla);
        let mut ep = random_episode(0, Task::Reach, &spec);
        ep.trace.actions.clear();
        ep.trace.rewards.clear();
        ep.trace.success_flags.clear();
        ep.trace.gripper_positions.truncate(1);
        ep.trace.object_positions.truncate(1);
        ep.features.truncate(1);
        ep.achieved_goals.truncate(1);
        let mut buf = ReplayBuffer::new(10);
        assert!(matches!(
            buf.store_episode(&ep, &RelabelStrategy::default(), &spec, &mut stream(0, &[])),
            Err(Error::EmptyEpisode)
        ));
    }

    fn tagged(tag: f64) -> Transition {
        Transition {
            observation_features: [tag; FEATURE_DIM],
            action: Action::default(),
            reward: tag,
            next_observation_features: [tag; FEATURE_DIM],
            goal: Vec3::ZERO,
            achieved_goal_next: Vec3::ZERO,
            gripper_pos: Vec3::ZERO,
            next_gripper_pos: Vec3::ZERO,
            success: false,
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut buf = ReplayBuffer::new(5);
        for i in 0..8 {
            buf.push(tagged(i as f64));
        }
        assert_eq!(buf.len(), 5);
        let kept: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(kept, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn sampling_edge_cases() {
        let buf = ReplayBuffer::new(3);
        assert!(matches!(buf.sample_batch(1, &mut stream(0, &[])), Err(Error::EmptyBuffer)));
        let mut buf = buf;
        buf.push(tagged(9.0));
        let batch = buf.sample_batch(3, &mut stream(0, &[])).unwrap();
        assert_eq!(batch.len(), 3);
        assert!(batch.iter().all(|t| t.reward == 9.0));
    }

    #[test]
    fn sampling_is_seeded_and_uniform() {
        let mut buf = ReplayBuffer::new(10);
        for i in 0..10 {
            buf.push(tagged(i as f64));
        }
        let draw = |seed| -> Vec<f64> {
            buf.sample_batch(50, &mut stream(seed, &[])).unwrap().iter().map(|t| t.reward).collect()
        };
        assert_eq!(draw(4), draw(4));
        let n = 100_000;
        let mut counts = [0usize; 10];
        for t in buf.sample_batch(n, &mut stream(8, &[])).unwrap() {
            counts[t.reward as usize] += 1;
        }
        let mean = n as f64 / 10.0;
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 5.0 * sigma, "{counts:?}");
        }
    }
}
