//! Goal-conditioned DDPG: deterministic tanh actor, scalar critic, Polyak
//! target copies, and running-moment input normalization.
//!
//! Network inputs are `normalize(features) || normalize(goal)` for the actor
//! and the same plus the raw action for the critic.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation, Task, ACTION_DIM, FEATURE_DIM, GOAL_DIM};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Mlp};
use crate::replay::Transition;
use crate::rewards::RewardSpec;
use crate::rng::Rng;
use crate::rollout::{Policy, RecordedEpisode};
use crate::vec3::Vec3;

pub const ACTOR_INPUT: usize = FEATURE_DIM + GOAL_DIM;
pub const CRITIC_INPUT: usize = ACTOR_INPUT + ACTION_DIM;

const STD_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgHyper {
    pub gamma: f64,
    /// Fraction of the target parameters retained per target update.
    pub polyak: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub random_action_probability: f64,
    /// Gaussian exploration noise, as a fraction of the action range.
    pub gaussian_noise_scale: f64,
    /// Clip critic targets to the sparse return range. `None` resolves to
    /// `true` for the vanilla reward and `false` for shaped rewards.
    pub clip_return: Option<bool>,
    /// Weight of the mean squared action penalty in the actor objective.
    pub action_l2: f64,
    pub hidden_sizes: Vec<usize>,
    pub normalizer_clip: f64,
}

impl Default for DdpgHyper {
    fn default() -> Self {
        DdpgHyper {
            gamma: 0.98,
            polyak: 0.95,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            batch_size: 128,
            random_action_probability: 0.3,
            gaussian_noise_scale: 0.2,
            clip_return: None,
            action_l2: 1.0,
            hidden_sizes: vec![64, 64],
            normalizer_clip: 5.0,
        }
    }
}

impl DdpgHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("hyper.gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad(format!("hyper.polyak must lie in [0, 1], got {}", self.polyak));
        }
        for (name, v) in [
            ("hyper.actor_lr", self.actor_lr),
            ("hyper.critic_lr", self.critic_lr),
            ("hyper.normalizer_clip", self.normalizer_clip),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.random_action_probability) {
            return bad("hyper.random_action_probability must lie in [0, 1]".into());
        }
        if !(self.gaussian_noise_scale >= 0.0 && self.action_l2 >= 0.0) {
            return bad("hyper.gaussian_noise_scale and hyper.action_l2 must be non-negative".into());
        }
        if self.batch_size == 0 {
            return bad("hyper.batch_size must be at least 1".into());
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hyper.hidden_sizes entries must be positive".into());
        }
        Ok(())
    }

    /// Fills in `clip_return` for the given reward.
    pub fn resolved(mut self, spec: &RewardSpec) -> Self {
        if self.clip_return.is_none() {
            self.clip_return = Some(spec.kind() == crate::rewards::RewardKind::Vanilla);
        }
        self
    }
}

/// Running per-dimension moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMoments {
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub count: u64,
}

impl RunningMoments {
    pub fn new(dim: usize) -> Self {
        RunningMoments {
            sum: vec![0.0; dim],
            sum_sq: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        for ((s, q), &v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(x) {
            *s += v;
            *q += v * v;
        }
        self.count += 1;
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum[i] / self.count as f64
        }
    }

    /// Population standard deviation (1 before any data).
    pub fn std(&self, i: usize) -> f64 {
        if self.count == 0 {
            return 1.0;
        }
        let mean = self.mean(i);
        (self.sum_sq[i] / self.count as f64 - mean * mean).max(0.0).sqrt()
    }

    fn normalize_into(&self, x: &[f64], clip: f64, out: &mut Vec<f64>) {
        for (i, &v) in x.iter().enumerate() {
            let z = (v - self.mean(i)) / self.std(i).max(STD_FLOOR);
            out.push(z.clamp(-clip, clip));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub features: RunningMoments,
    pub goal: RunningMoments,
    pub clip_range: f64,
}

impl Normalizer {
    pub fn new(clip_range: f64) -> Self {
        Normalizer {
            features: RunningMoments::new(FEATURE_DIM),
            goal: RunningMoments::new(GOAL_DIM),
            clip_range,
        }
    }

    /// Adds every state's features, the desired goal and every achieved goal.
    pub fn update(&mut self, episode: &RecordedEpisode) {
        for f in &episode.features {
            self.features.push(f);
        }
        let desired = episode.trace.goal.to_array();
        for achieved in &episode.achieved_goals {
            self.goal.push(&desired);
            self.goal.push(&achieved.to_array());
        }
    }

    /// Appends the normalized actor input for one state to `out`.
    pub fn actor_input_into(&self, features: &[f64; FEATURE_DIM], goal: Vec3, out: &mut Vec<f64>) {
        self.features.normalize_into(features, self.clip_range, out);
        self.goal.normalize_into(&goal.to_array(), self.clip_range, out);
    }

    pub fn actor_input(&self, features: &[f64; FEATURE_DIM], goal: Vec3) -> Vec<f64> {
        let mut out = Vec::with_capacity(ACTOR_INPUT);
        self.actor_input_into(features, goal, &mut out);
        out
    }
}

/// Which exploration branch produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exploration {
    Greedy,
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLosses {
    pub critic: f64,
    pub actor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpgAgent {
    pub task: Task,
    pub hyper: DdpgHyper,
    /// Critic target bounds when return clipping is enabled.
    pub return_clip: Option<(f64, f64)>,
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    pub actor_adam: AdamState,
    pub critic_adam: AdamState,
    pub normalizer: Normalizer,
}

impl DdpgAgent {
    /// Fresh agent; target networks start as exact copies.
    pub fn new(task: Task, hyper: DdpgHyper, spec: &RewardSpec, rng: &mut Rng) -> Result<Self> {
        let hyper = hyper.resolved(spec);
        hyper.validate()?;
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&hyper.hidden_sizes);
            s.push(output);
            s
        };
        let actor = Mlp::init(&sizes(ACTOR_INPUT, ACTION_DIM), Activation::Tanh, rng)?;
        let critic = Mlp::init(&sizes(CRITIC_INPUT, 1), Activation::Identity, rng)?;
        let return_clip = (hyper.clip_return == Some(true)).then(|| {
            let (lo, hi) = spec.sparse_bounds();
            (lo / (1.0 - hyper.gamma), hi / (1.0 - hyper.gamma))
        });
        Ok(DdpgAgent {
            task,
            return_clip,
            actor_adam: AdamState::new(&actor),
            critic_adam: AdamState::new(&critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            normalizer: Normalizer::new(hyper.normalizer_clip),
            actor,
            critic,
            hyper,
        })
    }

    /// Checks the invariants a deserialized agent must satisfy.
    pub fn validate(&self) -> Result<()> {
        let check = |net: &Mlp, input: usize, output: usize, what: &str| {
            if net.input_dim() != input || net.output_dim() != output {
                return Err(Error::Checkpoint(format!(
                    "{what} maps {} -> {}, expected {input} -> {output}",
                    net.input_dim(),
                    net.output_dim()
                )));
            }
            Ok(())
        };
        check(&self.actor, ACTOR_INPUT, ACTION_DIM, "actor")?;
        check(&self.critic, CRITIC_INPUT, 1, "critic")?;
        if !self.target_actor.same_shape(&self.actor) || !self.target_critic.same_shape(&self.critic) {
            return Err(Error::Checkpoint("target networks differ in shape from main networks".into()));
        }
        if !self.actor_adam.matches(&self.actor) || !self.critic_adam.matches(&self.critic) {
            return Err(Error::Checkpoint("optimizer state does not match network shape".into()));
        }
        if self.normalizer.features.sum.len() != FEATURE_DIM || self.normalizer.goal.sum.len() != GOAL_DIM {
            return Err(Error::Checkpoint("normalizer dimensions do not match observation layout".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let agent: DdpgAgent = serde_json::from_str(text)?;
        agent.validate()?;
        Ok(agent)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Deterministic policy output in `(-1, 1)^4`.
    pub fn greedy_action(&self, obs: &Observation) -> Action {
        let input = self.normalizer.actor_input(&obs.features, obs.desired_goal);
        let out = self.actor.predict(&input).expect("actor input has fixed width");
        Action::from_slice(&out)
    }

    /// Applies the exploration scheme to a greedy action.
    pub fn explore(&self, greedy: Action, rng: &mut Rng) -> (Action, Exploration) {
        if rng.gen_bool(self.hyper.random_action_probability) {
            let mut u = || rng.gen_range(-1.0..=1.0);
            return (Action::new(u(), u(), u(), u()), Exploration::Uniform);
        }
        let sigma = self.hyper.gaussian_noise_scale;
        let mut noisy = greedy.to_array();
        for v in &mut noisy {
            let n: f64 = StandardNormal.sample(rng);
            *v = (*v + sigma * n).clamp(-1.0, 1.0);
        }
        (Action::from_slice(&noisy), Exploration::Gaussian)
    }

    pub fn act(&self, obs: &Observation, explore: bool, rng: &mut Rng) -> Action {
        let greedy = self.greedy_action(obs);
        if explore {
            self.explore(greedy, rng).0
        } else {
            greedy
        }
    }

    pub fn normalizer_update(&mut self, episode: &RecordedEpisode) {
        self.normalizer.update(episode);
    }

    /// One critic and one actor Adam step on `batch`. Returns the losses
    /// measured before the step. Target networks are left untouched.
    pub fn train_batch(&mut self, batch: &[&Transition]) -> Result<BatchLosses> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Config("training batch is empty".into()));
        }
        let norm = &self.normalizer;
        let mut states = Vec::with_capacity(n * ACTOR_INPUT);
        let mut next_states = Vec::with_capacity(n * ACTOR_INPUT);
        for t in batch {
            norm.actor_input_into(&t.observation_features, t.goal, &mut states);
            norm.actor_input_into(&t.next_observation_features, t.goal, &mut next_states);
        }

        // Bellman targets from the target networks.
        let (next_actions, _) = self.target_actor.forward_batch(&next_states, n)?;
        let next_q_input = concat_rows(&next_states, ACTOR_INPUT, &next_actions, ACTION_DIM);
        let (next_q, _) = self.target_critic.forward_batch(&next_q_input, n)?;
        let gamma = self.hyper.gamma;
        let targets: Vec<f64> = batch
            .iter()
            .zip(&next_q)
            .map(|(t, q)| {
                let y = t.reward + gamma * q;
                match self.return_clip {
                    Some((lo, hi)) => y.clamp(lo, hi),
                    None => y,
                }
            })
            .collect();

        // Critic regression.
        let actions: Vec<f64> = batch.iter().flat_map(|t| t.action.to_array()).collect();
        let q_input = concat_rows(&states, ACTOR_INPUT, &actions, ACTION_DIM);
        let (q, critic_cache) = self.critic.forward_batch(&q_input, n)?;
        let inv_n = 1.0 / n as f64;
        let critic_loss = q.iter().zip(&targets).map(|(q, y)| (q - y) * (q - y)).sum::<f64>() * inv_n;
        let q_grad: Vec<f64> = q.iter().zip(&targets).map(|(q, y)| 2.0 * (q - y) * inv_n).collect();
        let (critic_grads, _) = self.critic.backward(&critic_cache, &q_grad)?;

        // Actor ascent on Q through the critic's action input.
        let (pi, actor_cache) = self.actor.forward_batch(&states, n)?;
        let pi_input = concat_rows(&states, ACTOR_INPUT, &pi, ACTION_DIM);
        let (pi_q, pi_cache) = self.critic.forward_batch(&pi_input, n)?;
        let l2 = self.hyper.action_l2;
        let l2_scale = 1.0 / (n * ACTION_DIM) as f64;
        let actor_loss = -pi_q.iter().sum::<f64>() * inv_n
            + l2 * pi.iter().map(|a| a * a).sum::<f64>() * l2_scale;
        let d_input = self.critic.input_gradient(&pi_cache, &vec![-inv_n; n])?;
        let mut d_pi = Vec::with_capacity(n * ACTION_DIM);
        for (row, a) in d_input.chunks_exact(CRITIC_INPUT).zip(pi.chunks_exact(ACTION_DIM)) {
            for (g, &av) in row[ACTOR_INPUT..].iter().zip(a) {
                d_pi.push(g + 2.0 * l2 * av * l2_scale);
            }
        }
        let (actor_grads, _) = self.actor.backward(&actor_cache, &d_pi)?;

        if !critic_loss.is_finite() {
            return Err(Error::NonFinite(format!("critic loss ({critic_loss})")));
        }
        if !actor_loss.is_finite() {
            return Err(Error::NonFinite(format!("actor loss ({actor_loss})")));
        }
        self.critic_adam
            .step(&mut self.critic, &critic_grads, self.hyper.critic_lr)?;
        self.actor_adam
            .step(&mut self.actor, &actor_grads, self.hyper.actor_lr)?;
        Ok(BatchLosses {
            critic: critic_loss,
            actor: actor_loss,
        })
    }

    pub fn update_targets(&mut self) {
        let polyak = self.hyper.polyak;
        self.target_actor.soft_update(&self.actor, polyak);
        self.target_critic.soft_update(&self.critic, polyak);
    }
}

fn concat_rows(a: &[f64], a_width: usize, b: &[f64], b_width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.chunks_exact(a_width).zip(b.chunks_exact(b_width)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

/// Acts with the deterministic policy.
pub struct Greedy<'a>(pub &'a DdpgAgent);

impl Policy for Greedy<'_> {
    fn act(&self, obs: &Observation, _rng: &mut Rng) -> Action {
        self.0.greedy_action(obs)
    }
}

/// Acts with exploration noise.
pub struct Exploring<'a>(pub &'a DdpgAgent);

impl Policy for Exploring<'_> {
    fn act(&self, obs: &Observation, rng: &mut Rng) -> Action {
        self.0.act(obs, true, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, EnvConfig};
    use crate::rewards::RewardKind;
    use crate::rng::stream;
    use crate::rollout::{rollout, FnPolicy};

    fn agent(seed: u64, kind: RewardKind) -> DdpgAgent {
        DdpgAgent::new(
            Task::PickAndPlace,
            DdpgHyper::default(),
            &RewardSpec::new(kind),
            &mut stream(seed, &[]),
        )
        .unwrap()
    }

    fn obs() -> Observation {
        let env = Env::new(EnvConfig::default(), Task::PickAndPlace).unwrap();
        let (s, g) = env.reset(&mut stream(1, &[])).unwrap();
        env.observe(&s, g)
    }

    fn sample_transition(reward: f64, success: bool) -> Transition {
        let o = obs();
        Transition {
            observation_features: o.features,
            action: Action::new(0.1, -0.2, 0.3, -0.4),
            reward,
            next_observation_features: o.features,
            goal: o.desired_goal,
            achieved_goal_next: o.achieved_goal,
            gripper_pos: Vec3::from_slice(&o.features[..3]),
            next_gripper_pos: Vec3::from_slice(&o.features[..3]),
            success,
        }
    }

    #[test]
    fn shapes_follow_layout() {
        let a = agent(0, RewardKind::Vanilla);
        assert_eq!(a.actor.layer_sizes(), &[17, 64, 64, 4]);
        assert_eq!(a.critic.layer_sizes(), &[21, 64, 64, 1]);
        assert_eq!(a.target_actor, a.actor);
        let (lo, hi) = a.return_clip.unwrap();
        assert!((lo + 50.0).abs() < 1e-9 && (hi - 50.0).abs() < 1e-9);
        assert_eq!(agent(0, RewardKind::Manhattan).return_clip, None);
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let a = agent(3, RewardKind::Vanilla);
        let o = obs();
        let mut rng = stream(0, &[]);
        let first = a.act(&o, false, &mut rng);
        assert_eq!(first, a.act(&o, false, &mut rng));
        assert!(first.to_array().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn uniform_branch_frequency() {
        let a = agent(3, RewardKind::Vanilla);
        let greedy = a.greedy_action(&obs());
        let mut rng = stream(2, &[]);
        let n = 10_000;
        let mut uniform = 0;
        for _ in 0..n {
            let (act, branch) = a.explore(greedy, &mut rng);
            assert!(act.to_array().iter().all(|v| v.abs() <= 1.0));
            uniform += usize::from(branch == Exploration::Uniform);
        }
        let p = 0.3;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((uniform as f64 - n as f64 * p).abs() <= 5.0 * sigma, "{uniform}");
    }

    #[test]
    fn zero_critic_first_target_is_reward() {
        let mut a = agent(1, RewardKind::Vanilla);
        for net in [&mut a.critic, &mut a.target_critic] {
            for w in net.weights_mut() {
                w.fill(0.0);
            }
        }
        let t = sample_transition(1.0, true);
        let losses = a.train_batch(&[&t]).unwrap();
        assert_eq!(losses.critic, 1.0);
    }

    #[test]
    fn train_batch_leaves_targets_alone_and_is_deterministic() {
        let t = sample_transition(-1.0, false);
        let u = sample_transition(1.0, true);
        let batch = [&t, &u, &t];
        let mut a = agent(7, RewardKind::PrioritizedXyz);
        let mut b = agent(7, RewardKind::PrioritizedXyz);
        let (ta, tc) = (a.target_actor.clone(), a.target_critic.clone());
        for _ in 0..3 {
            a.train_batch(&batch).unwrap();
            b.train_batch(&batch).unwrap();
        }
        assert_eq!(a.target_actor, ta);
        assert_eq!(a.target_critic, tc);
        assert_ne!(a.actor, ta);
        assert_eq!(a, b);
    }

    #[test]
    fn polyak_cases() {
        let mut a = agent(0, RewardKind::Vanilla);
        for w in a.actor.weights_mut() {
            w.fill(1.0);
        }
        for w in a.target_actor.weights_mut() {
            w.fill(0.0);
        }
        a.update_targets();
        assert!(a.target_actor.weights()[0].iter().all(|&v| (v - 0.05).abs() < 1e-15));
        let before = a.target_actor.clone();
        a.hyper.polyak = 1.0;
        a.update_targets();
        assert_eq!(a.target_actor, before);
        a.hyper.polyak = 0.0;
        a.update_targets();
        assert_eq!(a.target_actor, a.actor);
    }

    #[test]
    fn target_update_contracts_toward_main() {
        let mut a = agent(0, RewardKind::Vanilla);
        let t = sample_transition(-1.0, false);
        for _ in 0..5 {
            a.train_batch(&[&t]).unwrap();
        }
        let mut last = a.target_actor.max_abs_diff(&a.actor);
        for _ in 0..10 {
            a.update_targets();
            let d = a.target_actor.max_abs_diff(&a.actor);
            assert!(d <= last);
            last = d;
        }
    }

    #[test]
    fn normalizer_two_point_moments() {
        let mut m = RunningMoments::new(2);
        m.push(&[0.0, 5.0]);
        m.push(&[2.0, 5.0]);
        assert_eq!(m.mean(0), 1.0);
        assert_eq!(m.std(0), 1.0);
        let mut out = Vec::new();
        m.normalize_into(&[2.0, 5.0], 5.0, &mut out);
        assert_eq!(out[0], 1.0);
        assert_eq!(out[1], 0.0);
        out.clear();
        m.normalize_into(&[1e6, 5.0], 5.0, &mut out);
        assert_eq!(out[0], 5.0);
    }

    #[test]
    fn normalizer_constant_stream_maps_to_zero() {
        let env = Env::new(EnvConfig::default(), Task::PickAndPlace).unwrap();
        let spec = RewardSpec::new(RewardKind::Vanilla);
        let still = FnPolicy(|_: &Observation| Action::new(0.0, 0.0, 0.0, 1.0));
        let ep = rollout(&env, &spec, &still, &mut stream(0, &[])).unwrap();
        let mut n = Normalizer::new(5.0);
        n.update(&ep);
        assert_eq!(n.features.count, 51);
        let z = n.actor_input(&ep.features[10], ep.trace.goal);
        // Every feature is constant across this episode.
        assert!(z[..FEATURE_DIM].iter().all(|v| v.abs() < 1e-9), "{z:?}");
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let mut a = agent(5, RewardKind::Manhattan);
        let t = sample_transition(-3.5, false);
        a.train_batch(&[&t]).unwrap();
        let text = a.to_json().unwrap();
        let back = DdpgAgent::from_json(&text).unwrap();
        assert_eq!(back, a);
        let mut broken = a.clone();
        broken.normalizer.goal = RunningMoments::new(2);
        assert!(DdpgAgent::from_json(&broken.to_json().unwrap()).is_err());
    }
}
