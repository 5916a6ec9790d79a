//! Epoch / cycle / episode training loop, evaluation, and run-directory
//! output.
//!
//! One epoch is `cycles_per_epoch` cycles. A cycle rolls out
//! `episodes_per_cycle` exploratory episodes (each stored with hindsight
//! relabeling and folded into the normalizer), then runs
//! `optimizer_steps_per_cycle` minibatch updates followed by one target
//! update. After every epoch the greedy policy is evaluated on fresh goals.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{DdpgAgent, DdpgHyper, Exploring, Greedy};
use crate::env::{Env, EnvConfig, Task};
use crate::error::{Error, Result};
use crate::replay::{RelabelStrategy, ReplayBuffer};
use crate::rewards::{RewardKind, RewardSpec};
use crate::rng::{label, stream, Rng};
use crate::rollout::{rollout, Policy};

pub const METRICS_HEADER: &str = "epoch,train_success,eval_success,critic_loss,actor_loss,wall_seconds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::cycles_per_epoch")]
    pub cycles_per_epoch: usize,
    #[serde(default = "defaults::episodes_per_cycle")]
    pub episodes_per_cycle: usize,
    #[serde(default = "defaults::optimizer_steps_per_cycle")]
    pub optimizer_steps_per_cycle: usize,
    #[serde(default = "defaults::eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub task: Task,
    #[serde(default)]
    pub env: EnvConfig,
    pub reward: RewardSpec,
    #[serde(default)]
    pub hyper: DdpgHyper,
    #[serde(default)]
    pub strategy: RelabelStrategy,
    #[serde(default = "defaults::buffer_capacity")]
    pub buffer_capacity: usize,
    /// Write a checkpoint every this many epochs; the last epoch is always
    /// checkpointed.
    #[serde(default = "defaults::checkpoint_every")]
    pub checkpoint_every: usize,
    /// Record measured wall time in `metrics.csv`. Off by default so the file
    /// depends only on the seed and config.
    #[serde(default)]
    pub record_wall_time: bool,
}

mod defaults {
    pub fn epochs() -> usize {
        150
    }
    pub fn cycles_per_epoch() -> usize {
        10
    }
    pub fn episodes_per_cycle() -> usize {
        16
    }
    pub fn optimizer_steps_per_cycle() -> usize {
        40
    }
    pub fn eval_episodes() -> usize {
        20
    }
    pub fn buffer_capacity() -> usize {
        crate::replay::ReplayBuffer::DEFAULT_CAPACITY
    }
    pub fn checkpoint_every() -> usize {
        10
    }
}

impl TrainConfig {
    pub fn new(task: Task, kind: RewardKind, seed: u64) -> Self {
        TrainConfig {
            epochs: defaults::epochs(),
            cycles_per_epoch: defaults::cycles_per_epoch(),
            episodes_per_cycle: defaults::episodes_per_cycle(),
            optimizer_steps_per_cycle: defaults::optimizer_steps_per_cycle(),
            eval_episodes: defaults::eval_episodes(),
            seed,
            task,
            env: EnvConfig::default(),
            reward: RewardSpec::new(kind),
            hyper: DdpgHyper::default(),
            strategy: RelabelStrategy::default(),
            buffer_capacity: defaults::buffer_capacity(),
            checkpoint_every: defaults::checkpoint_every(),
            record_wall_time: false,
        }
    }

    /// Validates and materializes every derived default.
    pub fn resolved(mut self) -> Result<Self> {
        self.hyper = self.hyper.resolved(&self.reward);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("cycles_per_epoch", self.cycles_per_epoch),
            ("episodes_per_cycle", self.episodes_per_cycle),
            ("optimizer_steps_per_cycle", self.optimizer_steps_per_cycle),
            ("eval_episodes", self.eval_episodes),
            ("buffer_capacity", self.buffer_capacity),
            ("checkpoint_every", self.checkpoint_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        self.env.validate()?;
        self.reward.validate()?;
        self.hyper.validate()?;
        if self.env.success_threshold != self.reward.success_threshold {
            return Err(Error::Config(format!(
                "env.success_threshold ({}) and reward.success_threshold ({}) must agree",
                self.env.success_threshold, self.reward.success_threshold
            )));
        }
        Ok(())
    }

    pub fn env(&self) -> Result<Env> {
        Env::new(self.env.clone(), self.task)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.resolved()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_success: f64,
    pub eval_success: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub wall_seconds: f64,
}

impl EpochMetrics {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.train_success,
            self.eval_success,
            self.critic_loss,
            self.actor_loss,
            self.wall_seconds
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<EpochMetrics>,
}

impl RunMetrics {
    pub fn eval_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.eval_success).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.csv_row());
        }
        out
    }

    pub fn from_csv(text: &str, origin: &Path) -> Result<Self> {
        let fail = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            message: format!("line {line}: {message}"),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == METRICS_HEADER => {}
            _ => return Err(fail(1, format!("expected header `{METRICS_HEADER}`"))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(fail(i + 1, format!("expected 6 fields, got {}", f.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| fail(i + 1, format!("bad number `{s}`: {e}")))
            };
            rows.push(EpochMetrics {
                epoch: f[0]
                    .parse()
                    .map_err(|e| fail(i + 1, format!("bad epoch `{}`: {e}", f[0])))?,
                train_success: num(f[1])?,
                eval_success: num(f[2])?,
                critic_loss: num(f[3])?,
                actor_loss: num(f[4])?,
                wall_seconds: num(f[5])?,
            });
        }
        Ok(RunMetrics { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunMetrics::from_csv(&text, path)
    }
}

/// Smallest epoch `e` whose window `[e, e + window)` has mean at least
/// `threshold`.
pub fn convergence_epoch(series: &[f64], threshold: f64, window: usize) -> Option<usize> {
    assert!(window >= 1, "window must be at least 1");
    if series.len() < window {
        return None;
    }
    series
        .windows(window)
        .position(|w| w.iter().sum::<f64>() / window as f64 >= threshold)
}

/// Fraction of `n` greedy episodes whose final step is a success.
pub fn evaluate<P: Policy + ?Sized>(
    policy: &P,
    env: &Env,
    spec: &RewardSpec,
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    assert!(n >= 1, "evaluation needs at least one episode");
    let mut successes = 0;
    for _ in 0..n {
        if rollout(env, spec, policy, rng)?.trace.final_success() {
            successes += 1;
        }
    }
    Ok(successes as f64 / n as f64)
}

/// Deterministic evaluation stream for `epoch` of a run seeded with `seed`.
pub fn eval_stream(seed: u64, epoch: usize) -> Rng {
    stream(seed, &[label::EVAL, epoch as u64])
}

pub struct TrainOutcome {
    pub metrics: RunMetrics,
    pub agent: DdpgAgent,
    pub buffer_len: usize,
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn timing(&self) -> PathBuf {
        self.root.join("timing.csv")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints().join(format!("epoch_{epoch}.json"))
    }
    pub fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }
}

struct RunWriter {
    dir: RunDir,
    metrics: File,
    timing: File,
}

impl RunWriter {
    fn create(dir: RunDir, config: &TrainConfig) -> Result<Self> {
        for d in [&dir.root, &dir.checkpoints(), &dir.traces()] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let cfg_path = dir.config();
        fs::write(&cfg_path, config.to_json_pretty()? + "\n").map_err(|e| Error::io(&cfg_path, e))?;
        let open = |path: PathBuf, header: &str| -> Result<File> {
            let mut f = OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{header}").map_err(|e| Error::io(&path, e))?;
            Ok(f)
        };
        let metrics = open(dir.metrics(), METRICS_HEADER)?;
        let timing = open(dir.timing(), "epoch,wall_seconds")?;
        Ok(RunWriter {
            dir,
            metrics,
            timing,
        })
    }

    fn append(&mut self, row: &EpochMetrics, wall: f64) -> Result<()> {
        let path = self.dir.metrics();
        writeln!(self.metrics, "{}", row.csv_row())
            .and_then(|_| self.metrics.flush())
            .map_err(|e| Error::io(&path, e))?;
        let path = self.dir.timing();
        writeln!(self.timing, "{},{wall}", row.epoch)
            .and_then(|_| self.timing.flush())
            .map_err(|e| Error::io(&path, e))
    }

    fn checkpoint(&self, epoch: usize, agent: &DdpgAgent) -> Result<()> {
        let path = self.dir.checkpoint(epoch);
        fs::write(&path, agent.to_json()?).map_err(|e| Error::io(&path, e))
    }
}

/// Trains from scratch; writes the run directory when `out` is given.
pub fn run(config: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    run_with(config, out, |_, _| ControlFlow::Continue(()))
}

/// [`run`] with a per-epoch observer that may stop training early. The epoch
/// that triggered the stop is recorded and checkpointed.
pub fn run_with(
    config: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochMetrics, &DdpgAgent) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    let config = config.clone().resolved()?;
    let env = config.env()?;
    let spec = config.reward;
    let seed = config.seed;

    let mut writer = out
        .map(|root| RunWriter::create(RunDir::new(root), &config))
        .transpose()?;

    let mut agent = DdpgAgent::new(
        config.task,
        config.hyper.clone(),
        &spec,
        &mut stream(seed, &[label::INIT]),
    )?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut rollout_rng = stream(seed, &[label::ROLLOUT]);
    let mut relabel_rng = stream(seed, &[label::RELABEL]);
    let mut replay_rng = stream(seed, &[label::REPLAY]);

    let mut metrics = RunMetrics::default();
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut train_successes = 0usize;
        let mut critic_sum = 0.0;
        let mut actor_sum = 0.0;
        let mut updates = 0usize;
        for _cycle in 0..config.cycles_per_epoch {
            for _ in 0..config.episodes_per_cycle {
                let episode = rollout(&env, &spec, &Exploring(&agent), &mut rollout_rng)?;
                train_successes += usize::from(episode.trace.final_success());
                buffer.store_episode(&episode, &config.strategy, &spec, &mut relabel_rng)?;
                agent.normalizer_update(&episode);
            }
            for _ in 0..config.optimizer_steps_per_cycle {
                let batch = buffer.sample_batch(config.hyper.batch_size, &mut replay_rng)?;
                let losses = agent.train_batch(&batch).map_err(|e| Error::Halted {
                    epoch,
                    source: Box::new(e),
                })?;
                critic_sum += losses.critic;
                actor_sum += losses.actor;
                updates += 1;
            }
            agent.update_targets();
        }
        let eval_success = evaluate(
            &Greedy(&agent),
            &env,
            &spec,
            config.eval_episodes,
            &mut eval_stream(seed, epoch),
        )?;
        let wall = started.elapsed().as_secs_f64();
        let row = EpochMetrics {
            epoch,
            train_success: train_successes as f64
                / (config.cycles_per_epoch * config.episodes_per_cycle) as f64,
            eval_success,
            critic_loss: critic_sum / updates as f64,
            actor_loss: actor_sum / updates as f64,
            wall_seconds: if config.record_wall_time { wall } else { 0.0 },
        };
        metrics.rows.push(row);
        let stop = on_epoch(&row, &agent).is_break();
        if let Some(w) = writer.as_mut() {
            w.append(&row, wall)?;
            let last = stop || epoch + 1 == config.epochs;
            if last || (epoch + 1) % config.checkpoint_every == 0 {
                w.checkpoint(epoch, &agent)?;
            }
        }
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        metrics,
        agent,
        buffer_len: buffer.len(),
    })
}
