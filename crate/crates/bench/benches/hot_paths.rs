//! Benchmarks for the inner loops of training: network passes, one DDPG
//! batch update, environment stepping, and hindsight storage.

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng as _;
use shaped_pick_core::agent::CRITIC_INPUT;
use shaped_pick_core::rng::{stream, Rng};
use shaped_pick_core::rollout::{rollout, Policy, RecordedEpisode};
use shaped_pick_core::{
    Action, Activation, DdpgAgent, DdpgHyper, Env, EnvConfig, Mlp, Observation, RelabelStrategy,
    ReplayBuffer, RewardKind, RewardSpec, Task,
};

const BATCH: usize = 128;

struct Uniform;

impl Policy for Uniform {
    fn act(&self, _: &Observation, rng: &mut Rng) -> Action {
        Action::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    }
}

fn episodes(n: usize, spec: &RewardSpec, rng: &mut Rng) -> Vec<RecordedEpisode> {
    let env = Env::new(EnvConfig::default(), Task::PickAndPlace).unwrap();
    (0..n).map(|_| rollout(&env, spec, &Uniform, rng).unwrap()).collect()
}

fn bench_mlp(c: &mut Criterion) {
    let mut rng = stream(0, &[1]);
    let net = Mlp::init(&[CRITIC_INPUT, 64, 64, 1], Activation::Identity, &mut rng).unwrap();
    let input: Vec<f64> = (0..BATCH * CRITIC_INPUT).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grad = vec![1.0 / BATCH as f64; BATCH];

    let mut group = c.benchmark_group("mlp_21x64x64x1_batch128");
    group.bench_function("forward", |b| {
        b.iter(|| net.forward_batch(black_box(&input), BATCH).unwrap())
    });
    let (_, cache) = net.forward_batch(&input, BATCH).unwrap();
    group.bench_function("backward", |b| {
        b.iter(|| net.backward(black_box(&cache), black_box(&grad)).unwrap())
    });
    group.finish();
}

fn bench_train_batch(c: &mut Criterion) {
    let mut rng = stream(0, &[2]);
    let spec = RewardSpec::new(RewardKind::PrioritizedXyz);
    let hyper = DdpgHyper::default().resolved(&spec);
    let mut agent = DdpgAgent::new(Task::PickAndPlace, hyper, &spec, &mut rng).unwrap();
    let mut buffer = ReplayBuffer::new(ReplayBuffer::DEFAULT_CAPACITY);
    for ep in episodes(16, &spec, &mut rng) {
        agent.normalizer_update(&ep);
        buffer
            .store_episode(&ep, &RelabelStrategy::default(), &spec, &mut rng)
            .unwrap();
    }
    c.bench_function("ddpg_train_batch_128", |b| {
        b.iter(|| {
            let batch = buffer.sample_batch(BATCH, &mut rng).unwrap();
            agent.train_batch(&batch).unwrap()
        })
    });
}

fn bench_env(c: &mut Criterion) {
    let env = Env::new(EnvConfig::default(), Task::PickAndPlace).unwrap();
    let mut rng = stream(0, &[3]);
    let (state, _) = env.reset(&mut rng).unwrap();
    let action = Action::new(0.3, -0.2, 0.1, -1.0);
    c.bench_function("env_step", |b| b.iter(|| env.step(black_box(&state), action).unwrap()));

    let spec = RewardSpec::new(RewardKind::Manhattan);
    c.bench_function("rollout_50_steps", |b| {
        b.iter(|| rollout(&env, &spec, &Uniform, &mut rng).unwrap())
    });
}

fn bench_store(c: &mut Criterion) {
    let mut rng = stream(0, &[4]);
    let spec = RewardSpec::new(RewardKind::PrioritizedXyz);
    let ep = episodes(1, &spec, &mut rng).pop().unwrap();
    let strategy = RelabelStrategy::default();
    c.bench_function("store_episode_future_k4", |b| {
        b.iter_batched(
            || ReplayBuffer::new(1024),
            |mut buffer| buffer.store_episode(&ep, &strategy, &spec, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_mlp, bench_train_batch, bench_env, bench_store);
criterion_main!(benches);
