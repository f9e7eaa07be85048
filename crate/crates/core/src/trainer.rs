//! Actor-critic training of the diffusion policy on the allocation bandit:
//! replay buffer, twin critics with soft-updated targets, collect/update
//! cadence, and held-out evaluation against the oracle.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};

use crate::diffusion::{
    self, ChainNoise, ClipGradient, DiffusionPolicy, DiffusionSchedule, RawAction,
};
use crate::error::{Error, Result};
use crate::nn::{soft_update, Activation, AdamState, NetParams, NetSpec};
use crate::oracle::{self, BatchOracle};
use crate::pipeline::{self, Allocation, EnvState, PipelineConstants, ACTION_DIM, STATE_DIM};
use crate::scenario::{self, DistConfig, SeededStream};

/// Held-out states are drawn from this seed regardless of the training seed.
pub const DEFAULT_EVAL_SEED: u64 = 0x5EED_E7A1;

// stream ids under the training seed
const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_ACT: u64 = 2;
const STREAM_UPDATE: u64 = 3;
/// Stream id for the frozen noise of evaluation chains.
pub const STREAM_EVAL: u64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub state_norm: [f64; STATE_DIM],
    pub raw_action: RawAction,
    pub reward: f64,
    pub next_state_norm: [f64; STATE_DIM],
    pub done: bool,
}

/// FIFO replay memory; the oldest record is evicted at capacity.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<ReplayRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            records: VecDeque::new(),
        }
    }

    pub fn push(&mut self, r: ReplayRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn records(&self) -> impl Iterator<Item = &ReplayRecord> {
        self.records.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, stream: &mut SeededStream) -> Result<Batch> {
        if self.records.is_empty() || n == 0 {
            return Err(Error::EmptyBatch);
        }
        let picked: Vec<&ReplayRecord> = (0..n)
            .map(|_| &self.records[stream.index(self.records.len())])
            .collect();
        Ok(Batch::from_records(&picked))
    }
}

/// Column-stacked minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn from_records(recs: &[&ReplayRecord]) -> Self {
        let n = recs.len();
        Batch {
            states: Array2::from_shape_fn((n, STATE_DIM), |(i, j)| recs[i].state_norm[j]),
            actions: Array2::from_shape_fn((n, ACTION_DIM), |(i, j)| recs[i].raw_action[j]),
            rewards: recs.iter().map(|r| r.reward).collect(),
            next_states: Array2::from_shape_fn((n, STATE_DIM), |(i, j)| recs[i].next_state_norm[j]),
            done: recs.iter().map(|r| r.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Hyperparameters shared by the diffusion and PPO learners.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub steps_per_collect: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub explore_std: f64,
    pub eval_states: usize,
    pub eval_seed: u64,
    pub seed: u64,
    pub diffusion_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Critics regress `reward_scale * shape(reward)`; the greedy action is unchanged.
    pub reward_scale: f64,
    pub reward_shape: RewardShape,
    /// Grid resolution of the oracle used for evaluation ratios.
    pub oracle_resolution: usize,
    pub clip_gradient: ClipGradient,
}

impl TrainConfig {
    /// Desk-scale preset: 300 epochs of 100 steps.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 300,
            steps_per_epoch: 100,
            steps_per_collect: 100,
            buffer_capacity: 1_000_000,
            batch_size: 512,
            gamma: 0.0,
            tau: 0.005,
            lr_actor: 1e-4,
            lr_critic: 3e-4,
            explore_std: 0.01,
            eval_states: 1000,
            eval_seed: DEFAULT_EVAL_SEED,
            seed: 1,
            diffusion_steps: 5,
            beta_min: 0.1,
            beta_max: 0.5,
            actor_hidden: vec![128, 128],
            critic_hidden: vec![128, 128],
            reward_scale: 0.01,
            reward_shape: RewardShape::LogTail,
            oracle_resolution: oracle::DEFAULT_RESOLUTION,
            clip_gradient: ClipGradient::Inward,
        }
    }

    /// Long schedule: 3,000 epochs of 10 steps, learning rates 3e-7 / 3e-6.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 3000,
            steps_per_epoch: 10,
            lr_actor: 3e-7,
            lr_critic: 3e-6,
            ..Self::desk()
        }
    }

    /// PPO defaults: same cadence, smaller networks. PPO standardizes its
    /// advantages, so reward shaping is left off.
    pub fn ppo_desk() -> Self {
        Self::ppo_from(Self::desk())
    }

    pub fn ppo_paper() -> Self {
        Self::ppo_from(Self::paper())
    }

    fn ppo_from(base: Self) -> Self {
        TrainConfig {
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            reward_scale: 1.0,
            reward_shape: RewardShape::Linear,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.steps_per_epoch == 0 || self.steps_per_collect == 0 {
            return bad("steps_per_epoch and steps_per_collect must be positive".into());
        }
        if self.buffer_capacity == 0 || self.batch_size == 0 || self.eval_states == 0 {
            return bad("buffer_capacity, batch_size and eval_states must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.lr_actor >= 0.0 && self.lr_critic >= 0.0) {
            return bad("learning rates must be >= 0".into());
        }
        if self.explore_std.is_nan() || self.explore_std < 0.0 {
            return bad("explore_std must be >= 0".into());
        }
        if !(1..=20).contains(&self.diffusion_steps) {
            return bad(format!(
                "diffusion_steps must lie in 1..=20, got {}",
                self.diffusion_steps
            ));
        }
        DiffusionSchedule::new(self.diffusion_steps, self.beta_min, self.beta_max)
            .map_err(|e| Error::Validation(e.to_string()))?;
        if self.actor_hidden.is_empty()
            || self.critic_hidden.is_empty()
            || self.actor_hidden.contains(&0)
            || self.critic_hidden.contains(&0)
        {
            return bad("hidden layer lists must be non-empty with positive widths".into());
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be finite and > 0".into());
        }
        if self.oracle_resolution < 2 {
            return bad("oracle_resolution must be >= 2".into());
        }
        Ok(())
    }
}

/// Strictly increasing map applied to rewards before they become critic
/// targets. With one-step episodes it leaves every state's best action unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardShape {
    #[default]
    Linear,
    /// Identity for `r >= 0`, `-ln(1 - r)` below: compresses large penalties.
    LogTail,
}

impl RewardShape {
    pub fn apply(&self, r: f64) -> f64 {
        match self {
            RewardShape::Linear => r,
            RewardShape::LogTail => {
                if r >= 0.0 {
                    r
                } else {
                    -(-r).ln_1p()
                }
            }
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RewardShape::Linear => "linear",
            RewardShape::LogTail => "log_tail",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(RewardShape::Linear),
            "log_tail" => Some(RewardShape::LogTail),
            _ => None,
        }
    }
}

/// One row of a training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub env_steps: usize,
    pub mean_reward: f64,
    pub mean_utility: f64,
    pub feasible_fraction: f64,
    /// Mean over updates run during the epoch; NaN when none ran.
    pub actor_loss: f64,
    pub critic_loss: f64,
}

pub const CURVE_COLUMNS: [&str; 7] = [
    "epoch",
    "env_steps",
    "mean_reward",
    "mean_utility",
    "feasible_fraction",
    "actor_loss",
    "critic_loss",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurve {
    pub rows: Vec<CurveRow>,
}

/// Softmax of `2 * raw` spread over the bandwidth left above the floors.
pub fn action_to_allocation(raw: &RawAction, consts: &PipelineConstants) -> Allocation {
    let z = [2.0 * raw[0], 2.0 * raw[1], 2.0 * raw[2]];
    let m = z[0].max(z[1]).max(z[2]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp(), (z[2] - m).exp()];
    let sum = e[0] + e[1] + e[2];
    let spare = consts.spare_bandwidth();
    let w0 = consts.w_floor + spare * e[0] / sum;
    let w1 = consts.w_floor + spare * e[1] / sum;
    // last share absorbs rounding so the total is w_total
    let w2 = (consts.w_total - w0 - w1).max(consts.w_floor);
    Allocation::new(w0, w1, w2)
}

/// Inverse of [`action_to_allocation`] up to clipping into `[-1, 1]`.
pub fn allocation_to_action(alloc: &Allocation, consts: &PipelineConstants) -> RawAction {
    let spare = consts.spare_bandwidth();
    let l = alloc
        .to_array()
        .map(|w| (((w - consts.w_floor) / spare).max(1e-300)).ln() / 2.0);
    let mean = (l[0] + l[1] + l[2]) / 3.0;
    l.map(|v| (v - mean).clamp(-1.0, 1.0))
}

/// Sampling environment: i.i.d. states and immediate rewards.
#[derive(Debug, Clone)]
pub struct Env {
    pub consts: PipelineConstants,
    pub dist: DistConfig,
}

impl Env {
    pub fn new(consts: PipelineConstants, dist: DistConfig) -> Self {
        Env { consts, dist }
    }

    pub fn sample(&self, stream: &mut SeededStream) -> EnvState {
        scenario::sample_state(stream, &self.dist)
    }

    pub fn normalize(&self, s: &EnvState) -> [f64; STATE_DIM] {
        scenario::normalize_state(s, &self.dist)
    }

    pub fn normalize_batch(&self, states: &[EnvState]) -> Array2<f64> {
        let mut out = Array2::zeros((states.len(), STATE_DIM));
        for (mut row, s) in out.rows_mut().into_iter().zip(states) {
            row.assign(&ndarray::ArrayView1::from(&self.normalize(s)));
        }
        out
    }
}

/// A decision for one state: the stored raw action and the allocation applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub raw: RawAction,
    pub alloc: Allocation,
}

/// Anything that maps a batch of states to allocations.
pub trait Policy {
    /// `norm` holds the normalized states row by row. With `explore = false`
    /// the policy acts greedily (no exploration noise).
    fn act(
        &mut self,
        states: &[EnvState],
        norm: ArrayView2<f64>,
        stream: &mut SeededStream,
        explore: bool,
    ) -> Result<Vec<Decision>>;
}

/// Diffusion policy as an environment actor.
#[derive(Debug, Clone)]
pub struct DiffusionActor {
    pub policy: DiffusionPolicy,
    pub explore_std: f64,
    pub consts: PipelineConstants,
}

impl Policy for DiffusionActor {
    fn act(
        &mut self,
        _states: &[EnvState],
        norm: ArrayView2<f64>,
        stream: &mut SeededStream,
        explore: bool,
    ) -> Result<Vec<Decision>> {
        let std = if explore { self.explore_std } else { 0.0 };
        let a =
            diffusion::sample_actions(&self.policy.net, norm, &self.policy.schedule, stream, std)?;
        Ok(a.rows()
            .into_iter()
            .map(|r| {
                let raw = [r[0], r[1], r[2]];
                Decision {
                    raw,
                    alloc: action_to_allocation(&raw, &self.consts),
                }
            })
            .collect())
    }
}

/// Plays the oracle's allocation for each state.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    pub consts: PipelineConstants,
    pub resolution: usize,
}

impl Policy for OraclePolicy {
    fn act(
        &mut self,
        states: &[EnvState],
        _: ArrayView2<f64>,
        _: &mut SeededStream,
        _: bool,
    ) -> Result<Vec<Decision>> {
        Ok(states
            .iter()
            .map(|s| {
                let alloc = oracle::solve(s, &self.consts, self.resolution).alloc;
                Decision {
                    raw: allocation_to_action(&alloc, &self.consts),
                    alloc,
                }
            })
            .collect())
    }
}

/// Equal split regardless of state.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    pub consts: PipelineConstants,
}

impl Policy for UniformPolicy {
    fn act(
        &mut self,
        states: &[EnvState],
        _: ArrayView2<f64>,
        _: &mut SeededStream,
        _: bool,
    ) -> Result<Vec<Decision>> {
        Ok(states
            .iter()
            .map(|_| Decision {
                raw: [0.0; 3],
                alloc: Allocation::uniform(&self.consts),
            })
            .collect())
    }
}

/// Running totals of a collect call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CollectStats {
    pub steps: usize,
    pub reward_sum: f64,
    pub utility_sum: f64,
}

impl CollectStats {
    pub fn mean_reward(&self) -> f64 {
        self.reward_sum / self.steps as f64
    }
}

/// Runs `n_steps` bandit steps with exploration and appends them to `buffer`.
///
/// Every record is terminal; the next state is an independent draw.
pub fn collect<P: Policy>(
    env: &Env,
    policy: &mut P,
    n_steps: usize,
    buffer: &mut ReplayBuffer,
    env_stream: &mut SeededStream,
    act_stream: &mut SeededStream,
) -> Result<CollectStats> {
    if n_steps == 0 {
        return Err(Error::Invalid("collect needs n_steps >= 1".into()));
    }
    let states: Vec<EnvState> = (0..n_steps).map(|_| env.sample(env_stream)).collect();
    let norm = env.normalize_batch(&states);
    let decisions = policy.act(&states, norm.view(), act_stream, true)?;
    let mut stats = CollectStats::default();
    for (k, (s, d)) in states.iter().zip(&decisions).enumerate() {
        let r = pipeline::reward(s, &d.alloc, &env.consts);
        stats.steps += 1;
        stats.reward_sum += r;
        stats.utility_sum += pipeline::utility(s, &d.alloc, &env.consts);
        let next = env.sample(env_stream);
        let mut state_norm = [0.0; STATE_DIM];
        state_norm.copy_from_slice(norm.row(k).as_slice().unwrap());
        buffer.push(ReplayRecord {
            state_norm,
            raw_action: d.raw,
            reward: r,
            next_state_norm: env.normalize(&next),
            done: true,
        });
    }
    Ok(stats)
}

/// Critic MLP: `[state, action] -> Q`.
pub fn critic_spec(hidden: &[usize]) -> Result<NetSpec> {
    NetSpec::mlp(STATE_DIM + ACTION_DIM, hidden, 1, Activation::Identity)
}

/// A network with its Adam moments.
#[derive(Debug, Clone)]
pub struct Trainable {
    pub params: NetParams,
    pub adam: AdamState,
}

impl Trainable {
    pub fn new(params: NetParams) -> Self {
        let adam = AdamState::new(&params);
        Trainable { params, adam }
    }
}

/// Bootstrapped regression targets `r + gamma * (1 - done) * min(Q1', Q2')(s', a')`.
pub fn critic_targets(
    batch: &Batch,
    target_critics: [&NetParams; 2],
    target_actor: &DiffusionPolicy,
    gamma: f64,
    reward_map: (f64, RewardShape),
    stream: &mut SeededStream,
) -> Result<Vec<f64>> {
    let (scale, shape) = reward_map;
    let mut y: Vec<f64> = batch
        .rewards
        .iter()
        .map(|r| scale * shape.apply(*r))
        .collect();
    let bootstrap = gamma > 0.0 && batch.done.iter().any(|d| !d);
    if bootstrap {
        let noise = ChainNoise::draw(batch.len(), &target_actor.schedule, stream);
        let next_a = diffusion::denoise_chain(
            &target_actor.net,
            batch.next_states.view(),
            &target_actor.schedule,
            &noise,
        )?;
        let x = diffusion::critic_input(batch.next_states.view(), next_a.view());
        let q1 = target_critics[0].predict(x.view())?;
        let q2 = target_critics[1].predict(x.view())?;
        for (k, yk) in y.iter_mut().enumerate() {
            if !batch.done[k] {
                *yk += gamma * q1[[k, 0]].min(q2[[k, 0]]);
            }
        }
    }
    Ok(y)
}

/// One squared-loss regression step of a critic towards `targets`; returns the pre-step loss.
pub fn regress_critic(
    critic: &mut Trainable,
    x: ArrayView2<f64>,
    targets: &[f64],
    lr: f64,
) -> Result<f64> {
    let n = targets.len();
    let (q, cache) = critic.params.forward(x)?;
    let mut g = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for k in 0..n {
        let d = q[[k, 0]] - targets[k];
        loss += d * d;
        g[[k, 0]] = 2.0 * d / n as f64;
    }
    let (grads, _) = critic.params.backward(&cache, g.view())?;
    critic.adam.step(&mut critic.params, &grads, lr);
    Ok(loss / n as f64)
}

/// Regresses both critics to the shared bootstrapped target; returns both losses.
#[allow(clippy::too_many_arguments)]
pub fn critic_update(
    batch: &Batch,
    critics: [&mut Trainable; 2],
    target_critics: [&NetParams; 2],
    target_actor: &DiffusionPolicy,
    gamma: f64,
    reward_map: (f64, RewardShape),
    lr: f64,
    stream: &mut SeededStream,
) -> Result<[f64; 2]> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let y = critic_targets(
        batch,
        target_critics,
        target_actor,
        gamma,
        reward_map,
        stream,
    )?;
    let x = diffusion::critic_input(batch.states.view(), batch.actions.view());
    let [c1, c2] = critics;
    Ok([
        regress_critic(c1, x.view(), &y, lr)?,
        regress_critic(c2, x.view(), &y, lr)?,
    ])
}

/// One Adam step on the epsilon-network along the pathwise value gradient
/// of the first critic; returns the loss before the step.
pub fn actor_update(
    states: ArrayView2<f64>,
    actor: &mut DiffusionPolicy,
    adam: &mut AdamState,
    critic1: &NetParams,
    lr: f64,
    clip: ClipGradient,
    stream: &mut SeededStream,
) -> Result<f64> {
    if states.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let noise = ChainNoise::draw(states.nrows(), &actor.schedule, stream);
    let (loss, grads) = diffusion::policy_value_gradient(
        &actor.net,
        critic1,
        states,
        &actor.schedule,
        &noise,
        clip,
    )?;
    adam.step(&mut actor.net, &grads, lr);
    Ok(loss)
}

/// Held-out states with their oracle solutions.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub states: Vec<EnvState>,
    pub norm: Array2<f64>,
    pub oracle: BatchOracle,
    pub seed: u64,
}

impl EvalSet {
    pub fn new(env: &Env, n: usize, seed: u64, resolution: usize) -> Result<Self> {
        let states = scenario::state_stream(seed, n, &env.dist);
        Self::from_states(env, states, seed, resolution)
    }

    pub fn from_states(
        env: &Env,
        states: Vec<EnvState>,
        seed: u64,
        resolution: usize,
    ) -> Result<Self> {
        let oracle = oracle::batch_oracle(&states, &env.consts, resolution)?;
        let norm = env.normalize_batch(&states);
        Ok(EvalSet {
            states,
            norm,
            oracle,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean_reward: f64,
    pub mean_utility: f64,
    pub feasible_fraction: f64,
    pub per_state_utility: Vec<f64>,
    pub per_state_reward: Vec<f64>,
    pub allocations: Vec<Allocation>,
    /// Mean policy utility over the mean oracle utility, both taken over the
    /// states where the oracle found a feasible point. NaN if there are none.
    pub oracle_ratio: f64,
}

/// Greedy evaluation; the policy's own noise comes from a stream fixed by the set's seed.
pub fn evaluate<P: Policy>(
    policy: &mut P,
    set: &EvalSet,
    consts: &PipelineConstants,
) -> Result<EvalReport> {
    if set.states.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut stream = SeededStream::with_stream(set.seed, STREAM_EVAL);
    let decisions = policy.act(&set.states, set.norm.view(), &mut stream, false)?;
    let n = set.states.len() as f64;
    let mut per_state_utility = Vec::with_capacity(set.states.len());
    let mut per_state_reward = Vec::with_capacity(set.states.len());
    let mut feasible = 0usize;
    let (mut fu, mut fo, mut fc) = (0.0, 0.0, 0usize);
    for ((s, d), o) in set.states.iter().zip(&decisions).zip(&set.oracle.per_state) {
        let u = pipeline::utility(s, &d.alloc, consts);
        per_state_utility.push(u);
        per_state_reward.push(pipeline::reward(s, &d.alloc, consts));
        if pipeline::feasible(s, &d.alloc, consts) {
            feasible += 1;
        }
        if o.feasible {
            fu += u;
            fo += o.utility_star;
            fc += 1;
        }
    }
    let per_state_utility_mean = per_state_utility.iter().sum::<f64>() / n;
    Ok(EvalReport {
        mean_reward: per_state_reward.iter().sum::<f64>() / n,
        mean_utility: per_state_utility_mean,
        feasible_fraction: feasible as f64 / n,
        allocations: decisions.iter().map(|d| d.alloc).collect(),
        per_state_utility,
        per_state_reward,
        oracle_ratio: if fc > 0 { fu / fo } else { f64::NAN },
    })
}

/// Everything produced by a diffusion training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub curve: TrainingCurve,
    pub actor: DiffusionPolicy,
    pub critics: [NetParams; 2],
    pub final_eval: Option<EvalReport>,
}

/// Splits each epoch's steps into collect segments so that updates fire
/// once every `steps_per_collect` environment steps.
#[derive(Debug, Clone, Copy)]
pub struct Cadence {
    steps_per_epoch: usize,
    steps_per_collect: usize,
    pending: usize,
}

impl Cadence {
    pub fn new(cfg: &TrainConfig) -> Self {
        Cadence {
            steps_per_epoch: cfg.steps_per_epoch,
            steps_per_collect: cfg.steps_per_collect,
            pending: 0,
        }
    }

    /// Segments of one epoch: `(steps to collect, updates to run afterwards)`.
    pub fn epoch_segments(&mut self) -> Vec<(usize, usize)> {
        let mut left = self.steps_per_epoch;
        let mut out = Vec::new();
        while left > 0 {
            let k = left.min(self.steps_per_collect - self.pending);
            left -= k;
            self.pending += k;
            if self.pending == self.steps_per_collect {
                out.push((k, self.pending));
                self.pending = 0;
            } else {
                out.push((k, 0));
            }
        }
        out
    }
}

fn mean_or_nan(sum: f64, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Trains the diffusion policy; deterministic in `(cfg, consts, dist)`.
pub fn train(
    cfg: &TrainConfig,
    consts: &PipelineConstants,
    dist: &DistConfig,
) -> Result<TrainOutput> {
    train_with_eval(cfg, consts, dist, None)
}

/// [`train`] with an optional precomputed evaluation set.
pub fn train_with_eval(
    cfg: &TrainConfig,
    consts: &PipelineConstants,
    dist: &DistConfig,
    eval_set: Option<&EvalSet>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    consts.validate()?;
    dist.validate()?;
    let env = Env::new(*consts, *dist);
    let schedule = DiffusionSchedule::new(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max)?;
    let root = SeededStream::new(cfg.seed);
    let mut init = root.substream(STREAM_INIT);
    let mut env_stream = root.substream(STREAM_ENV);
    let mut act_stream = root.substream(STREAM_ACT);
    let mut upd_stream = root.substream(STREAM_UPDATE);

    let mut actor = DiffusionActor {
        policy: DiffusionPolicy::new(&cfg.actor_hidden, schedule, &mut init)?,
        explore_std: cfg.explore_std,
        consts: *consts,
    };
    let mut actor_adam = AdamState::new(&actor.policy.net);
    let cspec = critic_spec(&cfg.critic_hidden)?;
    let mut c1 = Trainable::new(NetParams::init(&cspec, &mut init));
    let mut c2 = Trainable::new(NetParams::init(&cspec, &mut init));
    let mut target_actor = actor.policy.clone();
    let mut t1 = c1.params.clone();
    let mut t2 = c2.params.clone();

    let owned_eval;
    let eval_set = match eval_set {
        Some(e) => Some(e),
        None if cfg.epochs > 0 => {
            owned_eval = EvalSet::new(&env, cfg.eval_states, cfg.eval_seed, cfg.oracle_resolution)?;
            Some(&owned_eval)
        }
        None => None,
    };

    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut cadence = Cadence::new(cfg);
    let mut curve = TrainingCurve::default();
    let mut env_steps = 0;
    let mut last_eval = None;

    for epoch in 1..=cfg.epochs {
        let (mut aloss, mut closs, mut n_upd) = (0.0, 0.0, 0usize);
        for (steps, updates) in cadence.epoch_segments() {
            collect(
                &env,
                &mut actor,
                steps,
                &mut buffer,
                &mut env_stream,
                &mut act_stream,
            )?;
            env_steps += steps;
            for _ in 0..updates {
                let batch = buffer.sample(cfg.batch_size, &mut upd_stream)?;
                let [l1, l2] = critic_update(
                    &batch,
                    [&mut c1, &mut c2],
                    [&t1, &t2],
                    &target_actor,
                    cfg.gamma,
                    (cfg.reward_scale, cfg.reward_shape),
                    cfg.lr_critic,
                    &mut upd_stream,
                )?;
                let la = actor_update(
                    batch.states.view(),
                    &mut actor.policy,
                    &mut actor_adam,
                    &c1.params,
                    cfg.lr_actor,
                    cfg.clip_gradient,
                    &mut upd_stream,
                )?;
                soft_update(&mut t1, &c1.params, cfg.tau)?;
                soft_update(&mut t2, &c2.params, cfg.tau)?;
                soft_update(&mut target_actor.net, &actor.policy.net, cfg.tau)?;
                aloss += la;
                closs += 0.5 * (l1 + l2);
                n_upd += 1;
            }
        }
        let set = eval_set.expect("eval set exists when epochs > 0");
        let report = evaluate(&mut actor, set, consts)?;
        curve.rows.push(CurveRow {
            epoch,
            env_steps,
            mean_reward: report.mean_reward,
            mean_utility: report.mean_utility,
            feasible_fraction: report.feasible_fraction,
            actor_loss: mean_or_nan(aloss, n_upd),
            critic_loss: mean_or_nan(closs, n_upd),
        });
        last_eval = Some(report);
    }

    Ok(TrainOutput {
        curve,
        actor: actor.policy,
        critics: [c1.params, c2.params],
        final_eval: last_eval,
    })
}
