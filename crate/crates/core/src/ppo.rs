//! Proximal policy optimization baseline: Gaussian actor with a tanh-bounded
//! mean and learned log-std, clipped surrogate objective and a value network.

use std::f64::consts::{E, PI};

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::diffusion::RawAction;
use crate::error::{Error, Result};
use crate::nn::{
    Activation, AdamState, Checkpoint, CheckpointKind, NetParams, NetSpec, Parameters,
};
use crate::pipeline::{self, EnvState, PipelineConstants, ACTION_DIM, STATE_DIM};
use crate::scenario::{DistConfig, SeededStream};
use crate::trainer::{
    action_to_allocation, evaluate, Cadence, CurveRow, Decision, Env, EvalReport, EvalSet, Policy,
    TrainConfig, TrainingCurve,
};

const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_ACT: u64 = 2;
const STREAM_UPDATE: u64 = 3;

/// PPO-specific knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub inner_epochs: usize,
    pub minibatch: usize,
    pub ent_coef: f64,
    pub log_std_init: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            inner_epochs: 10,
            minibatch: 64,
            ent_coef: 0.01,
            log_std_init: 0.5f64.ln(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Validation(format!(
                "clip_eps must lie in (0, 1), got {}",
                self.clip_eps
            )));
        }
        if self.inner_epochs == 0 || self.minibatch == 0 {
            return Err(Error::Validation(
                "inner_epochs and minibatch must be positive".into(),
            ));
        }
        if !(self.ent_coef >= 0.0 && self.log_std_init.is_finite()) {
            return Err(Error::Validation(
                "ent_coef must be >= 0 and log_std_init finite".into(),
            ));
        }
        Ok(())
    }
}

/// Mean network plus a state-independent log standard deviation per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianActor {
    pub net: NetParams,
    pub log_std: Array1<f64>,
}

impl Parameters for GaussianActor {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.net.param_slices();
        v.push(self.log_std.as_slice().expect("contiguous"));
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.net.param_slices_mut();
        v.push(self.log_std.as_slice_mut().expect("contiguous"));
        v
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

impl GaussianActor {
    pub fn new(hidden: &[usize], log_std_init: f64, stream: &mut SeededStream) -> Result<Self> {
        let spec = NetSpec::mlp(STATE_DIM, hidden, ACTION_DIM, Activation::Tanh)?;
        Ok(GaussianActor {
            net: NetParams::init(&spec, stream),
            log_std: Array1::from_elem(ACTION_DIM, log_std_init),
        })
    }

    pub fn zeros_like(&self) -> Self {
        GaussianActor {
            net: self.net.zeros_like(),
            log_std: Array1::zeros(self.log_std.len()),
        }
    }

    pub fn mean(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.predict(states)
    }

    /// Entropy of the per-state Gaussian.
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|l| l + 0.5 * (2.0 * PI * E).ln())
            .sum()
    }

    /// Log-density of `actions` (pre-clip samples) row by row.
    pub fn log_prob(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Vec<f64>> {
        let mu = self.mean(states)?;
        Ok(log_prob_rows(&mu, actions, &self.log_std))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::GaussianActor,
            meta: self.log_std.to_vec(),
            net: self.net.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.kind != CheckpointKind::GaussianActor {
            return Err(Error::CorruptCheckpoint(format!(
                "expected a gaussian actor, found {:?}",
                ckpt.kind
            )));
        }
        let spec = ckpt.net.spec();
        if spec.input_dim() != STATE_DIM
            || spec.output_dim() != ACTION_DIM
            || ckpt.meta.len() != ACTION_DIM
        {
            return Err(Error::CorruptCheckpoint(
                "gaussian actor shape mismatch".into(),
            ));
        }
        Ok(GaussianActor {
            log_std: Array1::from(ckpt.meta),
            net: ckpt.net,
        })
    }
}

fn log_prob_rows(mu: &Array2<f64>, actions: ArrayView2<f64>, log_std: &Array1<f64>) -> Vec<f64> {
    mu.rows()
        .into_iter()
        .zip(actions.rows())
        .map(|(m, x)| {
            let mut lp = 0.0;
            for j in 0..m.len() {
                let z = (x[j] - m[j]) * (-log_std[j]).exp();
                lp += -0.5 * z * z - log_std[j] - HALF_LN_2PI;
            }
            lp
        })
        .collect()
}

/// Samples one action: returns the clipped action, the pre-clip sample and
/// the log-density at the pre-clip sample.
pub fn actor_sample(
    actor: &GaussianActor,
    state_norm: &[f64; STATE_DIM],
    stream: &mut SeededStream,
) -> Result<(RawAction, RawAction, f64)> {
    let s = ArrayView2::from_shape((1, STATE_DIM), state_norm).unwrap();
    let (clipped, pre, lp) = actor_sample_batch(actor, s, stream)?;
    let row = |a: &Array2<f64>| [a[[0, 0]], a[[0, 1]], a[[0, 2]]];
    Ok((row(&clipped), row(&pre), lp[0]))
}

/// Batched [`actor_sample`]: `(clipped, pre_clip, log_probs)`.
pub fn actor_sample_batch(
    actor: &GaussianActor,
    states: ArrayView2<f64>,
    stream: &mut SeededStream,
) -> Result<(Array2<f64>, Array2<f64>, Vec<f64>)> {
    let mu = actor.mean(states)?;
    let mut pre = mu.clone();
    for mut row in pre.rows_mut() {
        for j in 0..ACTION_DIM {
            row[j] += actor.log_std[j].exp() * stream.standard_normal();
        }
    }
    let lp = log_prob_rows(&mu, pre.view(), &actor.log_std);
    let clipped = pre.mapv(|v| v.clamp(-1.0, 1.0));
    Ok((clipped, pre, lp))
}

/// On-policy rollout ready for the clipped update.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoBatch {
    pub states: Array2<f64>,
    /// Pre-clip samples; log-probabilities are evaluated here.
    pub raw_actions: Array2<f64>,
    pub log_probs_old: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn select(&self, idx: &[usize]) -> PpoBatch {
        PpoBatch {
            states: self.states.select(Axis(0), idx),
            raw_actions: self.raw_actions.select(Axis(0), idx),
            log_probs_old: idx.iter().map(|&i| self.log_probs_old[i]).collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

/// Std floor used when normalizing advantages.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;

/// One-step episodes: `return = reward`, `advantage = reward - V(s)`,
/// normalized to zero mean and unit (population) std when more than one record.
pub fn compute_advantages(
    states: ArrayView2<f64>,
    rewards: &[f64],
    value_net: &NetParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if states.nrows() != rewards.len() {
        return Err(Error::shape(rewards.len(), states.nrows()));
    }
    let v = value_net.predict(states)?;
    let mut adv: Vec<f64> = rewards
        .iter()
        .enumerate()
        .map(|(k, r)| r - v[[k, 0]])
        .collect();
    if adv.len() > 1 {
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(ADVANTAGE_STD_FLOOR);
        for a in &mut adv {
            *a = (*a - mean) / std;
        }
    }
    Ok((adv, rewards.to_vec()))
}

/// Per-sample surrogate terms `(rho * A, clip(rho) * A)`.
pub fn surrogate_terms(rho: f64, adv: f64, clip_eps: f64) -> (f64, f64) {
    (rho * adv, rho.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv)
}

/// Derivative of `min(rho * A, clip(rho) * A)` with respect to `rho`.
pub fn surrogate_slope(rho: f64, adv: f64, clip_eps: f64) -> f64 {
    let (plain, clipped) = surrogate_terms(rho, adv, clip_eps);
    if plain <= clipped || (rho > 1.0 - clip_eps && rho < 1.0 + clip_eps) {
        adv
    } else {
        0.0
    }
}

/// Importance ratios `exp(log pi - log pi_old)`.
pub fn importance_ratios(actor: &GaussianActor, batch: &PpoBatch) -> Result<Vec<f64>> {
    let lp = actor.log_prob(batch.states.view(), batch.raw_actions.view())?;
    Ok(lp
        .iter()
        .zip(&batch.log_probs_old)
        .map(|(l, o)| (l - o).exp())
        .collect())
}

/// Actor loss `-mean min(rho A, clip(rho) A) - ent_coef * entropy` and its gradient.
pub fn actor_loss_and_grad(
    actor: &GaussianActor,
    batch: &PpoBatch,
    clip_eps: f64,
    ent_coef: f64,
) -> Result<(f64, GaussianActor)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let (mu, cache) = actor.net.forward(batch.states.view())?;
    let lp = log_prob_rows(&mu, batch.raw_actions.view(), &actor.log_std);
    let inv_var: Vec<f64> = actor.log_std.iter().map(|l| (-2.0 * l).exp()).collect();
    let mut grad = actor.zeros_like();
    let mut g_mu = Array2::zeros((n, ACTION_DIM));
    let mut surrogate = 0.0;
    for k in 0..n {
        let rho = (lp[k] - batch.log_probs_old[k]).exp();
        let (plain, clipped) = surrogate_terms(rho, batch.advantages[k], clip_eps);
        surrogate += plain.min(clipped);
        // d loss / d log pi
        let g_lp = -surrogate_slope(rho, batch.advantages[k], clip_eps) * rho / n as f64;
        if g_lp == 0.0 {
            continue;
        }
        for j in 0..ACTION_DIM {
            let d = batch.raw_actions[[k, j]] - mu[[k, j]];
            g_mu[[k, j]] = g_lp * d * inv_var[j];
            grad.log_std[j] += g_lp * (d * d * inv_var[j] - 1.0);
        }
    }
    for g in grad.log_std.iter_mut() {
        *g -= ent_coef;
    }
    actor
        .net
        .backward_into(&cache, g_mu.view(), &mut grad.net)?;
    let loss = -surrogate / n as f64 - ent_coef * actor.entropy();
    Ok((loss, grad))
}

/// Value-network squared loss `mean (V - R)^2` and its gradient.
pub fn value_loss_and_grad(value_net: &NetParams, batch: &PpoBatch) -> Result<(f64, NetParams)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let (v, cache) = value_net.forward(batch.states.view())?;
    let mut g = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for k in 0..n {
        let d = v[[k, 0]] - batch.returns[k];
        loss += d * d;
        g[[k, 0]] = 2.0 * d / n as f64;
    }
    let (grads, _) = value_net.backward(&cache, g.view())?;
    Ok((loss / n as f64, grads))
}

/// Actor and value network with their optimizer state.
#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub actor: GaussianActor,
    pub value: NetParams,
    actor_adam: AdamState,
    value_adam: AdamState,
}

impl PpoAgent {
    pub fn new(actor: GaussianActor, value: NetParams) -> Self {
        let actor_adam = AdamState::new(&actor);
        let value_adam = AdamState::new(&value);
        PpoAgent {
            actor,
            value,
            actor_adam,
            value_adam,
        }
    }
}

/// Value network `state -> V`.
pub fn value_spec(hidden: &[usize]) -> Result<NetSpec> {
    NetSpec::mlp(STATE_DIM, hidden, 1, Activation::Identity)
}

/// Inner epochs over shuffled minibatches; returns mean `(actor_loss, value_loss)`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    batch: &PpoBatch,
    agent: &mut PpoAgent,
    cfg: &PpoConfig,
    lr_actor: f64,
    lr_value: f64,
    stream: &mut SeededStream,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    cfg.validate()?;
    let n = batch.len();
    let (mut al, mut vl, mut count) = (0.0, 0.0, 0usize);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.inner_epochs {
        // Fisher-Yates
        for k in (1..n).rev() {
            order.swap(k, stream.index(k + 1));
        }
        for chunk in order.chunks(cfg.minibatch) {
            let mb = batch.select(chunk);
            let (la, ga) = actor_loss_and_grad(&agent.actor, &mb, cfg.clip_eps, cfg.ent_coef)?;
            agent.actor_adam.step(&mut agent.actor, &ga, lr_actor);
            let (lv, gv) = value_loss_and_grad(&agent.value, &mb)?;
            agent.value_adam.step(&mut agent.value, &gv, lr_value);
            al += la;
            vl += lv;
            count += 1;
        }
    }
    Ok((al / count as f64, vl / count as f64))
}

/// Gaussian actor as an environment policy; greedy mode plays the mean.
#[derive(Debug, Clone)]
pub struct PpoPolicy {
    pub actor: GaussianActor,
    pub consts: PipelineConstants,
}

impl Policy for PpoPolicy {
    fn act(
        &mut self,
        _states: &[EnvState],
        norm: ArrayView2<f64>,
        stream: &mut SeededStream,
        explore: bool,
    ) -> Result<Vec<Decision>> {
        let a = if explore {
            actor_sample_batch(&self.actor, norm, stream)?.0
        } else {
            self.actor.mean(norm)?
        };
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

/// Everything produced by a PPO training run.
#[derive(Debug, Clone)]
pub struct PpoOutput {
    pub curve: TrainingCurve,
    pub actor: GaussianActor,
    pub value: NetParams,
    pub final_eval: Option<EvalReport>,
}

/// Rollout accumulated between updates.
#[derive(Debug, Default)]
struct Rollout {
    states: Vec<[f64; STATE_DIM]>,
    pre: Vec<RawAction>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
}

fn collect_rollout(
    env: &Env,
    actor: &GaussianActor,
    n: usize,
    rollout: &mut Rollout,
    env_stream: &mut SeededStream,
    act_stream: &mut SeededStream,
) -> Result<()> {
    let states: Vec<EnvState> = (0..n).map(|_| env.sample(env_stream)).collect();
    let norm = env.normalize_batch(&states);
    let (clipped, pre, lp) = actor_sample_batch(actor, norm.view(), act_stream)?;
    for k in 0..n {
        let raw = [clipped[[k, 0]], clipped[[k, 1]], clipped[[k, 2]]];
        let alloc = action_to_allocation(&raw, &env.consts);
        rollout
            .rewards
            .push(pipeline::reward(&states[k], &alloc, &env.consts));
        let mut s = [0.0; STATE_DIM];
        s.copy_from_slice(norm.row(k).as_slice().unwrap());
        rollout.states.push(s);
        rollout.pre.push([pre[[k, 0]], pre[[k, 1]], pre[[k, 2]]]);
        rollout.log_probs.push(lp[k]);
        // the next state is an independent draw and never used: one-step episodes
        env.sample(env_stream);
    }
    Ok(())
}

/// Trains the PPO baseline with the same cadence, evaluation and curve schema
/// as the diffusion trainer. Only `steps_per_collect`-sized rollouts trigger updates.
pub fn train_ppo(
    cfg: &TrainConfig,
    ppo: &PpoConfig,
    consts: &PipelineConstants,
    dist: &DistConfig,
) -> Result<PpoOutput> {
    train_ppo_with_eval(cfg, ppo, consts, dist, None)
}

pub fn train_ppo_with_eval(
    cfg: &TrainConfig,
    ppo: &PpoConfig,
    consts: &PipelineConstants,
    dist: &DistConfig,
    eval_set: Option<&EvalSet>,
) -> Result<PpoOutput> {
    cfg.validate()?;
    ppo.validate()?;
    consts.validate()?;
    dist.validate()?;
    let env = Env::new(*consts, *dist);
    let root = SeededStream::new(cfg.seed);
    let mut init = root.substream(STREAM_INIT);
    let mut env_stream = root.substream(STREAM_ENV);
    let mut act_stream = root.substream(STREAM_ACT);
    let mut upd_stream = root.substream(STREAM_UPDATE);

    let actor = GaussianActor::new(&cfg.actor_hidden, ppo.log_std_init, &mut init)?;
    let value = NetParams::init(&value_spec(&cfg.critic_hidden)?, &mut init);
    let mut agent = PpoAgent::new(actor, value);

    let owned_eval;
    let eval_set = match eval_set {
        Some(e) => Some(e),
        None if cfg.epochs > 0 => {
            owned_eval = EvalSet::new(&env, cfg.eval_states, cfg.eval_seed, cfg.oracle_resolution)?;
            Some(&owned_eval)
        }
        None => None,
    };

    let mut cadence = Cadence::new(cfg);
    let mut rollout = Rollout::default();
    let mut curve = TrainingCurve::default();
    let mut env_steps = 0;
    let mut last_eval = None;
    for epoch in 1..=cfg.epochs {
        let (mut aloss, mut vloss, mut n_upd) = (0.0, 0.0, 0usize);
        for (steps, updates) in cadence.epoch_segments() {
            collect_rollout(
                &env,
                &agent.actor,
                steps,
                &mut rollout,
                &mut env_stream,
                &mut act_stream,
            )?;
            env_steps += steps;
            if updates > 0 {
                let r = std::mem::take(&mut rollout);
                let n = r.rewards.len();
                let states = Array2::from_shape_fn((n, STATE_DIM), |(i, j)| r.states[i][j]);
                let (advantages, returns) =
                    compute_advantages(states.view(), &r.rewards, &agent.value)?;
                let batch = PpoBatch {
                    raw_actions: Array2::from_shape_fn((n, ACTION_DIM), |(i, j)| r.pre[i][j]),
                    states,
                    log_probs_old: r.log_probs,
                    rewards: r.rewards,
                    advantages,
                    returns,
                };
                let (la, lv) = ppo_update(
                    &batch,
                    &mut agent,
                    ppo,
                    cfg.lr_actor,
                    cfg.lr_critic,
                    &mut upd_stream,
                )?;
                aloss += la;
                vloss += lv;
                n_upd += 1;
            }
        }
        let set = eval_set.expect("eval set exists when epochs > 0");
        let mut policy = PpoPolicy {
            actor: agent.actor.clone(),
            consts: *consts,
        };
        let report = evaluate(&mut policy, set, consts)?;
        let mean = |s: f64| {
            if n_upd == 0 {
                f64::NAN
            } else {
                s / n_upd as f64
            }
        };
        curve.rows.push(CurveRow {
            epoch,
            env_steps,
            mean_reward: report.mean_reward,
            mean_utility: report.mean_utility,
            feasible_fraction: report.feasible_fraction,
            actor_loss: mean(aloss),
            critic_loss: mean(vloss),
        });
        last_eval = Some(report);
    }
    Ok(PpoOutput {
        curve,
        actor: agent.actor,
        value: agent.value,
        final_eval: last_eval,
    })
}
