//! State-conditioned diffusion policy over raw actions in `[-1, 1]^3`.
//!
//! An epsilon-network predicts the noise in a partially noised action given
//! the step index and the normalized state; sampling runs the reverse chain
//! from a standard-normal draw. The chain is differentiable end to end with
//! frozen noise, which gives the pathwise gradient of a critic's value with
//! respect to the network parameters.

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::{Activation, Checkpoint, CheckpointKind, ForwardCache, NetParams, NetSpec};
use crate::pipeline::{ACTION_DIM, STATE_DIM};
use crate::scenario::SeededStream;

/// Width of the sinusoidal step embedding fed to the epsilon-network.
pub const TIME_EMBED_DIM: usize = 16;
/// Epsilon-network input width: noised action, step embedding, state.
pub const EPS_INPUT_DIM: usize = ACTION_DIM + TIME_EMBED_DIM + STATE_DIM;

/// A pre-mapping policy output in `[-1, 1]^3`.
pub type RawAction = [f64; ACTION_DIM];

/// Linear beta schedule and its derived tables, indexed by step `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    steps: usize,
    beta_min: f64,
    beta_max: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    /// `alpha_bar[0] = 1`, `alpha_bar[i] = prod_{j <= i} alpha[j]`.
    alpha_bar: Vec<f64>,
    posterior_var: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Invalid("diffusion needs at least one step".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Invalid(format!(
                "need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|k| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * k as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for a in &alpha {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * a);
        }
        let posterior_var = (1..=steps)
            .map(|i| beta[i - 1] * (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]))
            .collect();
        Ok(DiffusionSchedule {
            steps,
            beta_min,
            beta_max,
            beta,
            alpha,
            alpha_bar,
            posterior_var,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_min, self.beta_max)
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.beta[i - 1]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        self.alpha[i - 1]
    }

    /// Defined for `0..=T`.
    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bar[i]
    }

    pub fn posterior_var(&self, i: usize) -> f64 {
        self.posterior_var[i - 1]
    }

    /// Coefficient on the predicted noise in the reverse mean.
    fn eps_coef(&self, i: usize) -> f64 {
        self.beta(i) / (1.0 - self.alpha_bar(i)).sqrt()
    }
}

/// `sqrt(alpha_bar_i) * a0 + sqrt(1 - alpha_bar_i) * noise`.
pub fn forward_noise(
    a0: &RawAction,
    i: usize,
    schedule: &DiffusionSchedule,
    noise: &[f64; ACTION_DIM],
) -> RawAction {
    let ab = schedule.alpha_bar(i);
    let (k0, k1) = (ab.sqrt(), (1.0 - ab).sqrt());
    [
        k0 * a0[0] + k1 * noise[0],
        k0 * a0[1] + k1 * noise[1],
        k0 * a0[2] + k1 * noise[2],
    ]
}

/// Sinusoidal embedding of the step index: 8 sines then 8 cosines.
pub fn time_embedding(i: usize) -> [f64; TIME_EMBED_DIM] {
    let half = TIME_EMBED_DIM / 2;
    let mut e = [0.0; TIME_EMBED_DIM];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let x = i as f64 * freq;
        e[k] = x.sin();
        e[half + k] = x.cos();
    }
    e
}

/// Default epsilon-network shape: `29 -> 128 -> 128 -> 3`, identity output.
pub fn eps_net_spec(hidden: &[usize]) -> Result<NetSpec> {
    NetSpec::mlp(EPS_INPUT_DIM, hidden, ACTION_DIM, Activation::Identity)
}

/// Noise consumed by one batched pass of the reverse chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainNoise {
    /// Starting point `a^T`, one row per sample.
    pub prior: Array2<f64>,
    /// `z[i - 1]` is the noise added at step `i`; step 1 is always zero.
    pub z: Vec<Array2<f64>>,
}

impl ChainNoise {
    /// Draw order: every prior row, then `z_T`, `z_{T-1}`, .., `z_2`, row-major.
    pub fn draw(batch: usize, schedule: &DiffusionSchedule, stream: &mut SeededStream) -> Self {
        let mut prior = Array2::zeros((batch, ACTION_DIM));
        stream.fill_standard_normal(prior.as_slice_mut().unwrap());
        let mut z = vec![Array2::zeros((batch, ACTION_DIM)); schedule.steps()];
        for i in (2..=schedule.steps()).rev() {
            stream.fill_standard_normal(z[i - 1].as_slice_mut().unwrap());
        }
        ChainNoise { prior, z }
    }

    pub fn batch(&self) -> usize {
        self.prior.nrows()
    }
}

/// Saved activations of one denoising step.
struct StepTape {
    cache: ForwardCache,
    /// 0 where the pre-clip value was strictly inside `(-1, 1)`, +1 above, -1 below.
    side: Array2<f64>,
}

/// How the reverse chain's clip is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipGradient {
    /// True derivative: identity inside `(-1, 1)`, zero at saturation.
    Exact,
    /// Like `Exact`, but a saturated coordinate still passes gradient whose
    /// descent step points back into the box.
    #[default]
    Inward,
}

impl ClipGradient {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClipGradient::Exact => "exact",
            ClipGradient::Inward => "inward",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact" => Some(ClipGradient::Exact),
            "inward" => Some(ClipGradient::Inward),
            _ => None,
        }
    }

    fn passes(self, side: f64, g: f64) -> bool {
        side == 0.0 || (self == ClipGradient::Inward && side * g > 0.0)
    }
}

fn eps_input(a: ArrayView2<f64>, i: usize, states: ArrayView2<f64>) -> Array2<f64> {
    let b = a.nrows();
    let mut x = Array2::zeros((b, EPS_INPUT_DIM));
    x.slice_mut(s![.., ..ACTION_DIM]).assign(&a);
    let emb = time_embedding(i);
    for mut row in x
        .slice_mut(s![.., ACTION_DIM..ACTION_DIM + TIME_EMBED_DIM])
        .rows_mut()
    {
        row.assign(&ndarray::ArrayView1::from(&emb));
    }
    x.slice_mut(s![.., ACTION_DIM + TIME_EMBED_DIM..])
        .assign(&states);
    x
}

/// One batched reverse step; returns `a_{i-1}` and, if requested, the tape.
fn step_batch(
    net: &NetParams,
    a: ArrayView2<f64>,
    i: usize,
    states: ArrayView2<f64>,
    schedule: &DiffusionSchedule,
    z: ArrayView2<f64>,
    record: bool,
) -> Result<(Array2<f64>, Option<StepTape>)> {
    let x = eps_input(a, i, states);
    let (eps, cache) = if record {
        let (e, c) = net.forward(x.view())?;
        (e, Some(c))
    } else {
        (net.predict(x.view())?, None)
    };
    let inv_sqrt_alpha = 1.0 / schedule.alpha(i).sqrt();
    let c = schedule.eps_coef(i);
    let sigma = if i > 1 {
        schedule.posterior_var(i).sqrt()
    } else {
        0.0
    };
    let mut out = (&a - &(eps * c)) * inv_sqrt_alpha;
    if sigma > 0.0 {
        out.scaled_add(sigma, &z);
    }
    let side = record.then(|| {
        out.mapv(|v| {
            if v >= 1.0 {
                1.0
            } else if v <= -1.0 {
                -1.0
            } else {
                0.0
            }
        })
    });
    out.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    Ok((
        out,
        cache
            .zip(side)
            .map(|(cache, side)| StepTape { cache, side }),
    ))
}

fn check_states(states: &ArrayView2<f64>) -> Result<()> {
    if states.ncols() != STATE_DIM {
        return Err(Error::shape(
            format!("{STATE_DIM} state columns"),
            states.ncols(),
        ));
    }
    Ok(())
}

/// `a_{i-1} = clip((a_i - beta_i / sqrt(1 - alpha_bar_i) * eps(a_i, i, s)) / sqrt(alpha_i) + sqrt(var_i) * z)`,
/// with the noise term dropped at `i = 1`.
pub fn denoise_step(
    net: &NetParams,
    a_i: &RawAction,
    i: usize,
    state_norm: &[f64; STATE_DIM],
    schedule: &DiffusionSchedule,
    z: &[f64; ACTION_DIM],
) -> Result<RawAction> {
    if i == 0 || i > schedule.steps() {
        return Err(Error::Invalid(format!(
            "step {i} outside 1..={}",
            schedule.steps()
        )));
    }
    let a = ArrayView2::from_shape((1, ACTION_DIM), a_i).unwrap();
    let s = ArrayView2::from_shape((1, STATE_DIM), state_norm).unwrap();
    let zv = ArrayView2::from_shape((1, ACTION_DIM), z).unwrap();
    let (out, _) = step_batch(net, a, i, s, schedule, zv, false)?;
    Ok([out[[0, 0]], out[[0, 1]], out[[0, 2]]])
}

/// Runs the full reverse chain for a batch of states with the given noise.
pub fn denoise_chain(
    net: &NetParams,
    states: ArrayView2<f64>,
    schedule: &DiffusionSchedule,
    noise: &ChainNoise,
) -> Result<Array2<f64>> {
    check_states(&states)?;
    if noise.batch() != states.nrows() {
        return Err(Error::shape(states.nrows(), noise.batch()));
    }
    let mut a = noise.prior.clone();
    for i in (1..=schedule.steps()).rev() {
        a = step_batch(
            net,
            a.view(),
            i,
            states,
            schedule,
            noise.z[i - 1].view(),
            false,
        )?
        .0;
    }
    Ok(a)
}

/// Draws `a^T`, denoises it, then adds `N(0, explore_std^2)` once and clips.
pub fn sample_actions(
    net: &NetParams,
    states: ArrayView2<f64>,
    schedule: &DiffusionSchedule,
    stream: &mut SeededStream,
    explore_std: f64,
) -> Result<Array2<f64>> {
    let noise = ChainNoise::draw(states.nrows(), schedule, stream);
    let mut a = denoise_chain(net, states, schedule, &noise)?;
    if explore_std > 0.0 {
        for v in a.iter_mut() {
            *v = (*v + explore_std * stream.standard_normal()).clamp(-1.0, 1.0);
        }
    }
    Ok(a)
}

/// Single-state convenience wrapper around [`sample_actions`].
pub fn sample_action(
    net: &NetParams,
    state_norm: &[f64; STATE_DIM],
    schedule: &DiffusionSchedule,
    stream: &mut SeededStream,
    explore_std: f64,
) -> Result<RawAction> {
    let s = ArrayView2::from_shape((1, STATE_DIM), state_norm).unwrap();
    let a = sample_actions(net, s, schedule, stream, explore_std)?;
    Ok([a[[0, 0]], a[[0, 1]], a[[0, 2]]])
}

/// Critic input `[state, action]` for a batch.
pub fn critic_input(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[states, actions]).expect("matching batch sizes")
}

/// Pathwise gradient of `-mean Q(s, a^0(s))` with respect to the epsilon-network.
///
/// The noise is frozen, the critic is held fixed, and clipping is
/// differentiated according to `clip`. Returns the loss and the parameter gradient.
pub fn policy_value_gradient(
    net: &NetParams,
    critic: &NetParams,
    states: ArrayView2<f64>,
    schedule: &DiffusionSchedule,
    noise: &ChainNoise,
    clip: ClipGradient,
) -> Result<(f64, NetParams)> {
    check_states(&states)?;
    let b = states.nrows();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if noise.batch() != b {
        return Err(Error::shape(b, noise.batch()));
    }
    let t = schedule.steps();

    // tapes[i - 1] holds step i
    let mut tapes: Vec<Option<StepTape>> = (0..t).map(|_| None).collect();
    let mut a = noise.prior.clone();
    for i in (1..=t).rev() {
        let (next, tape) = step_batch(
            net,
            a.view(),
            i,
            states,
            schedule,
            noise.z[i - 1].view(),
            true,
        )?;
        tapes[i - 1] = tape;
        a = next;
    }

    let (q, qcache) = critic.forward(critic_input(states, a.view()).view())?;
    let loss = -q.sum() / b as f64;
    let upstream = Array2::from_elem((b, 1), -1.0 / b as f64);
    let dx = critic.backward_input(&qcache, upstream.view())?;
    let mut grad_a = dx.slice(s![.., STATE_DIM..]).to_owned();

    let mut grads = net.zeros_like();
    for i in 1..=t {
        let tape = tapes[i - 1].take().expect("tape recorded");
        let inv_sqrt_alpha = 1.0 / schedule.alpha(i).sqrt();
        let mut g_pre = grad_a;
        ndarray::Zip::from(&mut g_pre)
            .and(&tape.side)
            .for_each(|g, &side| {
                if !clip.passes(side, *g) {
                    *g = 0.0;
                }
            });
        let g_eps = &g_pre * (-schedule.eps_coef(i) * inv_sqrt_alpha);
        let dx = net.backward_into(&tape.cache, g_eps.view(), &mut grads)?;
        grad_a = g_pre * inv_sqrt_alpha + dx.slice(s![.., ..ACTION_DIM]);
    }
    Ok((loss, grads))
}

/// Epsilon-network together with its schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPolicy {
    pub net: NetParams,
    pub schedule: DiffusionSchedule,
}

impl DiffusionPolicy {
    pub fn new(
        hidden: &[usize],
        schedule: DiffusionSchedule,
        stream: &mut SeededStream,
    ) -> Result<Self> {
        let spec = eps_net_spec(hidden)?;
        Ok(DiffusionPolicy {
            net: NetParams::init(&spec, stream),
            schedule,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (lo, hi) = self.schedule.beta_range();
        Checkpoint {
            kind: CheckpointKind::Diffusion,
            meta: vec![self.schedule.steps() as f64, lo, hi],
            net: self.net.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.kind != CheckpointKind::Diffusion || ckpt.meta.len() != 3 {
            return Err(Error::CorruptCheckpoint(
                "not a diffusion policy checkpoint".into(),
            ));
        }
        let schedule = DiffusionSchedule::new(ckpt.meta[0] as usize, ckpt.meta[1], ckpt.meta[2])?;
        if ckpt.net.spec().input_dim() != EPS_INPUT_DIM
            || ckpt.net.spec().output_dim() != ACTION_DIM
        {
            return Err(Error::CorruptCheckpoint(
                "epsilon-network has wrong input/output width".into(),
            ));
        }
        Ok(DiffusionPolicy {
            net: ckpt.net,
            schedule,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Parameters;

    fn zero_net() -> NetParams {
        NetParams::zeros(&eps_net_spec(&[8]).unwrap())
    }

    #[test]
    fn schedule_tables() {
        let s = DiffusionSchedule::new(1, 0.1, 0.1).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);

        let s = DiffusionSchedule::new(5, 0.1, 0.5).unwrap();
        for (i, b) in [0.1, 0.2, 0.3, 0.4, 0.5].iter().enumerate() {
            assert!((s.beta(i + 1) - b).abs() < 1e-15);
        }
        assert!((s.alpha_bar(5) - 0.1512).abs() < 1e-12);
        assert!((1..=5).all(|i| s.alpha_bar(i) < s.alpha_bar(i - 1)));
        assert_eq!(s.posterior_var(1), 0.0);
        let expect = 0.2 * (1.0 - 0.9) / (1.0 - 0.72);
        assert!((s.posterior_var(2) - expect).abs() < 1e-15);
    }

    #[test]
    fn schedule_rejects_bad_input() {
        assert!(DiffusionSchedule::new(0, 0.1, 0.5).is_err());
        assert!(DiffusionSchedule::new(5, 0.0, 0.5).is_err());
        assert!(DiffusionSchedule::new(5, 0.6, 0.5).is_err());
        assert!(DiffusionSchedule::new(5, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_noise_limits() {
        let s = DiffusionSchedule::new(5, 0.1, 0.5).unwrap();
        let a0 = [0.3, -0.6, 0.9];
        assert_eq!(forward_noise(&a0, 0, &s, &[1.0, 2.0, 3.0]), a0);
        let out = forward_noise(&a0, 3, &s, &[0.0; 3]);
        let k = s.alpha_bar(3).sqrt();
        for j in 0..3 {
            assert_eq!(out[j], k * a0[j]);
        }
    }

    #[test]
    fn zero_eps_step_rescales() {
        let s = DiffusionSchedule::new(5, 0.1, 0.5).unwrap();
        let a = [0.2, -0.3, 0.5];
        let out = denoise_step(&zero_net(), &a, 3, &[0.0; STATE_DIM], &s, &[0.0; 3]).unwrap();
        for j in 0..3 {
            assert!((out[j] - (a[j] / s.alpha(3).sqrt()).clamp(-1.0, 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn final_step_ignores_z() {
        let s = DiffusionSchedule::new(5, 0.1, 0.5).unwrap();
        let a = [0.2, -0.3, 0.5];
        let st = [0.1; STATE_DIM];
        let x = denoise_step(&zero_net(), &a, 1, &st, &s, &[0.0; 3]).unwrap();
        let y = denoise_step(&zero_net(), &a, 1, &st, &s, &[5.0, -5.0, 3.0]).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn single_step_clip_example() {
        let s = DiffusionSchedule::new(1, 0.1, 0.1).unwrap();
        let out = denoise_step(
            &zero_net(),
            &[0.9, -0.9, 0.0],
            1,
            &[0.0; STATE_DIM],
            &s,
            &[0.0; 3],
        )
        .unwrap();
        let v = 0.9 / 0.9f64.sqrt();
        assert!((out[0] - v).abs() < 1e-12 && (out[1] + v).abs() < 1e-12 && out[2] == 0.0);
        assert!((out[0] - 0.9487).abs() < 1e-4);
    }

    #[test]
    fn step_index_is_checked() {
        let s = DiffusionSchedule::new(2, 0.1, 0.5).unwrap();
        assert!(denoise_step(&zero_net(), &[0.0; 3], 0, &[0.0; STATE_DIM], &s, &[0.0; 3]).is_err());
        assert!(denoise_step(&zero_net(), &[0.0; 3], 3, &[0.0; STATE_DIM], &s, &[0.0; 3]).is_err());
    }

    #[test]
    fn zero_critic_gives_zero_gradient() {
        let s = DiffusionSchedule::new(3, 0.1, 0.5).unwrap();
        let mut st = SeededStream::new(4);
        let net = NetParams::init(&eps_net_spec(&[16, 16]).unwrap(), &mut st);
        let critic = NetParams::zeros(&NetSpec::mlp(13, &[8], 1, Activation::Identity).unwrap());
        let states =
            Array2::from_shape_fn((6, STATE_DIM), |(i, j)| ((i * 7 + j) as f64 * 0.37).sin());
        let noise = ChainNoise::draw(6, &s, &mut st);
        let (loss, g) = policy_value_gradient(
            &net,
            &critic,
            states.view(),
            &s,
            &noise,
            ClipGradient::Exact,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.param_slices().iter().all(|x| x.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn sampling_is_bounded_and_replayable() {
        let s = DiffusionSchedule::new(5, 0.1, 0.5).unwrap();
        let mut st = SeededStream::new(8);
        let net = NetParams::init(&eps_net_spec(&[16]).unwrap(), &mut st);
        let state = [0.3; STATE_DIM];
        let a = sample_action(&net, &state, &s, &mut SeededStream::new(1), 0.0).unwrap();
        let b = sample_action(&net, &state, &s, &mut SeededStream::new(1), 0.0).unwrap();
        assert_eq!(a, b);
        let mut st = SeededStream::new(2);
        for _ in 0..200 {
            let a = sample_action(&net, &state, &s, &mut st, 0.5).unwrap();
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let s = DiffusionSchedule::new(5, 0.1, 0.5).unwrap();
        let p = DiffusionPolicy::new(&[8, 8], s, &mut SeededStream::new(1)).unwrap();
        let back = DiffusionPolicy::from_checkpoint(
            Checkpoint::from_bytes(&p.to_checkpoint().to_bytes()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, p);
    }
}
