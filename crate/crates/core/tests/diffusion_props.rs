use isgc_core::diffusion::*;
use isgc_core::nn::*;
use isgc_core::pipeline::{ACTION_DIM, STATE_DIM};
use isgc_core::scenario::SeededStream;
use ndarray::Array2;
use proptest::prelude::*;

fn states(n: usize, st: &mut SeededStream) -> Array2<f64> {
    Array2::from_shape_fn((n, STATE_DIM), |_| st.uniform(-1.0, 1.0))
}

fn nets(seed: u64) -> (NetParams, NetParams) {
    let mut st = SeededStream::new(seed);
    let eps = NetParams::init(&eps_net_spec(&[32, 32]).unwrap(), &mut st);
    let critic_spec =
        NetSpec::mlp(STATE_DIM + ACTION_DIM, &[32, 32], 1, Activation::Identity).unwrap();
    (eps, NetParams::init(&critic_spec, &mut st))
}

/// Shrinks the prior so most of the chain stays inside the clip box.
fn gentle_noise(batch: usize, schedule: &DiffusionSchedule, st: &mut SeededStream) -> ChainNoise {
    let mut n = ChainNoise::draw(batch, schedule, st);
    n.prior *= 0.3;
    for z in n.z.iter_mut() {
        *z *= 0.3;
    }
    n
}

fn chain_grad_error(t: usize, seed: u64) -> f64 {
    let schedule = DiffusionSchedule::new(t, 0.1, 0.5).unwrap();
    let (eps, critic) = nets(seed);
    let mut st = SeededStream::new(seed ^ 0xabc);
    let s = states(8, &mut st);
    let noise = gentle_noise(8, &schedule, &mut st);
    let f = |p: &NetParams| {
        policy_value_gradient(p, &critic, s.view(), &schedule, &noise, ClipGradient::Exact).unwrap()
    };
    grad_check(f, &eps, 100, &mut st)
}

#[test]
fn chain_gradient_matches_finite_differences() {
    for t in [1, 2, 5] {
        for seed in [1, 2, 3] {
            let err = chain_grad_error(t, seed);
            assert!(err < 1e-4, "T={t} seed={seed}: {err}");
        }
    }
}

#[test]
fn stale_noise_gradient_is_flagged() {
    let schedule = DiffusionSchedule::new(5, 0.1, 0.5).unwrap();
    let (eps, critic) = nets(4);
    let mut st = SeededStream::new(40);
    let s = states(8, &mut st);
    let noise = gentle_noise(8, &schedule, &mut st);
    let other = gentle_noise(8, &schedule, &mut st);
    // loss on one noise draw, gradient from another
    let f = |p: &NetParams| {
        let (loss, _) =
            policy_value_gradient(p, &critic, s.view(), &schedule, &noise, ClipGradient::Exact)
                .unwrap();
        let (_, g) =
            policy_value_gradient(p, &critic, s.view(), &schedule, &other, ClipGradient::Exact)
                .unwrap();
        (loss, g)
    };
    assert!(grad_check(f, &eps, 100, &mut st) > 1e-2);
}

#[test]
fn forward_noise_moments() {
    let schedule = DiffusionSchedule::new(5, 0.1, 0.5).unwrap();
    let a0 = [0.3, -0.7, 0.9];
    let n = 100_000;
    let mut st = SeededStream::new(2024);
    for i in 1..=5 {
        let ab = schedule.alpha_bar(i);
        let mut sum = [0.0; ACTION_DIM];
        let mut sq = [0.0; ACTION_DIM];
        let draws: Vec<[f64; ACTION_DIM]> = (0..n)
            .map(|_| {
                let z = [
                    st.standard_normal(),
                    st.standard_normal(),
                    st.standard_normal(),
                ];
                forward_noise(&a0, i, &schedule, &z)
            })
            .collect();
        for x in &draws {
            for k in 0..ACTION_DIM {
                sum[k] += x[k];
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for x in &draws {
            for k in 0..ACTION_DIM {
                sq[k] += (x[k] - mean[k]).powi(2);
            }
        }
        let var_true = 1.0 - ab;
        for k in 0..ACTION_DIM {
            let var = sq[k] / (n - 1) as f64;
            let se_mean = (var_true / n as f64).sqrt();
            let se_var = var_true * (2.0 / (n - 1) as f64).sqrt();
            assert!(
                (mean[k] - ab.sqrt() * a0[k]).abs() < 3.0 * se_mean,
                "step {i} dim {k} mean {}",
                mean[k]
            );
            assert!(
                (var - var_true).abs() < 3.0 * se_var,
                "step {i} dim {k} var {var}"
            );
        }
    }
}

#[test]
fn untrained_chain_covers_all_octants() {
    let schedule = DiffusionSchedule::new(5, 0.1, 0.5).unwrap();
    let (eps, _) = nets(6);
    let mut st = SeededStream::new(60);
    let s = states(10_000, &mut st);
    let a = sample_actions(&eps, s.view(), &schedule, &mut st, 0.0).unwrap();
    let mut hit = [false; 8];
    for row in a.rows() {
        let o = (row[0] > 0.0) as usize
            | ((row[1] > 0.0) as usize) << 1
            | ((row[2] > 0.0) as usize) << 2;
        hit[o] = true;
    }
    assert!(hit.iter().all(|h| *h));
    let mean = a.mean().unwrap();
    assert!(mean.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chain_is_bounded_and_deterministic(seed in any::<u64>(), t in 1usize..=20) {
        let schedule = DiffusionSchedule::new(t, 1e-4, 0.9).unwrap();
        let (mut eps, _) = nets(seed);
        // large weights push pre-clip values far outside the box
        for s in eps.param_slices_mut() {
            for v in s.iter_mut() {
                *v *= 5.0;
            }
        }
        let mut st = SeededStream::new(seed);
        let s = states(16, &mut st);
        let noise = ChainNoise::draw(16, &schedule, &mut st);
        let a = denoise_chain(&eps, s.view(), &schedule, &noise).unwrap();
        prop_assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(a, denoise_chain(&eps, s.view(), &schedule, &noise).unwrap());
    }

    #[test]
    fn inward_and_exact_agree_without_saturation(seed in 0u64..1000) {
        let schedule = DiffusionSchedule::new(2, 0.1, 0.2).unwrap();
        let (mut eps, critic) = nets(seed);
        eps.scale(0.01);
        let mut st = SeededStream::new(seed);
        let s = states(4, &mut st);
        let mut noise = ChainNoise::draw(4, &schedule, &mut st);
        noise.prior *= 0.05;
        for z in noise.z.iter_mut() {
            *z *= 0.05;
        }
        let a = policy_value_gradient(&eps, &critic, s.view(), &schedule, &noise, ClipGradient::Exact).unwrap();
        let b = policy_value_gradient(&eps, &critic, s.view(), &schedule, &noise, ClipGradient::Inward).unwrap();
        prop_assert_eq!(a, b);
    }
}
