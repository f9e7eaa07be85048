use isgc_core::diffusion::{ClipGradient, DiffusionPolicy, DiffusionSchedule};
use isgc_core::nn::*;
use isgc_core::oracle::batch_oracle;
use isgc_core::pipeline::*;
use isgc_core::report::curve_csv;
use isgc_core::scenario::{state_stream, DistConfig, SeededStream};
use isgc_core::trainer::*;
use ndarray::Array2;
use proptest::prelude::*;

fn tiny() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        steps_per_epoch: 20,
        steps_per_collect: 20,
        batch_size: 16,
        eval_states: 10,
        actor_hidden: vec![8, 8],
        critic_hidden: vec![8, 8],
        oracle_resolution: 20,
        ..TrainConfig::desk()
    }
}

fn slack() -> PipelineConstants {
    PipelineConstants {
        t_max: 1e6,
        ..PipelineConstants::default()
    }
}

fn vertex_state() -> EnvState {
    EnvState {
        h_sem: 1.5,
        sigma_a: 1.0,
        sigma_m: 1.0,
        gain_am: 1.0,
        power_am: 1.0,
        gain_ms: 1.0,
        power_ms: 1.0,
        symbols_avg: 0.5,
        compute_aigc: 10.0,
        compute_render: 20.0,
    }
}

fn random_batch(n: usize, st: &mut SeededStream) -> Batch {
    let recs: Vec<ReplayRecord> = (0..n)
        .map(|_| {
            let mut s = [0.0; STATE_DIM];
            let mut s2 = [0.0; STATE_DIM];
            s.iter_mut()
                .chain(s2.iter_mut())
                .for_each(|v| *v = st.uniform(-1.0, 1.0));
            ReplayRecord {
                state_norm: s,
                raw_action: [
                    st.uniform(-1.0, 1.0),
                    st.uniform(-1.0, 1.0),
                    st.uniform(-1.0, 1.0),
                ],
                reward: st.uniform(-50.0, 200.0),
                next_state_norm: s2,
                done: true,
            }
        })
        .collect();
    Batch::from_records(&recs.iter().collect::<Vec<_>>())
}

#[test]
fn full_loop_is_deterministic() {
    let cfg = tiny();
    let (c, d) = (PipelineConstants::default(), DistConfig::default());
    let a = train(&cfg, &c, &d).unwrap();
    let b = train(&cfg, &c, &d).unwrap();
    assert_eq!(curve_csv(&a.curve).to_text(), curve_csv(&b.curve).to_text());
    assert_eq!(a.actor, b.actor);
    assert_eq!(a.curve.rows.len(), 3);
    let other = train(&TrainConfig { seed: 2, ..cfg }, &c, &d).unwrap();
    assert_ne!(a.actor, other.actor);
}

#[test]
fn zero_epochs_gives_empty_curve_and_untrained_actor() {
    let cfg = TrainConfig {
        epochs: 0,
        ..tiny()
    };
    let out = train(&cfg, &PipelineConstants::default(), &DistConfig::default()).unwrap();
    assert!(out.curve.rows.is_empty());
    assert!(out.final_eval.is_none());
    let mut init = SeededStream::new(cfg.seed).substream(0);
    let schedule = DiffusionSchedule::new(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max).unwrap();
    assert_eq!(
        out.actor,
        DiffusionPolicy::new(&cfg.actor_hidden, schedule, &mut init).unwrap()
    );
}

#[test]
fn oracle_policy_ratio_is_one() {
    let env = Env::new(PipelineConstants::default(), DistConfig::default());
    let set = EvalSet::new(&env, 50, 4, 40).unwrap();
    let mut p = OraclePolicy {
        consts: env.consts,
        resolution: 40,
    };
    let r = evaluate(&mut p, &set, &env.consts).unwrap();
    assert!((r.oracle_ratio - 1.0).abs() < 1e-9);
}

#[test]
fn uniform_policy_on_vertex_state() {
    let c = slack();
    let env = Env::new(c, DistConfig::default());
    let set = EvalSet::from_states(&env, vec![vertex_state()], 1, 400).unwrap();
    let r = evaluate(&mut UniformPolicy { consts: c }, &set, &c).unwrap();
    let want = (10.0 / 3.0 * 3.0 + 10.0 / 3.0 + 10.0 / 3.0) / 29.6;
    assert!((r.oracle_ratio - want).abs() < 1e-9, "{}", r.oracle_ratio);
    assert!((r.oracle_ratio - 0.563).abs() < 1e-3);
}

#[test]
fn duplicated_states_give_identical_rows() {
    let env = Env::new(PipelineConstants::default(), DistConfig::default());
    let s = state_stream(3, 1, &env.dist)[0];
    let set = EvalSet::from_states(&env, vec![s, s, s], 9, 30).unwrap();
    let mut actor = DiffusionActor {
        policy: DiffusionPolicy::new(
            &[8],
            DiffusionSchedule::new(2, 0.1, 0.5).unwrap(),
            &mut SeededStream::new(1),
        )
        .unwrap(),
        explore_std: 0.0,
        consts: env.consts,
    };
    let mut p = OraclePolicy {
        consts: env.consts,
        resolution: 30,
    };
    let r = evaluate(&mut p, &set, &env.consts).unwrap();
    assert!(r.per_state_utility.windows(2).all(|w| w[0] == w[1]));
    // the diffusion chain draws fresh noise per row, so only bounds are shared
    let d = evaluate(&mut actor, &set, &env.consts).unwrap();
    assert!(d.per_state_utility.iter().all(|u| u.is_finite()));
}

#[test]
fn oracle_collect_matches_batch_oracle() {
    let c = slack();
    let env = Env::new(c, DistConfig::default());
    let mut buffer = ReplayBuffer::new(100);
    let mut p = OraclePolicy {
        consts: c,
        resolution: 30,
    };
    let stats = collect(
        &env,
        &mut p,
        40,
        &mut buffer,
        &mut SeededStream::new(5),
        &mut SeededStream::new(6),
    )
    .unwrap();
    let states = state_stream(5, 40, &env.dist);
    let o = batch_oracle(&states, &c, 30).unwrap();
    assert_eq!(o.infeasible_count, 0);
    assert!((stats.mean_reward() - o.mean_utility).abs() <= 1e-12 * o.mean_utility);
    assert_eq!(buffer.len(), 40);
    assert!(buffer.records().all(|r| r.done));
}

#[test]
fn gamma_zero_targets_are_raw_rewards() {
    let mut st = SeededStream::new(12);
    let batch = random_batch(64, &mut st);
    let spec = critic_spec(&[8]).unwrap();
    let t = NetParams::init(&spec, &mut st);
    let actor =
        DiffusionPolicy::new(&[8], DiffusionSchedule::new(3, 0.1, 0.5).unwrap(), &mut st).unwrap();
    let y = critic_targets(
        &batch,
        [&t, &t],
        &actor,
        0.0,
        (1.0, RewardShape::Linear),
        &mut st,
    )
    .unwrap();
    assert_eq!(y, batch.rewards);
}

#[test]
fn soft_update_shrinks_gap_geometrically() {
    let spec = critic_spec(&[16]).unwrap();
    let mut st = SeededStream::new(1);
    let src = NetParams::init(&spec, &mut st);
    let mut tgt = NetParams::init(&spec, &mut st);
    let tau = 0.05;
    let dist = |a: &NetParams, b: &NetParams| {
        a.param_slices()
            .iter()
            .zip(b.param_slices())
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)))
            .sum::<f64>()
            .sqrt()
    };
    let mut gap = dist(&tgt, &src);
    for _ in 0..50 {
        soft_update(&mut tgt, &src, tau).unwrap();
        let g = dist(&tgt, &src);
        assert!((g - (1.0 - tau) * gap).abs() <= 1e-9 * gap);
        gap = g;
    }
}

#[test]
fn critic_learns_a_constant_reward() {
    let spec = critic_spec(&[16, 16]).unwrap();
    let mut st = SeededStream::new(7);
    let mut critic = Trainable::new(NetParams::init(&spec, &mut st));
    let x = Array2::from_shape_fn((64, STATE_DIM + ACTION_DIM), |_| st.uniform(-1.0, 1.0));
    let y = vec![2.5; 64];
    for (lr, steps) in [(1e-2, 1000), (1e-3, 1000), (1e-4, 1000)] {
        for _ in 0..steps {
            regress_critic(&mut critic, x.view(), &y, lr).unwrap();
        }
    }
    let q = critic.params.predict(x.view()).unwrap();
    let worst = q.iter().fold(0.0f64, |m, v| m.max((v - 2.5).abs()));
    assert!(worst < 1e-2, "worst deviation {worst}");
}

/// `Q(s, a) = a_sem`: the actor should push the first coordinate up.
fn first_coordinate_critic() -> NetParams {
    let spec = NetSpec::new(
        vec![STATE_DIM + ACTION_DIM, 1, 1],
        Activation::Identity,
        Activation::Identity,
    )
    .unwrap();
    let mut w = Array2::zeros((1, STATE_DIM + ACTION_DIM));
    w[[0, STATE_DIM]] = 1.0;
    let layers = vec![
        Dense {
            weight: w,
            bias: ndarray::Array1::zeros(1),
        },
        Dense {
            weight: Array2::ones((1, 1)),
            bias: ndarray::Array1::zeros(1),
        },
    ];
    NetParams::from_layers(spec, layers).unwrap()
}

#[test]
fn actor_update_climbs_the_critic() {
    let critic = first_coordinate_critic();
    let mut st = SeededStream::new(8);
    let mut actor = DiffusionPolicy::new(
        &[16, 16],
        DiffusionSchedule::new(5, 0.1, 0.5).unwrap(),
        &mut st,
    )
    .unwrap();
    let mut adam = AdamState::new(&actor.net);
    let states = Array2::from_shape_fn((64, STATE_DIM), |_| st.uniform(-1.0, 1.0));
    let mean_first = |a: &DiffusionPolicy| {
        let x = isgc_core::diffusion::sample_actions(
            &a.net,
            states.view(),
            &a.schedule,
            &mut SeededStream::new(99),
            0.0,
        )
        .unwrap();
        x.column(0).mean().unwrap()
    };
    let before = mean_first(&actor);
    let first_loss = actor_update(
        states.view(),
        &mut actor,
        &mut adam,
        &critic,
        1e-3,
        ClipGradient::Inward,
        &mut st,
    )
    .unwrap();
    for _ in 0..100 {
        actor_update(
            states.view(),
            &mut actor,
            &mut adam,
            &critic,
            1e-3,
            ClipGradient::Inward,
            &mut st,
        )
        .unwrap();
    }
    let last_loss = actor_update(
        states.view(),
        &mut actor,
        &mut adam,
        &critic,
        1e-3,
        ClipGradient::Inward,
        &mut st,
    )
    .unwrap();
    assert!(mean_first(&actor) > before + 0.2);
    assert!(last_loss < first_loss);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let critic = first_coordinate_critic();
    let mut st = SeededStream::new(10);
    let mut actor =
        DiffusionPolicy::new(&[8], DiffusionSchedule::new(5, 0.1, 0.5).unwrap(), &mut st).unwrap();
    let before = actor.clone();
    let mut adam = AdamState::new(&actor.net);
    let states = Array2::from_shape_fn((8, STATE_DIM), |_| st.uniform(-1.0, 1.0));
    for _ in 0..5 {
        actor_update(
            states.view(),
            &mut actor,
            &mut adam,
            &critic,
            0.0,
            ClipGradient::Inward,
            &mut st,
        )
        .unwrap();
    }
    assert_eq!(actor, before);

    let mut c = Trainable::new(critic.clone());
    let x = Array2::from_shape_fn((8, STATE_DIM + ACTION_DIM), |_| st.uniform(-1.0, 1.0));
    regress_critic(&mut c, x.view(), &[1.0; 8], 0.0).unwrap();
    assert_eq!(c.params, critic);
}

#[test]
fn empty_buffer_refuses_to_sample() {
    let b = ReplayBuffer::new(4);
    assert!(b.sample(2, &mut SeededStream::new(1)).is_err());
}

proptest! {
    #[test]
    fn buffer_never_exceeds_capacity(cap in 1usize..50, pushes in 0usize..200) {
        let mut b = ReplayBuffer::new(cap);
        for k in 0..pushes {
            b.push(ReplayRecord {
                state_norm: [0.0; STATE_DIM],
                raw_action: [0.0; 3],
                reward: k as f64,
                next_state_norm: [0.0; STATE_DIM],
                done: true,
            });
            prop_assert!(b.len() <= cap);
        }
        prop_assert_eq!(b.len(), pushes.min(cap));
        // survivors are the newest pushes, oldest first
        let first = pushes.saturating_sub(cap) as f64;
        for (i, r) in b.records().enumerate() {
            prop_assert_eq!(r.reward, first + i as f64);
        }
    }

    #[test]
    fn allocation_mapping_meets_budget(a in prop::array::uniform3(-1.0f64..=1.0)) {
        let c = PipelineConstants::default();
        let w = action_to_allocation(&a, &c);
        prop_assert!((w.total() - c.w_total).abs() <= 1e-12 * c.w_total);
        prop_assert!(w.to_array().iter().all(|x| *x >= c.w_floor));
    }

    #[test]
    fn gamma_zero_targets_on_random_batches(seed in any::<u64>()) {
        let mut st = SeededStream::new(seed);
        let batch = random_batch(32, &mut st);
        let spec = critic_spec(&[4]).unwrap();
        let t = NetParams::init(&spec, &mut st);
        let actor = DiffusionPolicy::new(&[4], DiffusionSchedule::new(2, 0.1, 0.5).unwrap(), &mut st).unwrap();
        let y = critic_targets(&batch, [&t, &t], &actor, 0.0, (1.0, RewardShape::Linear), &mut st).unwrap();
        prop_assert_eq!(y, batch.rewards);
    }
}
