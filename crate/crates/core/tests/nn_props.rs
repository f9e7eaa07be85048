use isgc_core::nn::*;
use isgc_core::scenario::SeededStream;
use ndarray::Array2;
use proptest::prelude::*;

fn random_matrix(rows: usize, cols: usize, st: &mut SeededStream) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    st.fill_standard_normal(m.as_slice_mut().unwrap());
    m
}

/// Half squared error against a fixed target, with its analytic gradient.
fn sq_loss(net: &NetParams, x: &Array2<f64>, y: &Array2<f64>) -> (f64, NetParams) {
    let (out, cache) = net.forward(x.view()).unwrap();
    let diff = &out - y;
    let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
    let (g, _) = net.backward(&cache, diff.view()).unwrap();
    (loss, g)
}

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Tanh), Just(Activation::Mish)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradients_match_central_differences(
        depth in 1usize..=3,
        width in 1usize..=64,
        input in 1usize..=12,
        output in 1usize..=4,
        hidden_act in activation(),
        out_act in prop_oneof![Just(Activation::Identity), Just(Activation::Tanh)],
        seed in any::<u64>(),
    ) {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(width, depth));
        widths.push(output);
        let spec = NetSpec::new(widths, hidden_act, out_act).unwrap();
        let mut st = SeededStream::new(seed);
        let net = NetParams::init(&spec, &mut st);
        let x = random_matrix(4, input, &mut st);
        let y = random_matrix(4, output, &mut st);
        let err = grad_check(|p: &NetParams| sq_loss(p, &x, &y), &net, 100, &mut st);
        prop_assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn forward_and_backward_are_pure(seed in any::<u64>()) {
        let spec = NetSpec::mlp(6, &[16, 16], 2, Activation::Identity).unwrap();
        let mut st = SeededStream::new(seed);
        let net = NetParams::init(&spec, &mut st);
        let x = random_matrix(5, 6, &mut st);
        let y = random_matrix(5, 2, &mut st);
        let before = net.clone();
        let a = sq_loss(&net, &x, &y);
        let b = sq_loss(&net, &x, &y);
        prop_assert_eq!(a.0, b.0);
        prop_assert_eq!(a.1, b.1);
        prop_assert_eq!(net, before);
    }
}

/// Same parameters exposed in reverse slice order.
#[derive(Clone)]
struct Reversed(NetParams);

impl Parameters for Reversed {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.0.param_slices();
        v.reverse();
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.0.param_slices_mut();
        v.reverse();
        v
    }
}

#[test]
fn adam_ignores_container_order() {
    let spec = NetSpec::mlp(5, &[8, 8], 3, Activation::Identity).unwrap();
    let mut st = SeededStream::new(3);
    let mut fwd = NetParams::init(&spec, &mut st);
    let mut rev = Reversed(fwd.clone());
    let mut adam_f = AdamState::new(&fwd);
    let mut adam_r = AdamState::new(&rev);
    for k in 0..25 {
        let x = random_matrix(6, 5, &mut st);
        let y = random_matrix(6, 3, &mut st);
        let (_, g) = sq_loss(&fwd, &x, &y);
        adam_f.step(&mut fwd, &g, 1e-2);
        adam_r.step(&mut rev, &Reversed(g), 1e-2);
        assert_eq!(fwd, rev.0, "diverged at step {k}");
    }
}

#[test]
fn corrupted_gradient_is_flagged() {
    let spec = NetSpec::mlp(4, &[12], 2, Activation::Identity).unwrap();
    let mut st = SeededStream::new(9);
    let net = NetParams::init(&spec, &mut st);
    let x = random_matrix(3, 4, &mut st);
    let y = random_matrix(3, 2, &mut st);
    let broken = |p: &NetParams| {
        let (l, mut g) = sq_loss(p, &x, &y);
        g.scale(1.1);
        (l, g)
    };
    assert!(grad_check(broken, &net, 100, &mut st) > 1e-2);
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let spec = NetSpec::mlp(7, &[32, 32], 1, Activation::Identity).unwrap();
    let net = NetParams::init(&spec, &mut SeededStream::new(1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    Checkpoint::net(net.clone()).save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap().net, net);
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0xff;
    assert!(Checkpoint::from_bytes(&bytes).is_err());
}
