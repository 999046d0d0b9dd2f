//! Analytic gradients against central differences on random small instances.

use empowerkit::env::ACTION_DIM;
use empowerkit::intrinsic::ForwardModel;
use empowerkit::mi::{jsd_loss, kld_loss, vlb_loss, CmiBatch};
use empowerkit::numerics::gradcheck::{central_difference, relative_error};
use empowerkit::numerics::{rng_from_seed, Activation, LayerSpec, Network, Rng};
use empowerkit::rl::{PolicyValueNets, PpoConfig};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand_distr::{Distribution, StandardNormal};

const TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;

fn normal(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn with_params(net: &Network, p: &[f64]) -> Network {
    let mut n = net.clone();
    n.set_params(p).unwrap();
    n
}

fn batch(rng: &mut Rng) -> (CmiBatch, Array2<f64>) {
    let b = CmiBatch::new(normal(10, 2, rng), normal(10, 3, rng), normal(10, 2, rng)).unwrap();
    let neg = normal(10, 2, rng);
    (b, neg)
}

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 16,
        rng_seed: RngSeed::Fixed(0x6EAD),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn layer_check(spec: Vec<LayerSpec>, seed: u64) -> (f64, f64) {
    let mut rng = rng_from_seed(seed);
    let mut net = Network::initialized(spec, &mut rng).unwrap();
    // zero biases can put a ReLU pre-activation exactly on its kink
    let jitter = normal(1, net.param_count(), &mut rng);
    net.params_mut().iter_mut().zip(jitter.iter()).for_each(|(p, j)| *p += 0.1 * j);
    let x = normal(5, net.input_dim(), &mut rng);
    let w = normal(5, net.output_dim(), &mut rng);
    let g = net.forward_backward(x.view(), w.view()).unwrap();
    let objective = |n: &Network, x: &Array2<f64>| (&n.forward(x.view()).unwrap() * &w).sum();
    let fd_p = central_difference(|p| objective(&with_params(&net, p), &x), net.params(), STEP);
    let flat: Vec<f64> = x.iter().copied().collect();
    let fd_x = central_difference(
        |v| objective(&net, &Array2::from_shape_vec(x.raw_dim(), v.to_vec()).unwrap()),
        &flat,
        STEP,
    );
    let gx: Vec<f64> = g.input.iter().copied().collect();
    (relative_error(&g.params, &fd_p), relative_error(&gx, &fd_x))
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn dense_layers(seed in any::<u64>(), act in 0u8..4) {
        let act = Activation::from_code(act).unwrap();
        let (p, x) = layer_check(Network::mlp(4, &[6, 5], 3, act, act), seed);
        prop_assert!(p < TOL && x < TOL, "{act:?}: params {p:e}, input {x:e}");
    }

    #[test]
    fn glu_layers(seed in any::<u64>()) {
        let spec = vec![
            LayerSpec::Glu { input: 4, output: 6 },
            LayerSpec::Dense { input: 6, output: 2, activation: Activation::Linear },
        ];
        let (p, x) = layer_check(spec, seed);
        prop_assert!(p < TOL && x < TOL, "params {p:e}, input {x:e}");
    }

    #[test]
    fn critic_losses(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let (b, neg) = batch(&mut rng);
        let net = Network::initialized(Network::mlp(7, &[8], 1, Activation::Tanh, Activation::Linear), &mut rng).unwrap();
        let k = kld_loss(&net, &b, neg.view()).unwrap();
        let fd = central_difference(|p| kld_loss(&with_params(&net, p), &b, neg.view()).unwrap().value, net.params(), STEP);
        prop_assert!(relative_error(&k.grads, &fd) < TOL);
        let j = jsd_loss(&net, &b, neg.view()).unwrap();
        let fd = central_difference(|p| jsd_loss(&with_params(&net, p), &b, neg.view()).unwrap().value, net.params(), STEP);
        prop_assert!(relative_error(&j.grads, &fd) < TOL);
    }

    #[test]
    fn variational_loss(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let (b, _) = batch(&mut rng);
        let cond = Network::initialized(Network::mlp(5, &[6], 4, Activation::Tanh, Activation::Linear), &mut rng).unwrap();
        let prior = Network::initialized(Network::mlp(2, &[6], 4, Activation::Tanh, Activation::Linear), &mut rng).unwrap();
        let out = vlb_loss(&cond, &prior, &b).unwrap();
        let fd_c = central_difference(|p| vlb_loss(&with_params(&cond, p), &prior, &b).unwrap().value, cond.params(), STEP);
        prop_assert!(relative_error(&out.conditional_grads, &fd_c) < TOL);
        let fd_p = central_difference(|p| vlb_loss(&cond, &with_params(&prior, p), &b).unwrap().prior_nll, prior.params(), STEP);
        prop_assert!(relative_error(&out.prior_grads, &fd_p) < TOL);
    }

    #[test]
    fn ppo_surrogate(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let cfg = PpoConfig { hidden: vec![8], ..PpoConfig::default() };
        let mut n = PolicyValueNets::new(4, ACTION_DIM, &cfg, &mut rng).unwrap();
        n.policy.scale_output_layer(30.0);
        let states = normal(12, 4, &mut rng);
        let (actions, logp) = n.sample(states.view(), &mut rng).unwrap();
        let old: Vec<f64> = logp.iter().enumerate().map(|(i, l)| l + 0.04 * (i as f64 - 6.0)).collect();
        let adv: Vec<f64> = normal(12, 1, &mut rng).into_iter().collect();
        let sur = n.surrogate(states.view(), actions.view(), &old, &adv, cfg.clip_eps).unwrap();
        let eval = |p: &[f64], ls: &[f64]| {
            let mut c = n.clone();
            c.policy.set_params(p).unwrap();
            c.log_std = ls.to_vec();
            c.surrogate(states.view(), actions.view(), &old, &adv, cfg.clip_eps).unwrap().value
        };
        let fd = central_difference(|p| eval(p, &n.log_std), n.policy.params(), STEP);
        prop_assert!(relative_error(&sur.policy_grads, &fd) < TOL);
        let fd = central_difference(|ls| eval(n.policy.params(), ls), &n.log_std, STEP);
        prop_assert!(relative_error(&sur.log_std_grads, &fd) < TOL);
    }

    #[test]
    fn forward_model_loss(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let mut m = ForwardModel::new(5, ACTION_DIM, 2, 8, 1e-3, &mut rng).unwrap();
        m.net.scale_output_layer(50.0);
        let (s, a, y) = (normal(9, 5, &mut rng), normal(9, ACTION_DIM, &mut rng), normal(9, 2, &mut rng));
        let (_, g) = m.loss_and_grad(s.view(), a.view(), y.view()).unwrap();
        let fd = central_difference(
            |p| {
                let mut c = m.clone();
                c.net.set_params(p).unwrap();
                c.loss_and_grad(s.view(), a.view(), y.view()).unwrap().0
            },
            m.net.params(),
            STEP,
        );
        prop_assert!(relative_error(&g, &fd) < TOL);
    }
}
