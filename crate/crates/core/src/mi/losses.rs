//! Minibatch objectives for the three bounds. Every loss is the negated
//! bound so that gradient descent tightens it.

use ndarray::{s, Array2, ArrayView2};

use super::CmiBatch;
use crate::error::{check_dim, Result};
use crate::numerics::{hstack, sigmoid, softplus, Network};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Critic values above this are clamped before `exp(T - 1)`.
pub const KLD_EXP_CLAMP: f64 = 30.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Log density of `x` under diagonal Gaussians parameterised row-wise by
/// `[mean | log_std]`, plus `d log q / d head_output`.
pub(crate) fn gaussian_log_density(head: &Array2<f64>, x: ArrayView2<'_, f64>) -> (Vec<f64>, Array2<f64>) {
    let d = x.ncols();
    debug_assert_eq!(head.ncols(), 2 * d);
    let mut logq = vec![0.0; x.nrows()];
    let mut grad = Array2::zeros(head.raw_dim());
    let mut clamped = 0usize;
    for (i, lq) in logq.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..d {
            let mean = head[[i, j]];
            let raw = head[[i, d + j]];
            let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let inv_std = (-log_std).exp();
            let r = (x[[i, j]] - mean) * inv_std;
            acc += -HALF_LN_2PI - log_std - 0.5 * r * r;
            grad[[i, j]] = r * inv_std;
            if raw == log_std {
                grad[[i, d + j]] = r * r - 1.0;
            } else {
                clamped += 1;
            }
        }
        *lq = acc;
    }
    if clamped > 0 {
        log::debug!("{clamped} predicted log-std values clamped to [{LOG_STD_MIN}, {LOG_STD_MAX}]");
    }
    (logq, grad)
}

/// Output of [`vlb_loss`].
#[derive(Debug, Clone)]
pub struct VlbLoss {
    /// `-mean[log q(x|y,z) - log q(x|z)]`
    pub value: f64,
    /// `log q(x|y,z) - log q(x|z)` per row.
    pub pointwise: Vec<f64>,
    pub conditional_nll: f64,
    pub prior_nll: f64,
    /// Gradient of `conditional_nll` (equal to the gradient of `value`
    /// with respect to the conditional head).
    pub conditional_grads: Vec<f64>,
    /// Gradient of `prior_nll`; the prior head is a density model of
    /// `p(x|z)` and is fitted by maximum likelihood, not by the bound.
    pub prior_grads: Vec<f64>,
}

/// Conditional variational bound with heads `q(x|y,z)` (input `[y|z]`)
/// and `q(x|z)` (input `z`).
pub fn vlb_loss(conditional: &Network, prior: &Network, batch: &CmiBatch) -> Result<VlbLoss> {
    let dims = batch.dims();
    check_dim("conditional head output", 2 * dims.x, conditional.output_dim())?;
    check_dim("prior head output", 2 * dims.x, prior.output_dim())?;
    let n = batch.len() as f64;

    let cond_in = hstack(&[batch.y.view(), batch.z.view()]);
    let (cond_out, cond_cache) = conditional.forward_cached(cond_in.view())?;
    let (prior_out, prior_cache) = prior.forward_cached(batch.z.view())?;
    let (logq_c, dc) = gaussian_log_density(&cond_out, batch.x.view());
    let (logq_p, dp) = gaussian_log_density(&prior_out, batch.x.view());

    let pointwise: Vec<f64> = logq_c.iter().zip(&logq_p).map(|(c, p)| c - p).collect();
    let conditional_nll = -logq_c.iter().sum::<f64>() / n;
    let prior_nll = -logq_p.iter().sum::<f64>() / n;

    let mut conditional_grads = vec![0.0; conditional.param_count()];
    conditional.backward(&cond_cache, (dc * (-1.0 / n)).view(), &mut conditional_grads, false);
    let mut prior_grads = vec![0.0; prior.param_count()];
    prior.backward(&prior_cache, (dp * (-1.0 / n)).view(), &mut prior_grads, false);

    Ok(VlbLoss {
        value: conditional_nll - prior_nll,
        pointwise,
        conditional_nll,
        prior_nll,
        conditional_grads,
        prior_grads,
    })
}

/// Output of [`kld_loss`] and [`jsd_loss`].
#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub value: f64,
    pub joint_scores: Vec<f64>,
    pub negative_scores: Vec<f64>,
    pub grads: Vec<f64>,
}

/// Stacks joint rows `[x|y|z]` on top of negative rows `[x~|y|z]`.
pub(crate) fn critic_input(batch: &CmiBatch, negatives: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_dim("negative rows", batch.len(), negatives.nrows())?;
    check_dim("negative cols", batch.x.ncols(), negatives.ncols())?;
    let joint = hstack(&[batch.x.view(), batch.y.view(), batch.z.view()]);
    let neg = hstack(&[negatives, batch.y.view(), batch.z.view()]);
    Ok(ndarray::concatenate(ndarray::Axis(0), &[joint.view(), neg.view()]).expect("same width"))
}

/// Critic scores for joint rows only.
pub(crate) fn joint_scores(critic: &Network, batch: &CmiBatch) -> Result<Vec<f64>> {
    let input = hstack(&[batch.x.view(), batch.y.view(), batch.z.view()]);
    Ok(critic.forward(input.view())?.column(0).to_vec())
}

fn critic_objective<F>(critic: &Network, batch: &CmiBatch, negatives: ArrayView2<'_, f64>, per_row: F) -> Result<CriticLoss>
where
    // (score, is_joint) -> (loss contribution, d contribution / d score)
    F: Fn(f64, bool) -> (f64, f64),
{
    check_dim("critic output", 1, critic.output_dim())?;
    let n = batch.len();
    let input = critic_input(batch, negatives)?;
    let (scores, cache) = critic.forward_cached(input.view())?;
    let mut upstream = Array2::zeros((2 * n, 1));
    let mut value = 0.0;
    for i in 0..2 * n {
        let (l, g) = per_row(scores[[i, 0]], i < n);
        value += l;
        upstream[[i, 0]] = g / n as f64;
    }
    let mut grads = vec![0.0; critic.param_count()];
    critic.backward(&cache, upstream.view(), &mut grads, false);
    Ok(CriticLoss {
        value: value / n as f64,
        joint_scores: scores.slice(s![..n, 0]).to_vec(),
        negative_scores: scores.slice(s![n.., 0]).to_vec(),
        grads,
    })
}

/// `-(mean_joint[T] - mean_neg[exp(T - 1)])`, with `T` clamped at 30
/// inside the exponential.
pub fn kld_loss(critic: &Network, batch: &CmiBatch, negatives: ArrayView2<'_, f64>) -> Result<CriticLoss> {
    let out = critic_objective(critic, batch, negatives, |t, joint| {
        if joint {
            (-t, -1.0)
        } else if t > KLD_EXP_CLAMP {
            ((KLD_EXP_CLAMP - 1.0).exp(), 0.0)
        } else {
            let e = (t - 1.0).exp();
            (e, e)
        }
    })?;
    let clamped = out.negative_scores.iter().filter(|&&t| t > KLD_EXP_CLAMP).count();
    if clamped > 0 {
        log::debug!("{clamped} KLD critic values clamped at {KLD_EXP_CLAMP}");
    }
    Ok(out)
}

/// `mean_joint[sp(-T)] + mean_neg[sp(T)] - log 4`.
pub fn jsd_loss(critic: &Network, batch: &CmiBatch, negatives: ArrayView2<'_, f64>) -> Result<CriticLoss> {
    let ln4 = 4f64.ln();
    critic_objective(critic, batch, negatives, |t, joint| {
        if joint {
            (softplus(-t) - 0.5 * ln4, -sigmoid(-t))
        } else {
            (softplus(t) - 0.5 * ln4, sigmoid(t))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{central_difference, relative_error};
    use crate::numerics::{rng_from_seed, Activation, Rng};
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    fn batch(rng: &mut Rng) -> (CmiBatch, Array2<f64>) {
        let b = CmiBatch::new(normal(7, 2, rng), normal(7, 3, rng), normal(7, 2, rng)).unwrap();
        let neg = normal(7, 2, rng);
        (b, neg)
    }

    fn critic(rng: &mut Rng) -> Network {
        Network::initialized(Network::mlp(7, &[6, 5], 1, Activation::Tanh, Activation::Linear), rng).unwrap()
    }

    fn with_params(net: &Network, p: &[f64]) -> Network {
        let mut n = net.clone();
        n.set_params(p).unwrap();
        n
    }

    #[test]
    fn zero_critic_jsd_bound_is_zero() {
        let mut rng = rng_from_seed(1);
        let (b, neg) = batch(&mut rng);
        let zero = Network::new(Network::mlp(7, &[4], 1, Activation::Relu, Activation::Linear)).unwrap();
        let out = jsd_loss(&zero, &b, neg.view()).unwrap();
        assert!(out.value.abs() < 1e-15);
        assert!(out.joint_scores.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn kld_bound_is_zero_at_unit_critic() {
        // A critic that outputs 1 everywhere: bias of the last layer.
        let mut rng = rng_from_seed(2);
        let (b, neg) = batch(&mut rng);
        let mut net = Network::new(Network::mlp(7, &[3], 1, Activation::Relu, Activation::Linear)).unwrap();
        let last = net.param_count() - 1;
        net.params_mut()[last] = 1.0;
        let out = kld_loss(&net, &b, neg.view()).unwrap();
        assert!(out.value.abs() < 1e-15);
    }

    #[test]
    fn kld_clamps_large_scores() {
        let mut rng = rng_from_seed(3);
        let (b, neg) = batch(&mut rng);
        let mut net = Network::new(Network::mlp(7, &[3], 1, Activation::Relu, Activation::Linear)).unwrap();
        let last = net.param_count() - 1;
        net.params_mut()[last] = 500.0;
        let out = kld_loss(&net, &b, neg.view()).unwrap();
        assert!(out.value.is_finite());
        let expected = -500.0 + 29f64.exp();
        assert!((out.value - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn kld_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(4);
        let (b, neg) = batch(&mut rng);
        let net = critic(&mut rng);
        let out = kld_loss(&net, &b, neg.view()).unwrap();
        let fd = central_difference(|p| kld_loss(&with_params(&net, p), &b, neg.view()).unwrap().value, net.params(), 1e-5);
        assert!(relative_error(&out.grads, &fd) < 1e-4);
    }

    #[test]
    fn jsd_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(5);
        let (b, neg) = batch(&mut rng);
        let net = critic(&mut rng);
        let out = jsd_loss(&net, &b, neg.view()).unwrap();
        let fd = central_difference(|p| jsd_loss(&with_params(&net, p), &b, neg.view()).unwrap().value, net.params(), 1e-5);
        assert!(relative_error(&out.grads, &fd) < 1e-4);
    }

    #[test]
    fn vlb_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(6);
        let (b, _) = batch(&mut rng);
        let cond = Network::initialized(Network::mlp(5, &[6], 4, Activation::Tanh, Activation::Linear), &mut rng).unwrap();
        let prior = Network::initialized(Network::mlp(2, &[6], 4, Activation::Softplus, Activation::Linear), &mut rng).unwrap();
        let out = vlb_loss(&cond, &prior, &b).unwrap();
        assert!((out.value - (out.conditional_nll - out.prior_nll)).abs() < 1e-12);

        let fd_c = central_difference(|p| vlb_loss(&with_params(&cond, p), &prior, &b).unwrap().value, cond.params(), 1e-5);
        assert!(relative_error(&out.conditional_grads, &fd_c) < 1e-4);
        let fd_p = central_difference(|p| vlb_loss(&cond, &with_params(&prior, p), &b).unwrap().prior_nll, prior.params(), 1e-5);
        assert!(relative_error(&out.prior_grads, &fd_p) < 1e-4);
    }

    #[test]
    fn vlb_is_zero_when_heads_agree() {
        let mut rng = rng_from_seed(7);
        let (b, _) = batch(&mut rng);
        // Both heads ignore their inputs: only output biases are nonzero.
        let mut cond = Network::new(Network::mlp(5, &[3], 4, Activation::Relu, Activation::Linear)).unwrap();
        let mut prior = Network::new(Network::mlp(2, &[3], 4, Activation::Relu, Activation::Linear)).unwrap();
        let bias = [0.3, -0.1, 0.2, -0.4];
        let nc = cond.param_count();
        let np = prior.param_count();
        cond.params_mut()[nc - 4..].copy_from_slice(&bias);
        prior.params_mut()[np - 4..].copy_from_slice(&bias);
        let out = vlb_loss(&cond, &prior, &b).unwrap();
        assert!(out.pointwise.iter().all(|&v| v.abs() < 1e-12));
        assert!(out.value.abs() < 1e-12);
    }

    #[test]
    fn log_std_clamped() {
        let head = ndarray::array![[0.0, -40.0]];
        let x = ndarray::array![[0.0]];
        let (lq, g) = gaussian_log_density(&head, x.view());
        assert!((lq[0] - (-HALF_LN_2PI + 5.0)).abs() < 1e-12);
        assert_eq!(g[[0, 1]], 0.0);
    }
}
