use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{Activation, Adam, Network, Rng};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip_eps: f64,
    pub epochs_per_update: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub horizon: usize,
    pub n_envs: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.95,
            clip_eps: 0.2,
            epochs_per_update: 10,
            minibatch: 256,
            lr: 2e-4,
            entropy_coef: 0.0,
            value_coef: 0.5,
            horizon: 128,
            n_envs: 60,
            hidden: vec![128, 64, 32],
            init_log_std: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lam > 0.0 && self.lam <= 1.0) {
            return Err(Error::Config("gamma and lam must lie in (0, 1]".into()));
        }
        if !(self.clip_eps > 0.0) {
            return Err(Error::Config("clip_eps must be positive".into()));
        }
        if self.minibatch == 0 || self.horizon == 0 || self.n_envs == 0 || self.epochs_per_update == 0 {
            return Err(Error::Config("minibatch, horizon, n_envs and epochs_per_update must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("ppo lr must be positive".into()));
        }
        Ok(())
    }
}

/// Gaussian policy with a state-independent log-std, plus a value network.
#[derive(Debug, Clone)]
pub struct PolicyValueNets {
    pub policy: Network,
    /// Clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: Vec<f64>,
    pub value: Network,
    policy_optim: Adam,
    value_optim: Adam,
}

/// Losses and statistics of one PPO update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Per-sample training data for [`PolicyValueNets::update`].
#[derive(Debug, Clone)]
pub struct PpoBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Clipped surrogate loss `-mean(min(rho A, clip(rho) A))` and its gradients.
#[derive(Debug, Clone)]
pub struct SurrogateLoss {
    pub value: f64,
    pub policy_grads: Vec<f64>,
    pub log_std_grads: Vec<f64>,
    pub clip_fraction: f64,
}

impl PolicyValueNets {
    pub fn new(state_dim: usize, action_dim: usize, cfg: &PpoConfig, rng: &mut Rng) -> Result<Self> {
        let mut policy = Network::initialized(
            Network::mlp(state_dim, &cfg.hidden, action_dim, Activation::Tanh, Activation::Linear),
            rng,
        )?;
        policy.scale_output_layer(0.01);
        let value = Network::initialized(Network::mlp(state_dim, &cfg.hidden, 1, Activation::Tanh, Activation::Linear), rng)?;
        let log_std = vec![cfg.init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); action_dim];
        Ok(Self {
            policy_optim: Adam::new(policy.param_count() + action_dim, cfg.lr),
            value_optim: Adam::new(value.param_count(), cfg.lr),
            policy,
            log_std,
            value,
        })
    }

    /// Rebuilds from stored networks (optimiser state starts fresh).
    pub fn from_parts(policy: Network, log_std: Vec<f64>, value: Network, lr: f64) -> Result<Self> {
        check_dim("policy log-std", policy.output_dim(), log_std.len())?;
        check_dim("value output", 1, value.output_dim())?;
        check_dim("policy/value input", policy.input_dim(), value.input_dim())?;
        Ok(Self {
            policy_optim: Adam::new(policy.param_count() + log_std.len(), lr),
            value_optim: Adam::new(value.param_count(), lr),
            policy,
            log_std: log_std.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
            value,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.policy.output_dim()
    }

    pub fn means(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.policy.forward(states)
    }

    pub fn values(&self, states: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.value.forward(states)?.column(0).to_vec())
    }

    /// Draws actions and returns them with their log-probabilities.
    pub fn sample(&self, states: ArrayView2<'_, f64>, rng: &mut Rng) -> Result<(Array2<f64>, Vec<f64>)> {
        let means = self.means(states)?;
        let mut actions = means.clone();
        for mut row in actions.rows_mut() {
            for (a, ls) in row.iter_mut().zip(&self.log_std) {
                let e: f64 = StandardNormal.sample(rng);
                *a += ls.exp() * e;
            }
        }
        let logp = log_probs(&means, actions.view(), &self.log_std);
        Ok((actions, logp))
    }

    pub fn log_probs(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(log_probs(&self.means(states)?, actions, &self.log_std))
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
    }

    /// Clipped surrogate on a minibatch. `advantages` are used as given.
    pub fn surrogate(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        old_log_probs: &[f64],
        advantages: &[f64],
        clip_eps: f64,
    ) -> Result<SurrogateLoss> {
        let (means, cache) = self.policy.forward_cached(states)?;
        check_dim("surrogate actions", means.ncols(), actions.ncols())?;
        let n = states.nrows().max(1) as f64;
        let logp = log_probs(&means, actions, &self.log_std);
        let mut upstream = Array2::zeros(means.raw_dim());
        let mut log_std_grads = vec![0.0; self.log_std.len()];
        let mut value = 0.0;
        let mut clipped = 0usize;
        for i in 0..means.nrows() {
            let ratio = (logp[i] - old_log_probs[i]).exp();
            let a = advantages[i];
            let unclipped = ratio * a;
            let bounded = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a;
            value -= unclipped.min(bounded);
            if (ratio - 1.0).abs() > clip_eps {
                clipped += 1;
            }
            // d(-min)/dlogp is -ratio * A on the unclipped branch, else 0.
            if unclipped <= bounded {
                let coef = -ratio * a / n;
                for j in 0..means.ncols() {
                    let inv_var = (-2.0 * self.log_std[j]).exp();
                    let diff = actions[[i, j]] - means[[i, j]];
                    upstream[[i, j]] = coef * diff * inv_var;
                    log_std_grads[j] += coef * (diff * diff * inv_var - 1.0);
                }
            }
        }
        let mut policy_grads = vec![0.0; self.policy.param_count()];
        self.policy.backward(&cache, upstream.view(), &mut policy_grads, false);
        Ok(SurrogateLoss {
            value: value / n,
            policy_grads,
            log_std_grads,
            clip_fraction: clipped as f64 / n,
        })
    }

    /// `value_coef * mean((V - R)^2)` and its gradient.
    pub fn value_loss(&self, states: ArrayView2<'_, f64>, returns: &[f64], value_coef: f64) -> Result<(f64, Vec<f64>)> {
        let (v, cache) = self.value.forward_cached(states)?;
        let n = states.nrows().max(1) as f64;
        let mut upstream = Array2::zeros(v.raw_dim());
        let mut loss = 0.0;
        for i in 0..v.nrows() {
            let d = v[[i, 0]] - returns[i];
            loss += d * d;
            upstream[[i, 0]] = 2.0 * value_coef * d / n;
        }
        let mut grads = vec![0.0; self.value.param_count()];
        self.value.backward(&cache, upstream.view(), &mut grads, false);
        Ok((value_coef * loss / n, grads))
    }

    /// `epochs_per_update` passes of shuffled minibatches. On a non-finite
    /// loss or gradient every parameter is restored and an error returned.
    pub fn update(&mut self, batch: &PpoBatch, cfg: &PpoConfig, rng: &mut Rng) -> Result<UpdateStats> {
        let snapshot = self.clone();
        match self.update_inner(batch, cfg, rng) {
            Ok(stats) => Ok(stats),
            Err(e) => {
                *self = snapshot;
                Err(e)
            }
        }
    }

    fn update_inner(&mut self, batch: &PpoBatch, cfg: &PpoConfig, rng: &mut Rng) -> Result<UpdateStats> {
        let n = batch.states.nrows();
        let mut advantages = batch.advantages.clone();
        normalize_advantages(&mut advantages);
        let mut idx: Vec<usize> = (0..n).collect();
        let mut stats = UpdateStats::default();
        let mut count = 0.0;
        for epoch in 0..cfg.epochs_per_update {
            idx.shuffle(rng);
            for chunk in idx.chunks(cfg.minibatch) {
                let states = batch.states.select(Axis(0), chunk);
                let actions = batch.actions.select(Axis(0), chunk);
                let old: Vec<f64> = chunk.iter().map(|&i| batch.old_log_probs[i]).collect();
                let adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
                let ret: Vec<f64> = chunk.iter().map(|&i| batch.returns[i]).collect();
                let sur = self.surrogate(states.view(), actions.view(), &old, &adv, cfg.clip_eps)?;
                let (vloss, vgrads) = self.value_loss(states.view(), &ret, cfg.value_coef)?;
                let mut pgrads = sur.policy_grads;
                pgrads.extend(sur.log_std_grads.iter().map(|g| g - cfg.entropy_coef));
                let finite = sur.value.is_finite()
                    && vloss.is_finite()
                    && pgrads.iter().chain(&vgrads).all(|g| g.is_finite());
                if !finite {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite PPO loss (policy {}, value {vloss})", sur.value),
                    });
                }
                let mut joint: Vec<f64> = self.policy.params().to_vec();
                joint.extend_from_slice(&self.log_std);
                self.policy_optim.step(&mut joint, &pgrads);
                let np = self.policy.param_count();
                self.policy.params_mut().copy_from_slice(&joint[..np]);
                for (ls, &v) in self.log_std.iter_mut().zip(&joint[np..]) {
                    *ls = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
                }
                self.value_optim.step(self.value.params_mut(), &vgrads);
                stats.policy_loss += sur.value;
                stats.value_loss += vloss;
                stats.clip_fraction += sur.clip_fraction;
                count += 1.0;
            }
        }
        if count > 0.0 {
            stats.policy_loss /= count;
            stats.value_loss /= count;
            stats.clip_fraction /= count;
        }
        stats.entropy = self.entropy();
        if !stats.entropy.is_finite() {
            return Err(Error::Diverged {
                epoch: cfg.epochs_per_update,
                detail: "non-finite policy entropy".into(),
            });
        }
        Ok(stats)
    }
}

/// Diagonal-Gaussian log density per row.
pub fn log_probs(means: &Array2<f64>, actions: ArrayView2<'_, f64>, log_std: &[f64]) -> Vec<f64> {
    means
        .rows()
        .into_iter()
        .zip(actions.rows())
        .map(|(m, a)| {
            m.iter()
                .zip(a)
                .zip(log_std)
                .map(|((mu, x), ls)| {
                    let r = (x - mu) * (-ls).exp();
                    -0.5 * r * r - ls - HALF_LN_2PI
                })
                .sum()
        })
        .collect()
}

/// In-place `(a - mean) / std` with population std; only centres when the
/// spread is negligible.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-8 { (*a - mean) / std } else { *a - mean };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{central_difference, relative_error};
    use crate::numerics::rng_from_seed;
    use proptest::prelude::*;

    fn nets(rng: &mut crate::numerics::Rng) -> PolicyValueNets {
        let cfg = PpoConfig {
            hidden: vec![8, 6],
            ..PpoConfig::default()
        };
        let mut n = PolicyValueNets::new(4, 2, &cfg, rng).unwrap();
        // larger output weights so the finite-difference check sees curvature
        n.policy.scale_output_layer(50.0);
        n.log_std = vec![-0.3, 0.2];
        n
    }

    fn random(rows: usize, cols: usize, rng: &mut crate::numerics::Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
    }

    #[test]
    fn clipped_branch_example() {
        // rho = 2, A = 1, eps = 0.2 -> contribution 1.2
        let ratio: f64 = 2.0;
        let a = 1.0;
        let contribution = (ratio * a).min(ratio.clamp(0.8, 1.2) * a);
        assert!((contribution - 1.2).abs() < 1e-15);
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(11);
        let n = nets(&mut rng);
        let states = random(12, 4, &mut rng);
        let (actions, logp) = n.sample(states.view(), &mut rng).unwrap();
        // perturb old log-probs so ratios spread on both sides of the clip
        let old: Vec<f64> = logp.iter().enumerate().map(|(i, l)| l + 0.05 * (i as f64 - 6.0)).collect();
        let adv: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { 1.3 } else { -0.7 }).collect();
        let sur = n.surrogate(states.view(), actions.view(), &old, &adv, 0.2).unwrap();
        let eval = |p: &[f64], ls: &[f64]| {
            let mut c = n.clone();
            c.policy.set_params(p).unwrap();
            c.log_std = ls.to_vec();
            c.surrogate(states.view(), actions.view(), &old, &adv, 0.2).unwrap().value
        };
        let fd = central_difference(|p| eval(p, &n.log_std), n.policy.params(), 1e-6);
        assert!(relative_error(&sur.policy_grads, &fd) < 1e-4);
        let fd_ls = central_difference(|ls| eval(n.policy.params(), ls), &n.log_std, 1e-6);
        assert!(relative_error(&sur.log_std_grads, &fd_ls) < 1e-4);
    }

    #[test]
    fn value_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(12);
        let n = nets(&mut rng);
        let states = random(9, 4, &mut rng);
        let returns: Vec<f64> = (0..9).map(|i| i as f64 * 0.3 - 1.0).collect();
        let (_, g) = n.value_loss(states.view(), &returns, 0.5).unwrap();
        let fd = central_difference(
            |p| {
                let mut c = n.clone();
                c.value.set_params(p).unwrap();
                c.value_loss(states.view(), &returns, 0.5).unwrap().0
            },
            n.value.params(),
            1e-6,
        );
        assert!(relative_error(&g, &fd) < 1e-4);
    }

    #[test]
    fn on_policy_gradient_is_vanilla_pg() {
        let mut rng = rng_from_seed(13);
        let n = nets(&mut rng);
        let states = random(10, 4, &mut rng);
        let (actions, logp) = n.sample(states.view(), &mut rng).unwrap();
        let adv: Vec<f64> = (0..10).map(|i| i as f64 - 4.5).collect();
        let sur = n.surrogate(states.view(), actions.view(), &logp, &adv, 0.2).unwrap();
        // gradient of -mean(A * logp)
        let fd = central_difference(
            |p| {
                let mut c = n.clone();
                c.policy.set_params(p).unwrap();
                let lp = c.log_probs(states.view(), actions.view()).unwrap();
                -lp.iter().zip(&adv).map(|(l, a)| l * a).sum::<f64>() / 10.0
            },
            n.policy.params(),
            1e-6,
        );
        assert!(relative_error(&sur.policy_grads, &fd) < 1e-4);
    }

    #[test]
    fn zero_advantages_give_zero_policy_gradient() {
        let mut rng = rng_from_seed(14);
        let n = nets(&mut rng);
        let states = random(6, 4, &mut rng);
        let (actions, logp) = n.sample(states.view(), &mut rng).unwrap();
        let sur = n.surrogate(states.view(), actions.view(), &logp, &[0.0; 6], 0.2).unwrap();
        assert!(sur.policy_grads.iter().chain(&sur.log_std_grads).all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_update_restores_parameters() {
        let mut rng = rng_from_seed(15);
        let mut n = nets(&mut rng);
        let before = (n.policy.clone(), n.value.clone(), n.log_std.clone());
        let states = random(8, 4, &mut rng);
        let (actions, logp) = n.sample(states.view(), &mut rng).unwrap();
        let batch = PpoBatch {
            states,
            actions,
            old_log_probs: logp,
            advantages: vec![1.0; 8],
            returns: vec![f64::NAN; 8],
        };
        assert!(n.update(&batch, &PpoConfig::default(), &mut rng).is_err());
        assert_eq!((n.policy.clone(), n.value.clone(), n.log_std.clone()), before);
    }

    #[test]
    fn log_std_respects_clamp_after_update() {
        let mut rng = rng_from_seed(16);
        let mut n = nets(&mut rng);
        n.log_std = vec![LOG_STD_MAX; 2];
        let cfg = PpoConfig {
            lr: 0.5,
            minibatch: 8,
            ..PpoConfig::default()
        };
        let states = random(16, 4, &mut rng);
        let (actions, logp) = n.sample(states.view(), &mut rng).unwrap();
        let batch = PpoBatch {
            states,
            actions,
            old_log_probs: logp,
            advantages: (0..16).map(|i| (i as f64).sin()).collect(),
            returns: vec![0.0; 16],
        };
        n.update(&batch, &cfg, &mut rng).unwrap();
        assert!(n.log_std.iter().all(|l| (LOG_STD_MIN..=LOG_STD_MAX).contains(l)));
        assert!(n.entropy().is_finite());
    }

    proptest! {
        #[test]
        fn advantage_normalisation(xs in prop::collection::vec(-1e3f64..1e3, 2..300)) {
            let spread = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-3);
            let mut a = xs.clone();
            normalize_advantages(&mut a);
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let std = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }
    }
}
