use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intrinsic::{blend_weights_with, combined_reward, pure_intrinsic_reward, BlendConfig, Ensemble, ForwardModel};
use crate::mi::{CmiBatch, CmiDims, EstimatorConfig, EstimatorHandle, EstimatorKind, NegativeSampler};
use crate::numerics::{derive_seed, rng_from_seed, Activation, Rng, RunningNorm};

/// Which intrinsic signal shapes the learning reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    None,
    Icm,
    Disagreement,
    EmpowermentWithIcm,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::None, Mode::Icm, Mode::Disagreement, Mode::EmpowermentWithIcm];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Icm => "icm",
            Mode::Disagreement => "disagreement",
            Mode::EmpowermentWithIcm => "empowerment_with_icm",
        }
    }

    fn uses_icm(self) -> bool {
        matches!(self, Mode::Icm | Mode::EmpowermentWithIcm)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicConfig {
    pub forward_hidden: usize,
    pub forward_lr: f64,
    pub ensemble_size: usize,
    /// Gradient epochs per rollout for every intrinsic model.
    pub epochs: usize,
    pub minibatch: usize,
    /// Train the models on a rollout before computing its rewards.
    pub train_before_reward: bool,
    pub blend: BlendConfig,
    pub empowerment_bound: EstimatorKind,
    pub empowerment: EstimatorConfig,
}

impl Default for IntrinsicConfig {
    fn default() -> Self {
        Self {
            forward_hidden: 256,
            forward_lr: 1e-3,
            ensemble_size: 5,
            epochs: 1,
            minibatch: 256,
            train_before_reward: true,
            blend: BlendConfig::default(),
            empowerment_bound: EstimatorKind::Jsd,
            empowerment: EstimatorConfig {
                hidden: vec![512, 512, 216, 128, 64, 32],
                activation: Activation::Relu,
                lr: 1e-4,
                batch_size: 256,
                holdout_fraction: 0.0,
                ..EstimatorConfig::default()
            },
        }
    }
}

impl IntrinsicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.empowerment_bound == EstimatorKind::Kld {
            return Err(Error::Config("the empowerment reward supports vlb or jsd bounds".into()));
        }
        if self.ensemble_size < 2 {
            return Err(Error::Config("ensemble_size must be at least 2".into()));
        }
        if self.minibatch == 0 || self.forward_hidden == 0 {
            return Err(Error::Config("intrinsic minibatch and forward_hidden must be positive".into()));
        }
        if !(self.forward_lr > 0.0) {
            return Err(Error::Config("forward_lr must be positive".into()));
        }
        Ok(())
    }
}

/// Transitions in model space: normalised state, action, normalised next
/// extrinsic state.
#[derive(Debug, Clone, Copy)]
pub struct TransitionView<'a> {
    pub states: ArrayView2<'a, f64>,
    pub actions: ArrayView2<'a, f64>,
    pub next_extrinsic: ArrayView2<'a, f64>,
}

/// Raw (unnormalised) intrinsic signals; empty when inactive in the mode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawIntrinsic {
    pub icm: Vec<f64>,
    pub disagreement: Vec<f64>,
    pub empowerment: Vec<f64>,
}

/// Blended rewards for a group of transitions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Blended {
    pub w_icm: f64,
    pub w_emp: f64,
    pub norm_icm: Vec<f64>,
    pub norm_emp: Vec<f64>,
    pub combined: Vec<f64>,
}

/// Models and reward normalisers behind one training mode.
#[derive(Debug, Clone)]
pub struct IntrinsicStack {
    pub mode: Mode,
    pub config: IntrinsicConfig,
    pub forward: Option<ForwardModel>,
    pub ensemble: Option<Ensemble>,
    pub empowerment: Option<EstimatorHandle>,
    pub icm_norm: RunningNorm,
    pub disagreement_norm: RunningNorm,
    pub emp_norm: RunningNorm,
    seed: u64,
    rounds: u64,
}

impl IntrinsicStack {
    pub fn new(mode: Mode, config: IntrinsicConfig, state_dim: usize, action_dim: usize, extrinsic_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(derive_seed(seed, 0x1C));
        let forward = if mode.uses_icm() {
            Some(ForwardModel::new(state_dim, action_dim, extrinsic_dim, config.forward_hidden, config.forward_lr, &mut rng)?)
        } else {
            None
        };
        let ensemble = if mode == Mode::Disagreement {
            Some(Ensemble::new(
                config.ensemble_size,
                state_dim,
                action_dim,
                extrinsic_dim,
                config.forward_hidden,
                config.forward_lr,
                derive_seed(seed, 0xD15),
            )?)
        } else {
            None
        };
        let empowerment = if mode == Mode::EmpowermentWithIcm {
            let dims = CmiDims::new(action_dim, extrinsic_dim, state_dim);
            Some(EstimatorHandle::new(config.empowerment_bound, dims, config.empowerment.clone(), &mut rng)?)
        } else {
            None
        };
        Ok(Self {
            mode,
            config,
            forward,
            ensemble,
            empowerment,
            icm_norm: RunningNorm::new(),
            disagreement_norm: RunningNorm::new(),
            emp_norm: RunningNorm::new(),
            seed,
            rounds: 0,
        })
    }

    /// `(x, y, z) = (a, s^ex' - s^ex, s)`. The current extrinsic state is a
    /// function of `z`, so this leaves `I(x; y | z)` unchanged.
    fn cmi_batch(t: &TransitionView<'_>) -> CmiBatch {
        let ed = t.next_extrinsic.ncols();
        let sd = t.states.ncols();
        CmiBatch {
            x: t.actions.to_owned(),
            y: &t.next_extrinsic - &t.states.slice(ndarray::s![.., sd - ed..]),
            z: t.states.to_owned(),
        }
    }

    /// Raw signals under the current parameters. Pure.
    pub fn raw(&self, t: &TransitionView<'_>) -> Result<RawIntrinsic> {
        let mut out = RawIntrinsic::default();
        if let Some(f) = &self.forward {
            out.icm = f.losses(t.states, t.actions, t.next_extrinsic)?;
        }
        if let Some(e) = &self.ensemble {
            out.disagreement = e.disagreement(t.states, t.actions)?;
        }
        if let Some(h) = &self.empowerment {
            out.empowerment = h.pointwise(&Self::cmi_batch(t))?;
        }
        Ok(out)
    }

    /// Fits every active model on a batch for `config.epochs` epochs.
    /// `negatives` draws fresh actions for the empowerment bound.
    pub fn train(&mut self, t: &TransitionView<'_>, negatives: &dyn NegativeSampler) -> Result<()> {
        let mut rng = rng_from_seed(derive_seed(self.seed, 0x7A1 + self.rounds));
        self.rounds += 1;
        for _ in 0..self.config.epochs {
            if let Some(f) = self.forward.as_mut() {
                f.train_epoch(t.states, t.actions, t.next_extrinsic, self.config.minibatch, &mut rng)?;
            }
            if let Some(e) = self.ensemble.as_mut() {
                e.train_epoch(t.states, t.actions, t.next_extrinsic, self.config.minibatch)?;
            }
            if let Some(h) = self.empowerment.as_mut() {
                h.fit_epoch(&Self::cmi_batch(t), negatives, &mut rng)?;
            }
        }
        Ok(())
    }

    /// Folds raw signals into the reward statistics.
    pub fn absorb(&mut self, raw: &RawIntrinsic) {
        raw.icm.iter().for_each(|&x| self.icm_norm.update(x));
        raw.disagreement.iter().for_each(|&x| self.disagreement_norm.update(x));
        raw.empowerment.iter().for_each(|&x| self.emp_norm.update(x));
    }

    /// Blends one group of transitions (one step across the parallel
    /// environments) against the current reward statistics. Pure.
    pub fn blend(&self, raw: &RawIntrinsic, extrinsic: &[f64]) -> Blended {
        let n = extrinsic.len();
        let observe = |norm: &RunningNorm, xs: &[f64]| -> Vec<f64> { xs.iter().map(|&x| norm.normalize(x)).collect() };
        match self.mode {
            Mode::None => Blended {
                w_icm: 0.0,
                w_emp: 0.0,
                norm_icm: vec![0.0; n],
                norm_emp: vec![0.0; n],
                combined: extrinsic.to_vec(),
            },
            Mode::Icm => {
                let norm_icm = observe(&self.icm_norm, &raw.icm);
                let combined = norm_icm.iter().zip(extrinsic).map(|(r, e)| pure_intrinsic_reward(*r, *e)).collect();
                Blended {
                    w_icm: 1.0,
                    w_emp: 0.0,
                    norm_icm,
                    norm_emp: vec![0.0; n],
                    combined,
                }
            }
            Mode::Disagreement => {
                let norm = observe(&self.disagreement_norm, &raw.disagreement);
                let combined = norm.iter().zip(extrinsic).map(|(r, e)| pure_intrinsic_reward(*r, *e)).collect();
                Blended {
                    w_icm: 0.0,
                    w_emp: 0.0,
                    norm_icm: norm,
                    norm_emp: vec![0.0; n],
                    combined,
                }
            }
            Mode::EmpowermentWithIcm => {
                let norm_icm = observe(&self.icm_norm, &raw.icm);
                let norm_emp = observe(&self.emp_norm, &raw.empowerment);
                let switch: &[f64] = if self.config.blend.use_normalized_icm { &norm_icm } else { &raw.icm };
                let mean = switch.iter().sum::<f64>() / n.max(1) as f64;
                let (w_icm, w_emp) = blend_weights_with(mean, self.config.blend.threshold, self.config.blend.slope);
                let combined = (0..n)
                    .map(|i| combined_reward(w_icm, w_emp, norm_icm[i], norm_emp[i], extrinsic[i]))
                    .collect();
                Blended {
                    w_icm,
                    w_emp,
                    norm_icm,
                    norm_emp,
                    combined,
                }
            }
        }
    }
}

/// Actions from a closure of normalised states, for use as empowerment
/// negatives: `x~ ~ policy(. | z)`.
pub struct PolicyNegatives<F: Fn(ArrayView2<'_, f64>, &mut Rng) -> Array2<f64>>(pub F);

impl<F: Fn(ArrayView2<'_, f64>, &mut Rng) -> Array2<f64>> NegativeSampler for PolicyNegatives<F> {
    fn negatives(&self, batch: &CmiBatch, rng: &mut Rng) -> Array2<f64> {
        (self.0)(batch.z.view(), rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_strings() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("curiosity".parse::<Mode>().is_err());
    }

    #[test]
    fn none_mode_passes_extrinsic_through() {
        let s = IntrinsicStack::new(Mode::None, IntrinsicConfig::default(), 5, 3, 2, 0).unwrap();
        let b = s.blend(&RawIntrinsic::default(), &[0.0, 2.5, -1.0]);
        assert_eq!(b.combined, vec![0.0, 2.5, -1.0]);
    }

    #[test]
    fn kld_is_not_a_reward_bound() {
        let cfg = IntrinsicConfig {
            empowerment_bound: EstimatorKind::Kld,
            ..IntrinsicConfig::default()
        };
        assert!(IntrinsicStack::new(Mode::EmpowermentWithIcm, cfg, 5, 3, 2, 0).is_err());
    }
}
