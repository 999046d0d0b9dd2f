//! Intrinsic rewards: forward-model curiosity (ICM), ensemble disagreement,
//! one-step empowerment, and the adaptive ICM / empowerment blend.
//!
//! All three signals look only at the extrinsic part of the next state.
//! The forward models condition on the full state and the action.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::numerics::{derive_seed, hstack, rng_from_seed, Activation, Adam, Network, Rng};

/// Weight of the intrinsic term in the learning reward.
pub const INTRINSIC_COEF: f64 = 0.01;

/// Initial scale of the output layer, so an untrained model predicts an
/// unchanged extrinsic state.
const FORWARD_OUTPUT_INIT_SCALE: f64 = 0.01;

/// `f(s_t, a_t) -> s^ex_{t+1}`, parameterised as `s^ex_t + g(s_t, a_t)`.
/// The extrinsic part is the trailing `extrinsic_dim` columns of the state.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    pub net: Network,
    optim: Adam,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl ForwardModel {
    pub fn new(state_dim: usize, action_dim: usize, extrinsic_dim: usize, hidden: usize, lr: f64, rng: &mut Rng) -> Result<Self> {
        let layers = Network::mlp(state_dim + action_dim, &[hidden], extrinsic_dim, Activation::Relu, Activation::Linear);
        if extrinsic_dim > state_dim {
            return Err(crate::error::Error::Config("extrinsic part larger than state".into()));
        }
        let mut net = Network::initialized(layers, rng)?;
        net.scale_output_layer(FORWARD_OUTPUT_INIT_SCALE);
        let optim = Adam::new(net.param_count(), lr);
        Ok(Self {
            net,
            optim,
            state_dim,
            action_dim,
        })
    }

    pub fn extrinsic_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn input(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim("forward model state", self.state_dim, states.ncols())?;
        check_dim("forward model action", self.action_dim, actions.ncols())?;
        check_dim("forward model rows", states.nrows(), actions.nrows())?;
        Ok(hstack(&[states, actions]))
    }

    fn current_extrinsic<'a>(&self, states: ArrayView2<'a, f64>) -> ArrayView2<'a, f64> {
        let ed = self.extrinsic_dim();
        states.slice_move(ndarray::s![.., self.state_dim - ed..])
    }

    pub fn predict(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.net.forward(self.input(states, actions)?.view())? + self.current_extrinsic(states))
    }

    /// Per-row `0.5 * ||f(s, a) - s^ex'||^2`.
    pub fn losses(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>, next_ex: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let pred = self.predict(states, actions)?;
        check_dim("forward model target", pred.ncols(), next_ex.ncols())?;
        Ok(half_squared_errors(&pred, next_ex))
    }

    /// Mean loss and its parameter gradient on a batch.
    pub fn loss_and_grad(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        next_ex: ArrayView2<'_, f64>,
    ) -> Result<(f64, Vec<f64>)> {
        let x = self.input(states, actions)?;
        let (delta, cache) = self.net.forward_cached(x.view())?;
        check_dim("forward model target", delta.ncols(), next_ex.ncols())?;
        let pred = delta + self.current_extrinsic(states);
        let n = pred.nrows().max(1) as f64;
        let diff = &pred - &next_ex;
        let value = 0.5 * diff.iter().map(|d| d * d).sum::<f64>() / n;
        let upstream = diff / n;
        let mut grads = vec![0.0; self.net.param_count()];
        self.net.backward(&cache, upstream.view(), &mut grads, false);
        Ok((value, grads))
    }

    /// One shuffled pass of minibatch Adam; returns the mean minibatch loss.
    pub fn train_epoch(
        &mut self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        next_ex: ArrayView2<'_, f64>,
        minibatch: usize,
        rng: &mut Rng,
    ) -> Result<f64> {
        let mut idx: Vec<usize> = (0..states.nrows()).collect();
        idx.shuffle(rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in idx.chunks(minibatch.max(1)) {
            let (value, grads) = self.loss_and_grad(
                states.select(Axis(0), chunk).view(),
                actions.select(Axis(0), chunk).view(),
                next_ex.select(Axis(0), chunk).view(),
            )?;
            self.optim.step(self.net.params_mut(), &grads);
            total += value;
            count += 1;
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }
}

fn half_squared_errors(pred: &Array2<f64>, target: ArrayView2<'_, f64>) -> Vec<f64> {
    pred.rows()
        .into_iter()
        .zip(target.rows())
        .map(|(p, t)| 0.5 * p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .collect()
}

/// Forward loss of a single transition; also the raw ICM reward.
pub fn icm_forward_loss(model: &ForwardModel, s_t: &[f64], a_t: &[f64], s_ex_next: &[f64]) -> Result<f64> {
    let s = ArrayView2::from_shape((1, s_t.len()), s_t).expect("row");
    let a = ArrayView2::from_shape((1, a_t.len()), a_t).expect("row");
    let y = ArrayView2::from_shape((1, s_ex_next.len()), s_ex_next).expect("row");
    Ok(model.losses(s, a, y)?[0])
}

/// Population variance across members, averaged over output columns, for
/// each row. `predictions[m]` holds member `m`'s outputs.
pub fn disagreement_from_predictions(predictions: &[Array2<f64>]) -> Vec<f64> {
    let m = predictions.len() as f64;
    let (rows, cols) = predictions[0].dim();
    (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| {
                    let mean = predictions.iter().map(|p| p[[r, c]]).sum::<f64>() / m;
                    predictions.iter().map(|p| (p[[r, c]] - mean).powi(2)).sum::<f64>() / m
                })
                .sum::<f64>()
                / cols as f64
        })
        .collect()
}

/// Forward models differing only in initialisation and minibatch order.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub members: Vec<ForwardModel>,
    seed: u64,
    epochs_trained: u64,
}

impl Ensemble {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        size: usize,
        state_dim: usize,
        action_dim: usize,
        extrinsic_dim: usize,
        hidden: usize,
        lr: f64,
        seed: u64,
    ) -> Result<Self> {
        let members = (0..size as u64)
            .map(|m| ForwardModel::new(state_dim, action_dim, extrinsic_dim, hidden, lr, &mut rng_from_seed(derive_seed(seed, m))))
            .collect::<Result<_>>()?;
        Ok(Self {
            members,
            seed,
            epochs_trained: 0,
        })
    }

    pub fn predictions(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        self.members.iter().map(|m| m.predict(states, actions)).collect()
    }

    pub fn disagreement(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(disagreement_from_predictions(&self.predictions(states, actions)?))
    }

    /// Trains on the sum of member losses; members are independent, so each
    /// takes its own pass. Returns the summed mean loss.
    pub fn train_epoch(
        &mut self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        next_ex: ArrayView2<'_, f64>,
        minibatch: usize,
    ) -> Result<f64> {
        let mut total = 0.0;
        for (m, member) in self.members.iter_mut().enumerate() {
            let mut rng = rng_from_seed(derive_seed(self.seed ^ 0x5EED, self.epochs_trained * 1000 + m as u64));
            total += member.train_epoch(states, actions, next_ex, minibatch, &mut rng)?;
        }
        self.epochs_trained += 1;
        Ok(total)
    }
}

/// Logistic switch between curiosity and empowerment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendConfig {
    pub threshold: f64,
    pub slope: f64,
    /// Feed the switch the normalised rather than the raw ICM reward.
    pub use_normalized_icm: bool,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            threshold: 0.12,
            slope: 200.0,
            use_normalized_icm: false,
        }
    }
}

/// `w_icm = 0.5 (1 - tanh(slope (r - threshold)))`, `w_emp = 1 - w_icm`.
pub fn blend_weights_with(mean_icm: f64, threshold: f64, slope: f64) -> (f64, f64) {
    let w_icm = 0.5 * (1.0 - (slope * (mean_icm - threshold)).tanh());
    (w_icm, 1.0 - w_icm)
}

pub fn blend_weights(mean_icm_raw: f64) -> (f64, f64) {
    let d = BlendConfig::default();
    blend_weights_with(mean_icm_raw, d.threshold, d.slope)
}

pub fn combined_reward(w_icm: f64, w_emp: f64, r_icm_norm: f64, r_emp_norm: f64, r_extrinsic: f64) -> f64 {
    INTRINSIC_COEF * (w_icm * r_icm_norm + w_emp * r_emp_norm) + r_extrinsic
}

/// Single-signal mixing used by the ICM and disagreement baselines.
pub fn pure_intrinsic_reward(r_norm: f64, r_extrinsic: f64) -> f64 {
    INTRINSIC_COEF * r_norm + r_extrinsic
}

/// One row of the per-step reward diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardDiagnostics {
    pub step: usize,
    pub w_icm: f64,
    pub w_emp: f64,
    pub raw_icm: f64,
    pub norm_icm: f64,
    pub raw_emp: f64,
    pub norm_emp: f64,
    pub extrinsic: f64,
    pub combined: f64,
}

pub const DIAGNOSTICS_HEADER: &str = "step,w_icm,w_emp,raw_icm,norm_icm,raw_emp,norm_emp,extrinsic,combined";

impl RewardDiagnostics {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.step, self.w_icm, self.w_emp, self.raw_icm, self.norm_icm, self.raw_emp, self.norm_emp, self.extrinsic, self.combined
        )
    }
}

pub fn write_diagnostics<W: Write>(mut out: W, rows: &[RewardDiagnostics]) -> Result<()> {
    writeln!(out, "{DIAGNOSTICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{central_difference, relative_error};
    use ndarray::array;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn model(rng: &mut crate::numerics::Rng) -> ForwardModel {
        ForwardModel::new(3, 2, 2, 16, 1e-3, rng).unwrap()
    }

    fn random(rows: usize, cols: usize, rng: &mut crate::numerics::Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
    }

    #[test]
    fn forward_loss_examples() {
        let mut m = model(&mut rng_from_seed(0));
        let n = m.net.param_count();
        m.net.set_params(&vec![0.0; n]).unwrap();
        let s = [0.1, 0.0, 0.0];
        let a = [0.5, -0.5];
        assert_eq!(icm_forward_loss(&m, &s, &a, &[0.0, 0.0]).unwrap(), 0.0);
        let moved = [0.1, 0.2, 0.3];
        assert_eq!(icm_forward_loss(&m, &moved, &a, &[0.2, 0.3]).unwrap(), 0.0);
        assert!((icm_forward_loss(&m, &s, &a, &[0.1, 0.0]).unwrap() - 0.005).abs() < 1e-15);
        assert!((icm_forward_loss(&m, &s, &a, &[0.3, 0.4]).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn forward_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(1);
        let m = model(&mut rng);
        let (s, a, y) = (random(7, 3, &mut rng), random(7, 2, &mut rng), random(7, 2, &mut rng));
        let (_, g) = m.loss_and_grad(s.view(), a.view(), y.view()).unwrap();
        let fd = central_difference(
            |p| {
                let mut c = m.clone();
                c.net.set_params(p).unwrap();
                c.loss_and_grad(s.view(), a.view(), y.view()).unwrap().0
            },
            m.net.params(),
            1e-5,
        );
        assert!(relative_error(&g, &fd) < 1e-4);
    }

    #[test]
    fn deterministic_map_is_learned() {
        let mut rng = rng_from_seed(2);
        let mut m = model(&mut rng);
        let s = random(512, 3, &mut rng);
        let a = random(512, 2, &mut rng);
        let y = hstack(&[s.column(0).insert_axis(Axis(1)), (&a.column(1) * 0.5).insert_axis(Axis(1)).view()]);
        let mut last = f64::INFINITY;
        let mut first = None;
        for _ in 0..1500 {
            last = m.train_epoch(s.view(), a.view(), y.view(), 64, &mut rng).unwrap();
            first.get_or_insert(last);
        }
        assert!(last < 1e-3, "final loss {last}");
        assert!(last < first.unwrap());
    }

    #[test]
    fn disagreement_examples() {
        let same = vec![array![[1.0, 2.0]]; 5];
        assert_eq!(disagreement_from_predictions(&same), vec![0.0]);
        let one_d: Vec<Array2<f64>> = [1.0, 1.0, 1.0, 1.0, 0.0].iter().map(|&v| array![[v]]).collect();
        assert!((disagreement_from_predictions(&one_d)[0] - 0.16).abs() < 1e-15);
        // first column as above (0.16), second column {0.5,0.5,0.5,0.5,0} -> 0.04
        let two_d: Vec<Array2<f64>> = [1.0, 1.0, 1.0, 1.0, 0.0].iter().map(|&v| array![[v, v * 0.5]]).collect();
        assert!((disagreement_from_predictions(&two_d)[0] - 0.10).abs() < 1e-15);
    }

    #[test]
    fn ensemble_members_differ() {
        let e = Ensemble::new(5, 3, 2, 2, 16, 1e-3, 7).unwrap();
        let mut rng = rng_from_seed(0);
        let d = e.disagreement(random(4, 3, &mut rng).view(), random(4, 2, &mut rng).view()).unwrap();
        assert!(d.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn blend_examples() {
        let (wi, we) = blend_weights(0.12);
        assert!((wi - 0.5).abs() < 1e-12 && (we - 0.5).abs() < 1e-12);
        let (wi, _) = blend_weights(0.0);
        assert!(wi > 1.0 - 1e-12);
        let (wi, we) = blend_weights(1.0);
        assert!(wi < 1e-12 && we > 1.0 - 1e-12);
    }

    #[test]
    fn combined_examples() {
        assert_eq!(combined_reward(0.5, 0.5, 2.0, -2.0, 0.0), 0.0);
        assert!((combined_reward(0.0, 1.0, 0.0, 3.0, 1.0) - 1.03).abs() < 1e-15);
        assert_eq!(combined_reward(0.3, 0.7, 0.0, 0.0, 2.0), 2.0);
        assert!((pure_intrinsic_reward(1.0, 0.0) - 0.01).abs() < 1e-15);
        assert_eq!(pure_intrinsic_reward(0.0, 0.25), 0.25);
        assert!((pure_intrinsic_reward(-1.0, 0.5) - 0.49).abs() < 1e-15);
    }

    #[test]
    fn diagnostics_csv() {
        let mut out = Vec::new();
        write_diagnostics(&mut out, &[RewardDiagnostics { step: 3, w_icm: 1.0, ..Default::default() }]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), DIAGNOSTICS_HEADER);
        assert_eq!(lines.next().unwrap().split(',').count(), 9);
    }

    proptest! {
        #[test]
        fn blend_weights_sum_to_one(r in -10.0f64..10.0) {
            let (wi, we) = blend_weights(r);
            prop_assert_eq!(wi + we, 1.0);
            prop_assert!((0.0..=1.0).contains(&wi) && (0.0..=1.0).contains(&we));
        }
    }
}
