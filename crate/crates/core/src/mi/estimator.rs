use std::borrow::Cow;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis, CowArray, Ix2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{jsd_loss, joint_scores, kld_loss, vlb_loss, KLD_EXP_CLAMP};
use super::{CmiBatch, CmiDims, CmiSample, EstimatorKind, NegativeSampler};
use crate::error::{check_dim, Error, Result};
use crate::numerics::{checkpoint, softplus, Activation, Adam, LayerSpec, Network, Rng, RunningNorm};

const OUTPUT_INIT_SCALE: f64 = 0.1;

/// Architecture and optimisation settings of an estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Widths of the dense hidden layers.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Gated-linear layers placed before the dense stack.
    pub glu_layers: usize,
    pub glu_width: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    /// Standardise `x`, `y` and `z` with statistics of the first training set.
    pub standardize: bool,
    /// Learning rate at the last epoch of a `train_estimator` call, as a
    /// fraction of `lr`; decay is linear. 1 disables decay.
    pub final_lr_fraction: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256],
            activation: Activation::Relu,
            glu_layers: 0,
            glu_width: 256,
            lr: 1e-3,
            batch_size: 256,
            holdout_fraction: 0.1,
            standardize: true,
            final_lr_fraction: 1.0,
        }
    }
}

impl EstimatorConfig {
    fn layers(&self, input: usize, output: usize) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut width = input;
        for _ in 0..self.glu_layers {
            layers.push(LayerSpec::Glu {
                input: width,
                output: self.glu_width,
            });
            width = self.glu_width;
        }
        layers.extend(Network::mlp(width, &self.hidden, output, self.activation, Activation::Linear));
        layers
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("estimator batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("estimator lr must be positive".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Config("final_lr_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-column `(v - mean) / std` of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnScale {
    /// Columns with (near) zero spread keep unit scale.
    pub fn fit(a: &Array2<f64>) -> Self {
        let mean = a.mean_axis(Axis(0)).map_or_else(|| vec![0.0; a.ncols()], |m| m.to_vec());
        let std = a
            .std_axis(Axis(0), 0.0)
            .iter()
            .map(|&s| if s > 1e-8 { s } else { 1.0 })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, a: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = a.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Affine input maps of the three blocks. Conditional MI is invariant
/// under them, and the VLB Jacobian terms cancel between the two heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub x: ColumnScale,
    pub y: ColumnScale,
    pub z: ColumnScale,
}

impl InputScaling {
    pub fn fit(data: &CmiBatch) -> Self {
        Self {
            x: ColumnScale::fit(&data.x),
            y: ColumnScale::fit(&data.y),
            z: ColumnScale::fit(&data.z),
        }
    }
}

/// Bound value and MI estimate on one evaluation set.
///
/// `bound` is the plug-in value of the trained bound. `estimate` is the
/// conditional MI estimate in nats: the bound itself for VLB and KLD, and
/// the joint-sample mean of the critic for JSD (whose optimal critic is
/// the pointwise log density ratio).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub bound: f64,
    pub estimate: f64,
}

/// A conditional-MI estimator: bound type plus its network(s).
///
/// For VLB, `critic` is the conditional head `q(x|y,z)` with input `[y|z]`
/// and `prior` models `q(x|z)`. For KLD/JSD, `critic` is `T(x,y,z)` with
/// input `[x|y|z]` and there is no prior head.
#[derive(Debug, Clone)]
pub struct EstimatorHandle {
    pub kind: EstimatorKind,
    pub dims: CmiDims,
    pub critic: Network,
    pub prior: Option<Network>,
    pub config: EstimatorConfig,
    /// Running statistics of pointwise values when used as a reward.
    pub normalizer: RunningNorm,
    pub scaling: Option<InputScaling>,
    optim: Vec<Adam>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    kind: EstimatorKind,
    dims: CmiDims,
    config: EstimatorConfig,
    normalizer: RunningNorm,
    scaling: Option<InputScaling>,
}

impl EstimatorHandle {
    /// All-zero parameters. A zero critic scores every triple 0.
    pub fn zeroed(kind: EstimatorKind, dims: CmiDims, config: EstimatorConfig) -> Result<Self> {
        config.validate()?;
        if dims.x == 0 || dims.y == 0 || dims.z == 0 {
            return Err(Error::Config("x, y and z must all have positive dimension".into()));
        }
        let (critic, prior) = match kind {
            EstimatorKind::Vlb => (
                Network::new(config.layers(dims.y + dims.z, 2 * dims.x))?,
                Some(Network::new(config.layers(dims.z, 2 * dims.x))?),
            ),
            EstimatorKind::Kld | EstimatorKind::Jsd => (Network::new(config.layers(dims.total(), 1))?, None),
        };
        Ok(Self {
            kind,
            dims,
            critic,
            prior,
            config,
            normalizer: RunningNorm::new(),
            scaling: None,
            optim: Vec::new(),
        })
    }

    pub fn new(kind: EstimatorKind, dims: CmiDims, config: EstimatorConfig, rng: &mut Rng) -> Result<Self> {
        let mut h = Self::zeroed(kind, dims, config)?;
        // Small output layers start every head near a unit Gaussian and
        // every critic near zero.
        h.critic.reinitialize(rng);
        h.critic.scale_output_layer(OUTPUT_INIT_SCALE);
        if let Some(p) = h.prior.as_mut() {
            p.reinitialize(rng);
            p.scale_output_layer(OUTPUT_INIT_SCALE);
        }
        Ok(h)
    }

    fn check(&self, batch: &CmiBatch) -> Result<()> {
        let d = batch.dims();
        check_dim("estimator x", self.dims.x, d.x)?;
        check_dim("estimator y", self.dims.y, d.y)?;
        check_dim("estimator z", self.dims.z, d.z)
    }

    fn scaled<'a>(&self, batch: &'a CmiBatch) -> Cow<'a, CmiBatch> {
        match &self.scaling {
            None => Cow::Borrowed(batch),
            Some(s) => Cow::Owned(CmiBatch {
                x: s.x.apply(batch.x.view()),
                y: s.y.apply(batch.y.view()),
                z: s.z.apply(batch.z.view()),
            }),
        }
    }

    fn scaled_x<'a>(&self, x: ArrayView2<'a, f64>) -> CowArray<'a, f64, Ix2> {
        match &self.scaling {
            None => CowArray::from(x),
            Some(s) => CowArray::from(s.x.apply(x)),
        }
    }

    fn set_lr(&mut self, lr: f64) {
        for o in &mut self.optim {
            o.lr = lr;
        }
    }

    /// Pointwise values: `log q(x|y,z) - log q(x|z)` for VLB, `T(x,y,z)`
    /// otherwise. Pure in `(params, batch)`.
    pub fn pointwise(&self, batch: &CmiBatch) -> Result<Vec<f64>> {
        self.check(batch)?;
        let batch = &*self.scaled(batch);
        match self.kind {
            EstimatorKind::Vlb => {
                let prior = self.prior.as_ref().expect("vlb has a prior head");
                Ok(vlb_loss(&self.critic, prior, batch)?.pointwise)
            }
            EstimatorKind::Kld | EstimatorKind::Jsd => joint_scores(&self.critic, batch),
        }
    }

    pub fn estimate_pointwise(&self, sample: &CmiSample) -> Result<f64> {
        let batch = CmiBatch::from_samples(std::slice::from_ref(sample))?;
        Ok(self.pointwise(&batch)?[0])
    }

    /// Loss value and per-network gradients (critic first, then prior).
    pub fn loss(&self, batch: &CmiBatch, negatives: Option<ArrayView2<'_, f64>>) -> Result<(f64, Vec<Vec<f64>>)> {
        self.check(batch)?;
        let batch = &*self.scaled(batch);
        let negatives = negatives.map(|n| self.scaled_x(n));
        let negatives = negatives.as_ref().map(|n| n.view());
        match self.kind {
            EstimatorKind::Vlb => {
                let prior = self.prior.as_ref().expect("vlb has a prior head");
                let out = vlb_loss(&self.critic, prior, batch)?;
                Ok((out.value, vec![out.conditional_grads, out.prior_grads]))
            }
            EstimatorKind::Kld | EstimatorKind::Jsd => {
                let neg = negatives.ok_or_else(|| Error::Config(format!("{} needs negative samples", self.kind)))?;
                let out = if self.kind == EstimatorKind::Kld {
                    kld_loss(&self.critic, batch, neg)?
                } else {
                    jsd_loss(&self.critic, batch, neg)?
                };
                Ok((out.value, vec![out.grads]))
            }
        }
    }

    fn needs_negatives(&self) -> bool {
        self.kind != EstimatorKind::Vlb
    }

    /// One Adam step on a minibatch; returns the loss before the step.
    pub fn step(&mut self, batch: &CmiBatch, sampler: &dyn NegativeSampler, rng: &mut Rng) -> Result<f64> {
        let negatives = self.needs_negatives().then(|| sampler.negatives(batch, rng));
        let (value, grads) = self.loss(batch, negatives.as_ref().map(|n| n.view()))?;
        if self.optim.is_empty() {
            self.optim.push(Adam::new(self.critic.param_count(), self.config.lr));
            if let Some(p) = &self.prior {
                self.optim.push(Adam::new(p.param_count(), self.config.lr));
            }
        }
        self.optim[0].step(self.critic.params_mut(), &grads[0]);
        if let Some(p) = self.prior.as_mut() {
            self.optim[1].step(p.params_mut(), &grads[1]);
        }
        Ok(value)
    }

    /// One shuffled pass over `data`; returns the mean minibatch loss.
    /// Input scaling, when enabled, is fitted on the first data seen.
    pub fn fit_epoch(&mut self, data: &CmiBatch, sampler: &dyn NegativeSampler, rng: &mut Rng) -> Result<f64> {
        self.check(data)?;
        if self.config.standardize && self.scaling.is_none() {
            self.scaling = Some(InputScaling::fit(data));
        }
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(rng);
        self.fit_indices(data, &idx, sampler, rng)
    }

    fn fit_indices(&mut self, data: &CmiBatch, idx: &[usize], sampler: &dyn NegativeSampler, rng: &mut Rng) -> Result<f64> {
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in idx.chunks(self.config.batch_size) {
            total += self.step(&data.select(chunk), sampler, rng)?;
            batches += 1;
        }
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }

    /// Bound value and MI estimate on `batch`. `negatives` is ignored for VLB.
    pub fn evaluate(&self, batch: &CmiBatch, negatives: Option<ArrayView2<'_, f64>>) -> Result<Evaluation> {
        self.check(batch)?;
        let n = batch.len() as f64;
        let raw = batch;
        match self.kind {
            EstimatorKind::Vlb => {
                let mean = self.pointwise(raw)?.iter().sum::<f64>() / n;
                Ok(Evaluation {
                    bound: mean,
                    estimate: mean,
                })
            }
            EstimatorKind::Kld | EstimatorKind::Jsd => {
                let neg = negatives.ok_or_else(|| Error::Config(format!("{} needs negative samples", self.kind)))?;
                let neg = self.scaled_x(neg);
                let input = super::losses::critic_input(&self.scaled(raw), neg.view())?;
                let scores = self.critic.forward(input.view())?;
                let (joint, negs) = scores.column(0).split_at(ndarray::Axis(0), batch.len());
                let mean_joint = joint.sum() / n;
                let bound = if self.kind == EstimatorKind::Kld {
                    mean_joint - negs.iter().map(|&t| (t.min(KLD_EXP_CLAMP) - 1.0).exp()).sum::<f64>() / n
                } else {
                    -joint.iter().map(|&t| softplus(-t)).sum::<f64>() / n - negs.iter().map(|&t| softplus(t)).sum::<f64>() / n
                        + 4f64.ln()
                };
                let estimate = if self.kind == EstimatorKind::Kld { bound } else { mean_joint };
                Ok(Evaluation { bound, estimate })
            }
        }
    }

    /// Writes `critic.bin`, optional `prior.bin` and `estimator.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        checkpoint::save(dir.join("critic.bin"), &self.critic, &[])?;
        if let Some(p) = &self.prior {
            checkpoint::save(dir.join("prior.bin"), p, &[])?;
        }
        let sidecar = Sidecar {
            kind: self.kind,
            dims: self.dims,
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            scaling: self.scaling.clone(),
        };
        fs::write(dir.join("estimator.json"), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(dir.join("estimator.json"))?)?;
        let mut h = Self::zeroed(sidecar.kind, sidecar.dims, sidecar.config)?;
        let (critic, _) = checkpoint::load(dir.join("critic.bin"))?;
        if critic.layers() != h.critic.layers() {
            return Err(Error::Checkpoint("critic layers do not match sidecar".into()));
        }
        h.critic = critic;
        if h.prior.is_some() {
            let (prior, _) = checkpoint::load(dir.join("prior.bin"))?;
            if Some(prior.layers()) != h.prior.as_ref().map(|p| p.layers()) {
                return Err(Error::Checkpoint("prior layers do not match sidecar".into()));
            }
            h.prior = Some(prior);
        }
        h.normalizer = sidecar.normalizer;
        h.scaling = sidecar.scaling;
        Ok(h)
    }
}

/// Per-epoch curves from [`train_estimator`].
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Held-out evaluation after each epoch.
    pub heldout: Vec<Evaluation>,
    pub train_loss: Vec<f64>,
    /// Evaluation on the training split after the last epoch.
    pub in_sample: Option<Evaluation>,
    /// JSD bound above `log 2 + 0.05` on held-out data: the true value
    /// cannot exceed `log 2`, so this indicates overfitting.
    pub jsd_overfit: bool,
}

impl TrainReport {
    pub fn final_heldout(&self) -> Option<Evaluation> {
        self.heldout.last().copied()
    }
}

/// Minibatch Adam on the selected bound, holding out
/// `config.holdout_fraction` of `data` for the reported curve.
pub fn train_estimator(
    handle: &mut EstimatorHandle,
    data: &CmiBatch,
    sampler: &dyn NegativeSampler,
    epochs: usize,
    rng: &mut Rng,
) -> Result<TrainReport> {
    handle.check(data)?;
    let mut report = TrainReport::default();
    if epochs == 0 {
        return Ok(report);
    }
    if handle.config.standardize && handle.scaling.is_none() {
        handle.scaling = Some(InputScaling::fit(data));
    }
    let n = data.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let frac = handle.config.holdout_fraction;
    let n_hold = if frac > 0.0 && n >= 2 {
        ((n as f64 * frac).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let (hold_idx, train_idx) = idx.split_at(n_hold);
    let holdout = data.select(hold_idx);
    let hold_neg = (handle.needs_negatives() && n_hold > 0).then(|| sampler.negatives(&holdout, rng));
    let mut train_idx = train_idx.to_vec();

    let diverged = |epoch: usize, e: Error| match e {
        Error::NonFinite { layer } => Error::Diverged {
            epoch,
            detail: format!("non-finite activation in layer {layer}"),
        },
        other => other,
    };

    let (lr, floor) = (handle.config.lr, handle.config.final_lr_fraction);
    for epoch in 0..epochs {
        let progress = if epochs > 1 { epoch as f64 / (epochs - 1) as f64 } else { 0.0 };
        let epoch_lr = lr * (1.0 - (1.0 - floor) * progress);
        handle.set_lr(epoch_lr);
        train_idx.shuffle(rng);
        let loss = handle
            .fit_indices(data, &train_idx, sampler, rng)
            .map_err(|e| diverged(epoch, e))?;
        report.train_loss.push(loss);
        if n_hold > 0 {
            let eval = handle
                .evaluate(&holdout, hold_neg.as_ref().map(|a| a.view()))
                .map_err(|e| diverged(epoch, e))?;
            if !eval.bound.is_finite() || !eval.estimate.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("held-out bound {} estimate {} (train loss {loss})", eval.bound, eval.estimate),
                });
            }
            report.heldout.push(eval);
        }
    }

    let train = data.select(&train_idx);
    let train_neg = handle.needs_negatives().then(|| sampler.negatives(&train, rng));
    report.in_sample = Some(
        handle
            .evaluate(&train, train_neg.as_ref().map(|a| a.view()))
            .map_err(|e| diverged(epochs, e))?,
    );
    if handle.kind == EstimatorKind::Jsd {
        if let Some(last) = report.final_heldout() {
            if last.bound > std::f64::consts::LN_2 + 0.05 {
                log::warn!("held-out JSD bound {:.4} exceeds log 2; estimator is overfitting", last.bound);
                report.jsd_overfit = true;
            }
        }
    }
    Ok(report)
}
