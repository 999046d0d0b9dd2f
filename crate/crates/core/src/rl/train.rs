use std::collections::VecDeque;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use super::gae::gae;
use super::policy::{PolicyValueNets, PpoBatch, PpoConfig, UpdateStats};
use super::replay::{ReplayStore, Transition};
use super::stack::{IntrinsicConfig, IntrinsicStack, Mode, PolicyNegatives, RawIntrinsic, TransitionView};
use crate::env::{observation_matrix, split_state, EnvAction, EnvConfig, EpisodeStats, PlanarLift, VecEnv, ACTION_DIM};
use crate::error::{Error, Result};
use crate::intrinsic::{RewardDiagnostics, DIAGNOSTICS_HEADER};
use crate::numerics::{checkpoint, derive_seed, rng_from_seed, Rng, VecNorm};

pub const METRICS_HEADER: &str =
    "iteration,env_steps,mean_extrinsic_return,success_rate,w_icm,mean_norm_icm,mean_norm_emp,policy_loss,value_loss,wall_seconds";

/// Episodes in the trailing window behind the logged return and success rate.
pub const EPISODE_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub intrinsic: IntrinsicConfig,
    pub mode: Mode,
    pub seed: u64,
    pub total_steps: usize,
    /// Iterations between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub replay_capacity: usize,
    /// Log elapsed time; off keeps metrics byte-reproducible.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            intrinsic: IntrinsicConfig::default(),
            mode: Mode::EmpowermentWithIcm,
            seed: 0,
            total_steps: 300_000,
            checkpoint_every: 0,
            replay_capacity: 100_000,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.ppo.validate()?;
        self.intrinsic.validate()?;
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.replay_capacity == 0 {
            return Err(Error::Config("replay_capacity must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_iteration(&self) -> usize {
        self.ppo.horizon * self.ppo.n_envs
    }

    /// At least one iteration, rounding the step budget up.
    pub fn iterations(&self) -> usize {
        self.total_steps.div_ceil(self.steps_per_iteration()).max(1)
    }
}

/// Policy, value, observation statistics and intrinsic models.
pub struct Agent {
    pub nets: PolicyValueNets,
    pub obs_norm: VecNorm,
    pub stack: IntrinsicStack,
}

impl Agent {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let sd = cfg.env.state_dim();
        let mut rng = rng_from_seed(derive_seed(cfg.seed, 0xA6E7));
        Ok(Self {
            nets: PolicyValueNets::new(sd, ACTION_DIM, &cfg.ppo, &mut rng)?,
            obs_norm: VecNorm::new(sd),
            stack: IntrinsicStack::new(cfg.mode, cfg.intrinsic.clone(), sd, ACTION_DIM, cfg.env.extrinsic_dim(), derive_seed(cfg.seed, 0x1575))?,
        })
    }

    /// Normalised states with next extrinsic parts, under the current
    /// observation statistics.
    pub fn intrinsic_inputs(&self, states: &Array2<f64>, next_extrinsic: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let sd = states.ncols();
        let ed = next_extrinsic.ncols();
        (
            self.obs_norm.normalize_rows(states.view()),
            self.obs_norm.columns(sd - ed..sd).normalize_rows(next_extrinsic.view()),
        )
    }
}

/// One rollout. Rows are step-major: row `t * n_envs + e`.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub horizon: usize,
    pub n_envs: usize,
    /// Raw observations.
    pub states: Array2<f64>,
    /// Observations as the policy saw them.
    pub policy_states: Array2<f64>,
    /// Sampled unit-space actions, before clipping.
    pub actions: Array2<f64>,
    /// Actions clipped to `[-1, 1]` as executed.
    pub executed: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Raw extrinsic part of the true successor (before any reset).
    pub next_extrinsic: Array2<f64>,
    pub extrinsic: Vec<f64>,
    pub dones: Vec<bool>,
    pub bootstrap: Vec<f64>,
    pub finished: Vec<EpisodeStats>,
    pub raw: RawIntrinsic,
    pub combined: Vec<f64>,
    /// Blend weight per step.
    pub w_icm: Vec<f64>,
    pub norm_icm: Vec<f64>,
    pub norm_emp: Vec<f64>,
}

impl RolloutBatch {
    /// Per-step means across environments; `first_step` numbers the rows.
    pub fn diagnostics(&self, first_step: usize) -> Vec<RewardDiagnostics> {
        let n = self.n_envs;
        let avg = |v: &[f64], t: usize| if v.is_empty() { 0.0 } else { mean(&v[t * n..(t + 1) * n]) };
        (0..self.horizon)
            .map(|t| RewardDiagnostics {
                step: first_step + t,
                w_icm: self.w_icm.get(t).copied().unwrap_or(0.0),
                w_emp: if self.raw.empowerment.is_empty() { 0.0 } else { 1.0 - self.w_icm.get(t).copied().unwrap_or(0.0) },
                raw_icm: avg(if self.raw.icm.is_empty() { &self.raw.disagreement } else { &self.raw.icm }, t),
                norm_icm: avg(&self.norm_icm, t),
                raw_emp: avg(&self.raw.empowerment, t),
                norm_emp: avg(&self.norm_emp, t),
                extrinsic: avg(&self.extrinsic, t),
                combined: avg(&self.combined, t),
            })
            .collect()
    }
}

fn clip_unit(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.clamp(-1.0, 1.0))
}

fn sample_clipped(nets: &PolicyValueNets, z: ndarray::ArrayView2<'_, f64>, rng: &mut Rng) -> Array2<f64> {
    match nets.sample(z, rng) {
        Ok((a, _)) => clip_unit(&a),
        Err(_) => Array2::zeros((z.nrows(), nets.action_dim())),
    }
}

/// Samples `horizon` steps from every environment, folding each observation
/// into the running statistics before the policy sees it. Intrinsic and
/// combined rewards are left empty; see [`score_rollout`].
pub fn collect_rollout(agent: &mut Agent, envs: &mut VecEnv, horizon: usize, rng: &mut Rng) -> Result<RolloutBatch> {
    let n = envs.len();
    let sd = envs.env.config.state_dim();
    let ed = envs.env.config.extrinsic_dim();
    let rows = horizon * n;
    let mut b = RolloutBatch {
        horizon,
        n_envs: n,
        states: Array2::zeros((rows, sd)),
        policy_states: Array2::zeros((rows, sd)),
        actions: Array2::zeros((rows, ACTION_DIM)),
        executed: Array2::zeros((rows, ACTION_DIM)),
        log_probs: Vec::with_capacity(rows),
        values: Vec::with_capacity(rows),
        next_extrinsic: Array2::zeros((rows, ed)),
        extrinsic: Vec::with_capacity(rows),
        dones: Vec::with_capacity(rows),
        bootstrap: Vec::new(),
        finished: Vec::new(),
        raw: RawIntrinsic::default(),
        combined: Vec::new(),
        w_icm: Vec::new(),
        norm_icm: Vec::new(),
        norm_emp: Vec::new(),
    };
    for t in 0..horizon {
        let obs = envs.observations();
        agent.obs_norm.update_rows(obs.view());
        let z = agent.obs_norm.normalize_rows(obs.view());
        let (actions, logp) = agent.nets.sample(z.view(), rng)?;
        if logp.iter().any(|l| !l.is_finite()) {
            return Err(Error::Diverged {
                epoch: t,
                detail: "non-finite action log-probability".into(),
            });
        }
        let values = agent.nets.values(z.view())?;
        let executed = clip_unit(&actions);
        let env_actions: Vec<EnvAction> = executed.rows().into_iter().map(|r| EnvAction::from_unit(r.as_slice().unwrap_or(&r.to_vec()))).collect();
        let step = envs.step(&env_actions)?;
        let span = t * n..(t + 1) * n;
        b.states.slice_mut(s![span.clone(), ..]).assign(&obs);
        b.policy_states.slice_mut(s![span.clone(), ..]).assign(&z);
        b.actions.slice_mut(s![span.clone(), ..]).assign(&actions);
        b.executed.slice_mut(s![span.clone(), ..]).assign(&executed);
        for (e, next) in step.next_states.iter().enumerate() {
            let ex = split_state(next).extrinsic;
            b.next_extrinsic.row_mut(t * n + e).assign(&ndarray::aview1(&ex));
        }
        b.log_probs.extend(logp);
        b.values.extend(values);
        b.extrinsic.extend(&step.rewards);
        b.dones.extend(&step.dones);
        b.finished.extend(step.finished.into_iter().map(|(_, s)| s));
    }
    let last = observation_matrix(envs.states(), sd);
    b.bootstrap = agent.nets.values(agent.obs_norm.normalize_rows(last.view()).view())?;
    Ok(b)
}

/// Trains the intrinsic models on the batch (before or after scoring, per
/// config), then computes raw signals and blends them step by step so the
/// reward statistics advance one environment step at a time.
pub fn score_rollout(agent: &mut Agent, b: &mut RolloutBatch) -> Result<()> {
    let (states, next_ex) = agent.intrinsic_inputs(&b.states, &b.next_extrinsic);
    let view = TransitionView {
        states: states.view(),
        actions: b.executed.view(),
        next_extrinsic: next_ex.view(),
    };
    let before = agent.stack.config.train_before_reward;
    let nets = &agent.nets;
    let negatives = PolicyNegatives(|z: ndarray::ArrayView2<'_, f64>, rng: &mut Rng| sample_clipped(nets, z, rng));
    if before && agent.stack.mode != Mode::None {
        agent.stack.train(&view, &negatives)?;
    }
    let raw = agent.stack.raw(&view)?;
    if !before && agent.stack.mode != Mode::None {
        agent.stack.train(&view, &negatives)?;
    }
    let n = b.n_envs;
    b.combined = Vec::with_capacity(b.extrinsic.len());
    b.norm_icm = Vec::with_capacity(b.extrinsic.len());
    b.norm_emp = Vec::with_capacity(b.extrinsic.len());
    b.w_icm = Vec::with_capacity(b.horizon);
    let part = |v: &Vec<f64>, r: std::ops::Range<usize>| if v.is_empty() { Vec::new() } else { v[r].to_vec() };
    for t in 0..b.horizon {
        let r = t * n..(t + 1) * n;
        let step_raw = RawIntrinsic {
            icm: part(&raw.icm, r.clone()),
            disagreement: part(&raw.disagreement, r.clone()),
            empowerment: part(&raw.empowerment, r.clone()),
        };
        agent.stack.absorb(&step_raw);
        let bl = agent.stack.blend(&step_raw, &b.extrinsic[r]);
        if bl.combined.iter().any(|c| !c.is_finite()) {
            return Err(Error::Diverged {
                epoch: t,
                detail: "non-finite combined reward".into(),
            });
        }
        b.w_icm.push(bl.w_icm);
        b.combined.extend(bl.combined);
        b.norm_icm.extend(bl.norm_icm);
        b.norm_emp.extend(bl.norm_emp);
    }
    b.raw = raw;
    Ok(())
}

/// Advantages and returns, step-major, from the combined rewards.
pub fn rollout_advantages(b: &RolloutBatch, cfg: &PpoConfig) -> (Vec<f64>, Vec<f64>) {
    let shape = (b.horizon, b.n_envs);
    let r = Array2::from_shape_vec(shape, b.combined.clone()).expect("rectangular rollout");
    let v = Array2::from_shape_vec(shape, b.values.clone()).expect("rectangular rollout");
    let d = Array2::from_shape_vec(shape, b.dones.clone()).expect("rectangular rollout");
    let boot = Array1::from_vec(b.bootstrap.clone());
    let (adv, ret) = gae(r.view(), v.view(), d.view(), boot.view(), cfg.gamma, cfg.lam);
    (adv.into_iter().collect(), ret.into_iter().collect())
}

/// One logged iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub env_steps: usize,
    /// Mean return over the trailing episode window; NaN before any episode ends.
    pub mean_extrinsic_return: f64,
    pub success_rate: f64,
    pub w_icm: f64,
    pub mean_norm_icm: f64,
    pub mean_norm_emp: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}",
            self.iteration,
            self.env_steps,
            self.mean_extrinsic_return,
            self.success_rate,
            self.w_icm,
            self.mean_norm_icm,
            self.mean_norm_emp,
            self.policy_loss,
            self.value_loss,
            self.wall_seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub metrics: Vec<MetricsRow>,
    pub episodes: Vec<EpisodeStats>,
    /// One row per vectorised environment step.
    pub diagnostics: Vec<RewardDiagnostics>,
}

impl TrainReport {
    /// Mean return and success rate of the last `n` finished episodes.
    pub fn final_episodes(&self, n: usize) -> Option<(f64, f64)> {
        let tail = &self.episodes[self.episodes.len().saturating_sub(n)..];
        if tail.is_empty() {
            return None;
        }
        let k = tail.len() as f64;
        Some((
            tail.iter().map(|e| e.episode_return).sum::<f64>() / k,
            tail.iter().filter(|e| e.success).count() as f64 / k,
        ))
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Full training loop: collect, score, GAE, PPO. With `out_dir`, writes
/// `metrics.csv` and `diagnostics.csv` as it goes and checkpoints under
/// `ckpt/`. On any error a
/// checkpoint named `abort` is written before the error is returned.
pub fn train(cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    let mut agent = Agent::new(cfg)?;
    let mut envs = VecEnv::new(cfg.env.clone(), cfg.ppo.n_envs, derive_seed(cfg.seed, 0xE1))?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x9F0));
    let mut replay = ReplayStore::new(cfg.replay_capacity)?;
    let mut writers = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut m = BufWriter::new(fs::File::create(dir.join("metrics.csv"))?);
            writeln!(m, "{METRICS_HEADER}")?;
            let mut d = BufWriter::new(fs::File::create(dir.join("diagnostics.csv"))?);
            writeln!(d, "{DIAGNOSTICS_HEADER}")?;
            Some((m, d))
        }
        None => None,
    };
    let start = Instant::now();
    let mut report = TrainReport {
        metrics: Vec::new(),
        episodes: Vec::new(),
        diagnostics: Vec::new(),
    };
    let mut window: VecDeque<EpisodeStats> = VecDeque::with_capacity(EPISODE_WINDOW);
    let iterations = cfg.iterations();
    for it in 0..iterations {
        let mut step = || -> Result<(RolloutBatch, UpdateStats)> {
            let mut b = collect_rollout(&mut agent, &mut envs, cfg.ppo.horizon, &mut rng)?;
            score_rollout(&mut agent, &mut b)?;
            let (advantages, returns) = rollout_advantages(&b, &cfg.ppo);
            let batch = PpoBatch {
                states: b.policy_states.clone(),
                actions: b.actions.clone(),
                old_log_probs: b.log_probs.clone(),
                advantages,
                returns,
            };
            let stats = agent.nets.update(&batch, &cfg.ppo, &mut rng)?;
            Ok((b, stats))
        };
        let (b, stats) = match step() {
            Ok(v) => v,
            Err(e) => {
                if let Some(dir) = out_dir {
                    let _ = save_checkpoint(&agent, cfg, &dir.join("ckpt").join("abort"), it, it * cfg.steps_per_iteration());
                }
                return Err(e);
            }
        };
        for (r, s) in b.states.rows().into_iter().enumerate() {
            replay.push(Transition {
                state: s.to_vec(),
                action: b.executed.row(r).to_vec(),
                next_extrinsic: b.next_extrinsic.row(r).to_vec(),
                extrinsic_reward: b.extrinsic[r],
            });
        }
        for e in &b.finished {
            if window.len() == EPISODE_WINDOW {
                window.pop_front();
            }
            window.push_back(*e);
        }
        report.episodes.extend(&b.finished);
        let diag = b.diagnostics(it * cfg.ppo.horizon);
        let (ret, succ) = if window.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let k = window.len() as f64;
            (
                window.iter().map(|e| e.episode_return).sum::<f64>() / k,
                window.iter().filter(|e| e.success).count() as f64 / k,
            )
        };
        let row = MetricsRow {
            iteration: it + 1,
            env_steps: (it + 1) * cfg.steps_per_iteration(),
            mean_extrinsic_return: ret,
            success_rate: succ,
            w_icm: mean(&b.w_icm),
            mean_norm_icm: mean(&b.norm_icm),
            mean_norm_emp: mean(&b.norm_emp),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            wall_seconds: if cfg.wall_clock { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        log::info!("{}", row.csv_line());
        if let Some((m, d)) = writers.as_mut() {
            writeln!(m, "{}", row.csv_line())?;
            m.flush()?;
            for r in &diag {
                writeln!(d, "{}", r.csv_line())?;
            }
            d.flush()?;
        }
        report.diagnostics.extend(diag);
        report.metrics.push(row);
        let last = it + 1 == iterations;
        if let Some(dir) = out_dir {
            if last || (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) {
                save_checkpoint(&agent, cfg, &checkpoint_dir(dir, it + 1), it + 1, (it + 1) * cfg.steps_per_iteration())?;
            }
        }
    }
    Ok(report)
}

pub fn checkpoint_dir(run_dir: &Path, iteration: usize) -> PathBuf {
    run_dir.join("ckpt").join(format!("iter_{iteration:06}"))
}

/// Metadata written next to the network files of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub state_dim: usize,
    pub action_dim: usize,
    pub mode: Mode,
    pub iteration: usize,
    pub env_steps: usize,
    pub env: EnvConfig,
    pub obs_norm: VecNorm,
}

/// `policy.bin` (log-std as auxiliary values), `value.bin`, `agent.json`,
/// plus `forward.bin`, `ensemble/member_N.bin` and `empowerment/` when
/// those models exist.
pub fn save_checkpoint(agent: &Agent, cfg: &TrainConfig, dir: &Path, iteration: usize, env_steps: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    checkpoint::save(dir.join("policy.bin"), &agent.nets.policy, &agent.nets.log_std)?;
    checkpoint::save(dir.join("value.bin"), &agent.nets.value, &[])?;
    if let Some(f) = &agent.stack.forward {
        checkpoint::save(dir.join("forward.bin"), &f.net, &[])?;
    }
    if let Some(e) = &agent.stack.ensemble {
        let sub = dir.join("ensemble");
        fs::create_dir_all(&sub)?;
        for (i, m) in e.members.iter().enumerate() {
            checkpoint::save(sub.join(format!("member_{i}.bin")), &m.net, &[])?;
        }
    }
    if let Some(h) = &agent.stack.empowerment {
        h.save(dir.join("empowerment"))?;
    }
    let meta = AgentMeta {
        state_dim: cfg.env.state_dim(),
        action_dim: ACTION_DIM,
        mode: cfg.mode,
        iteration,
        env_steps,
        env: cfg.env.clone(),
        obs_norm: agent.obs_norm.clone(),
    };
    fs::write(dir.join("agent.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Policy and observation statistics restored from a checkpoint.
pub struct LoadedPolicy {
    pub nets: PolicyValueNets,
    pub meta: AgentMeta,
}

pub fn load_checkpoint(dir: &Path, lr: f64) -> Result<LoadedPolicy> {
    let meta: AgentMeta = serde_json::from_str(&fs::read_to_string(dir.join("agent.json"))?)?;
    let (policy, log_std) = checkpoint::load(dir.join("policy.bin"))?;
    let (value, _) = checkpoint::load(dir.join("value.bin"))?;
    if policy.input_dim() != meta.state_dim || policy.output_dim() != meta.action_dim || meta.obs_norm.len() != meta.state_dim {
        return Err(Error::Checkpoint("policy shape disagrees with agent.json".into()));
    }
    let nets = PolicyValueNets::from_parts(policy, log_std, value, lr)?;
    Ok(LoadedPolicy { nets, meta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub success_rate: Option<f64>,
    pub returns: Vec<f64>,
}

/// Runs `episodes` episodes acting on the policy mean.
pub fn evaluate(loaded: &LoadedPolicy, env_cfg: &EnvConfig, episodes: usize, seed: u64) -> Result<EvalReport> {
    if env_cfg.state_dim() != loaded.meta.state_dim {
        return Err(Error::Config(format!(
            "checkpoint expects state dim {}, environment has {}",
            loaded.meta.state_dim,
            env_cfg.state_dim()
        )));
    }
    let env = PlanarLift::new(env_cfg.clone())?;
    let mut rng = rng_from_seed(seed);
    let mut failure = None;
    let stats = crate::env::rollout_episodes(&env, episodes, &mut rng, |s, _| {
        let z = loaded.meta.obs_norm.normalize_slice(&s.observation());
        let z = Array2::from_shape_vec((1, z.len()), z).expect("one row");
        match loaded.nets.means(z.view()) {
            Ok(m) => EnvAction::from_unit(m.row(0).as_slice().unwrap_or(&[0.0; ACTION_DIM])),
            Err(e) => {
                failure.get_or_insert(e);
                EnvAction::from_unit(&[0.0; ACTION_DIM])
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let returns: Vec<f64> = stats.iter().map(|e| e.episode_return).collect();
    let k = stats.len() as f64;
    Ok(EvalReport {
        episodes: stats.len(),
        mean_return: (!stats.is_empty()).then(|| returns.iter().sum::<f64>() / k),
        success_rate: (!stats.is_empty()).then(|| stats.iter().filter(|e| e.success).count() as f64 / k),
        returns,
    })
}

/// Writes metrics rows with the header, as `train` does.
pub fn write_metrics<W: Write>(mut out: W, rows: &[MetricsRow]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}
