//! `PlanarLift`: a kinematic 2-D pick-and-lift task.
//!
//! An end effector moves in the `(x, h)` plane above a table at `h = 0` and
//! opens or closes a gripper. The extrinsic reward is paid only while the
//! object is held above the lift threshold, so a random policy almost never
//! sees it. Optional distractor dimensions append i.i.d. noise to the
//! extrinsic state.

use std::io::Write;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, rng_from_seed, Rng};

/// Largest end-effector move per step along each axis (metres).
pub const MAX_MOVE: f64 = 0.05;
/// Largest gripper aperture change per step.
pub const MAX_GRIP_CHANGE: f64 = 0.2;
pub const WORKSPACE_HALF_WIDTH: f64 = 0.5;
pub const WORKSPACE_HEIGHT: f64 = 0.5;
/// `(ee_x, ee_h, grip)`.
pub const INTRINSIC_DIM: usize = 3;
pub const ACTION_DIM: usize = 3;
/// Per-step reward above which an episode counts as a success.
pub const SUCCESS_REWARD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Grasp tolerance on both axes between effector and object.
    pub grasp_radius: f64,
    /// Aperture below which the gripper counts as closed.
    pub grip_close_threshold: f64,
    pub lift_threshold: f64,
    pub reward_scale: f64,
    pub episode_len: usize,
    pub distractor_dim: usize,
    /// A grasp needs the gripper to close during that very step.
    pub require_close_transition: bool,
    /// An open effector lower than `contact_height` and within
    /// `contact_radius` of the object drags it sideways. 0 disables contact.
    pub contact_radius: f64,
    pub contact_height: f64,
    /// Fraction of the effector's sideways move passed to a touched object.
    pub drag_fraction: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grasp_radius: 0.005,
            grip_close_threshold: 0.2,
            lift_threshold: 0.01,
            reward_scale: 50.0,
            episode_len: 100,
            distractor_dim: 0,
            require_close_transition: true,
            contact_radius: 0.05,
            contact_height: 0.03,
            drag_fraction: 0.5,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grasp_radius", self.grasp_radius),
            ("grip_close_threshold", self.grip_close_threshold),
            ("lift_threshold", self.lift_threshold),
            ("reward_scale", self.reward_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.episode_len == 0 {
            return Err(Error::Config("episode_len must be positive".into()));
        }
        if !(self.contact_radius >= 0.0 && self.contact_height >= 0.0) {
            return Err(Error::Config("contact radius and height must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.drag_fraction) {
            return Err(Error::Config("drag_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn extrinsic_dim(&self) -> usize {
        2 + self.distractor_dim
    }

    pub fn state_dim(&self) -> usize {
        INTRINSIC_DIM + self.extrinsic_dim()
    }

    /// Largest possible episode return.
    pub fn max_return(&self) -> f64 {
        self.episode_len as f64 * self.reward_scale * (WORKSPACE_HEIGHT - self.lift_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub ee_x: f64,
    pub ee_h: f64,
    pub grip: f64,
    pub obj_x: f64,
    pub obj_h: f64,
    pub grasped: bool,
    pub distractor: Vec<f64>,
    pub t: usize,
}

impl EnvState {
    /// `[ee_x, ee_h, grip, obj_x, obj_h, distractor..]`.
    pub fn observation(&self) -> Vec<f64> {
        let mut v = vec![self.ee_x, self.ee_h, self.grip, self.obj_x, self.obj_h];
        v.extend_from_slice(&self.distractor);
        v
    }
}

/// Agent-body and environment parts of a state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSplit {
    pub intrinsic: Vec<f64>,
    pub extrinsic: Vec<f64>,
}

impl StateSplit {
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.intrinsic.clone();
        v.extend_from_slice(&self.extrinsic);
        v
    }
}

pub fn split_state(state: &EnvState) -> StateSplit {
    let obs = state.observation();
    StateSplit {
        intrinsic: obs[..INTRINSIC_DIM].to_vec(),
        extrinsic: obs[INTRINSIC_DIM..].to_vec(),
    }
}

/// Effector and gripper deltas in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvAction {
    pub d_ee_x: f64,
    pub d_ee_h: f64,
    pub d_grip: f64,
}

impl EnvAction {
    /// Maps `[-1, 1]^3` onto the action box; values outside are clipped.
    pub fn from_unit(u: &[f64]) -> Self {
        assert_eq!(u.len(), ACTION_DIM, "action width");
        Self {
            d_ee_x: u[0].clamp(-1.0, 1.0) * MAX_MOVE,
            d_ee_h: u[1].clamp(-1.0, 1.0) * MAX_MOVE,
            d_grip: u[2].clamp(-1.0, 1.0) * MAX_GRIP_CHANGE,
        }
    }

    pub fn clipped(&self) -> Self {
        Self {
            d_ee_x: self.d_ee_x.clamp(-MAX_MOVE, MAX_MOVE),
            d_ee_h: self.d_ee_h.clamp(-MAX_MOVE, MAX_MOVE),
            d_grip: self.d_grip.clamp(-MAX_GRIP_CHANGE, MAX_GRIP_CHANGE),
        }
    }

    pub fn random(rng: &mut Rng) -> Self {
        Self {
            d_ee_x: rng.random_range(-MAX_MOVE..=MAX_MOVE),
            d_ee_h: rng.random_range(-MAX_MOVE..=MAX_MOVE),
            d_grip: rng.random_range(-MAX_GRIP_CHANGE..=MAX_GRIP_CHANGE),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarLift {
    pub config: EnvConfig,
}

impl PlanarLift {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    fn distractor(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.config.distractor_dim).map(|_| StandardNormal.sample(rng)).collect()
    }

    pub fn reset(&self, rng: &mut Rng) -> EnvState {
        let obj_x = rng.random_range(-0.3..=0.3);
        EnvState {
            ee_x: 0.0,
            ee_h: 0.1,
            grip: 1.0,
            obj_x,
            obj_h: 0.0,
            grasped: false,
            distractor: self.distractor(rng),
            t: 0,
        }
    }

    /// Extrinsic reward paid in a state.
    pub fn reward(&self, s: &EnvState) -> f64 {
        if s.grasped && s.obj_h > self.config.lift_threshold {
            self.config.reward_scale * (s.obj_h - self.config.lift_threshold)
        } else {
            0.0
        }
    }

    pub fn step(&self, state: &EnvState, action: &EnvAction, rng: &mut Rng) -> Result<StepOutcome> {
        if ![action.d_ee_x, action.d_ee_h, action.d_grip].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidAction(format!("{action:?}")));
        }
        let c = &self.config;
        let a = action.clipped();
        let mut s = state.clone();
        let (prev_x, prev_grip) = (s.ee_x, s.grip);
        s.ee_x = (s.ee_x + a.d_ee_x).clamp(-WORKSPACE_HALF_WIDTH, WORKSPACE_HALF_WIDTH);
        s.ee_h = (s.ee_h + a.d_ee_h).clamp(0.0, WORKSPACE_HEIGHT);
        s.grip = (s.grip + a.d_grip).clamp(0.0, 1.0);
        let closed = s.grip < c.grip_close_threshold;

        if s.grasped {
            if closed {
                s.obj_x = s.ee_x;
                s.obj_h = s.ee_h;
            } else {
                s.grasped = false;
                s.obj_h = 0.0;
            }
        } else {
            if c.contact_radius > 0.0 && (s.ee_x - s.obj_x).abs() < c.contact_radius && s.ee_h < c.contact_height {
                s.obj_x = (s.obj_x + c.drag_fraction * (s.ee_x - prev_x)).clamp(-WORKSPACE_HALF_WIDTH, WORKSPACE_HALF_WIDTH);
            }
            let aligned = (s.ee_x - s.obj_x).abs() < c.grasp_radius && (s.ee_h - s.obj_h).abs() < c.grasp_radius;
            let closing = !c.require_close_transition || prev_grip >= c.grip_close_threshold;
            if aligned && closed && closing {
                s.grasped = true;
                s.obj_x = s.ee_x;
                s.obj_h = s.ee_h;
            }
        }

        s.distractor = self.distractor(rng);
        s.t += 1;
        let reward = self.reward(&s);
        let done = s.t >= c.episode_len;
        Ok(StepOutcome { state: s, reward, done })
    }
}

/// Return and success flag of a finished episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode_return: f64,
    pub success: bool,
}

/// Result of one [`VecEnv::step`], one entry per slot.
#[derive(Debug, Clone)]
pub struct VecStep {
    /// True successor states, before any automatic reset.
    pub next_states: Vec<EnvState>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Episodes finished during this step.
    pub finished: Vec<(usize, EpisodeStats)>,
}

/// `n` independent environments, each with its own seeded stream, reset
/// automatically when an episode ends.
#[derive(Debug, Clone)]
pub struct VecEnv {
    pub env: PlanarLift,
    states: Vec<EnvState>,
    rngs: Vec<Rng>,
    returns: Vec<f64>,
    successes: Vec<bool>,
}

impl VecEnv {
    /// Slot `i` draws from `derive_seed(seed, i)`.
    pub fn new(config: EnvConfig, n: usize, seed: u64) -> Result<Self> {
        let seeds: Vec<u64> = (0..n as u64).map(|i| derive_seed(seed, i)).collect();
        Self::with_slot_seeds(config, &seeds)
    }

    pub fn with_slot_seeds(config: EnvConfig, seeds: &[u64]) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Config("need at least one environment".into()));
        }
        let env = PlanarLift::new(config)?;
        let mut rngs: Vec<Rng> = seeds.iter().map(|&s| rng_from_seed(s)).collect();
        let states = rngs.iter_mut().map(|r| env.reset(r)).collect();
        Ok(Self {
            env,
            states,
            rngs,
            returns: vec![0.0; seeds.len()],
            successes: vec![false; seeds.len()],
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[EnvState] {
        &self.states
    }

    pub fn observations(&self) -> Array2<f64> {
        observation_matrix(&self.states, self.env.config.state_dim())
    }

    pub fn step(&mut self, actions: &[EnvAction]) -> Result<VecStep> {
        if actions.len() != self.len() {
            return Err(Error::Dimension {
                context: "vectorised actions",
                expected: self.len(),
                actual: actions.len(),
            });
        }
        let mut out = VecStep {
            next_states: Vec::with_capacity(self.len()),
            rewards: Vec::with_capacity(self.len()),
            dones: Vec::with_capacity(self.len()),
            finished: Vec::new(),
        };
        for i in 0..self.len() {
            let o = self.env.step(&self.states[i], &actions[i], &mut self.rngs[i])?;
            self.returns[i] += o.reward;
            self.successes[i] |= o.reward > SUCCESS_REWARD;
            if o.done {
                out.finished.push((
                    i,
                    EpisodeStats {
                        episode_return: self.returns[i],
                        success: self.successes[i],
                    },
                ));
                self.returns[i] = 0.0;
                self.successes[i] = false;
                self.states[i] = self.env.reset(&mut self.rngs[i]);
            } else {
                self.states[i] = o.state.clone();
            }
            out.next_states.push(o.state);
            out.rewards.push(o.reward);
            out.dones.push(o.done);
        }
        Ok(out)
    }
}

pub fn observation_matrix(states: &[EnvState], dim: usize) -> Array2<f64> {
    let mut m = Array2::zeros((states.len(), dim));
    for (mut row, s) in m.rows_mut().into_iter().zip(states) {
        for (v, o) in row.iter_mut().zip(s.observation()) {
            *v = o;
        }
    }
    m
}

/// Runs `episodes` episodes of a policy from one seeded stream.
pub fn rollout_episodes(
    env: &PlanarLift,
    episodes: usize,
    rng: &mut Rng,
    mut policy: impl FnMut(&EnvState, &mut Rng) -> EnvAction,
) -> Result<Vec<EpisodeStats>> {
    let mut stats = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.reset(rng);
        let mut total = 0.0;
        let mut success = false;
        loop {
            let a = policy(&s, rng);
            let o = env.step(&s, &a, rng)?;
            total += o.reward;
            success |= o.reward > SUCCESS_REWARD;
            s = o.state;
            if o.done {
                break;
            }
        }
        stats.push(EpisodeStats {
            episode_return: total,
            success,
        });
    }
    Ok(stats)
}

#[derive(Serialize)]
struct TransitionRecord<'a> {
    step: usize,
    s_in: &'a [f64],
    s_ex: &'a [f64],
    action: [f64; 3],
    r_e: f64,
    done: bool,
}

/// Appends one JSON line per transition.
pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn record(&mut self, step: usize, state: &EnvState, action: &EnvAction, r_e: f64, done: bool) -> Result<()> {
        let split = split_state(state);
        let rec = TransitionRecord {
            step,
            s_in: &split.intrinsic,
            s_ex: &split.extrinsic,
            action: [action.d_ee_x, action.d_ee_h, action.d_grip],
            r_e,
            done,
        };
        serde_json::to_writer(&mut self.out, &rec)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
