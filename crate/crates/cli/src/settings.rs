//! Key sets of each command.

use empowerkit::env::EnvConfig;
use empowerkit::mi::{EstimatorConfig, EstimatorKind};
use empowerkit::numerics::Activation;
use empowerkit::rl::{IntrinsicConfig, Mode, PpoConfig, TrainConfig};
use empowerkit::synth::{BenchConfig, OracleConfig, OracleJoint};

use crate::config::{flag, join, list, num, unknown, Settings};

type Entries = Vec<(String, String)>;

fn push(out: &mut Entries, key: &str, value: impl ToString) {
    out.push((key.to_string(), value.to_string()));
}

fn activation(v: &str) -> Result<Activation, String> {
    match v {
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        "linear" => Ok(Activation::Linear),
        "softplus" => Ok(Activation::Softplus),
        _ => Err(format!("unknown activation '{v}'")),
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Tanh => "tanh",
        Activation::Relu => "relu",
        Activation::Linear => "linear",
        Activation::Softplus => "softplus",
    }
}

/// Returns `Ok(false)` when `key` is not an estimator key.
fn set_estimator(c: &mut EstimatorConfig, key: &str, v: &str) -> Result<bool, String> {
    match key {
        "hidden" => c.hidden = list(v)?,
        "activation" => c.activation = activation(v)?,
        "glu_layers" => c.glu_layers = num(v)?,
        "glu_width" => c.glu_width = num(v)?,
        "lr" => c.lr = num(v)?,
        "batch_size" => c.batch_size = num(v)?,
        "holdout_fraction" => c.holdout_fraction = num(v)?,
        "standardize" => c.standardize = flag(v)?,
        "final_lr_fraction" => c.final_lr_fraction = num(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn estimator_entries(out: &mut Entries, prefix: &str, c: &EstimatorConfig) {
    push(out, &format!("{prefix}hidden"), join(&c.hidden));
    push(out, &format!("{prefix}activation"), activation_name(c.activation));
    push(out, &format!("{prefix}glu_layers"), c.glu_layers);
    push(out, &format!("{prefix}glu_width"), c.glu_width);
    push(out, &format!("{prefix}lr"), c.lr);
    push(out, &format!("{prefix}batch_size"), c.batch_size);
    push(out, &format!("{prefix}holdout_fraction"), c.holdout_fraction);
    push(out, &format!("{prefix}standardize"), c.standardize);
    push(out, &format!("{prefix}final_lr_fraction"), c.final_lr_fraction);
}

pub fn set_env(c: &mut EnvConfig, key: &str, v: &str) -> Result<bool, String> {
    match key {
        "grasp_radius" => c.grasp_radius = num(v)?,
        "grip_close_threshold" => c.grip_close_threshold = num(v)?,
        "lift_threshold" => c.lift_threshold = num(v)?,
        "reward_scale" => c.reward_scale = num(v)?,
        "episode_len" => c.episode_len = num(v)?,
        "distractor_dim" => c.distractor_dim = num(v)?,
        "require_close_transition" => c.require_close_transition = flag(v)?,
        "contact_radius" => c.contact_radius = num(v)?,
        "contact_height" => c.contact_height = num(v)?,
        "drag_fraction" => c.drag_fraction = num(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn env_entries(out: &mut Entries, c: &EnvConfig) {
    push(out, "env.grasp_radius", c.grasp_radius);
    push(out, "env.grip_close_threshold", c.grip_close_threshold);
    push(out, "env.lift_threshold", c.lift_threshold);
    push(out, "env.reward_scale", c.reward_scale);
    push(out, "env.episode_len", c.episode_len);
    push(out, "env.distractor_dim", c.distractor_dim);
    push(out, "env.require_close_transition", c.require_close_transition);
    push(out, "env.contact_radius", c.contact_radius);
    push(out, "env.contact_height", c.contact_height);
    push(out, "env.drag_fraction", c.drag_fraction);
}

fn set_ppo(c: &mut PpoConfig, key: &str, v: &str) -> Result<bool, String> {
    match key {
        "gamma" => c.gamma = num(v)?,
        "lam" => c.lam = num(v)?,
        "clip_eps" => c.clip_eps = num(v)?,
        "epochs_per_update" => c.epochs_per_update = num(v)?,
        "minibatch" => c.minibatch = num(v)?,
        "lr" => c.lr = num(v)?,
        "entropy_coef" => c.entropy_coef = num(v)?,
        "value_coef" => c.value_coef = num(v)?,
        "horizon" => c.horizon = num(v)?,
        "n_envs" => c.n_envs = num(v)?,
        "hidden" => c.hidden = list(v)?,
        "init_log_std" => c.init_log_std = num(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn ppo_entries(out: &mut Entries, c: &PpoConfig) {
    push(out, "ppo.gamma", c.gamma);
    push(out, "ppo.lam", c.lam);
    push(out, "ppo.clip_eps", c.clip_eps);
    push(out, "ppo.epochs_per_update", c.epochs_per_update);
    push(out, "ppo.minibatch", c.minibatch);
    push(out, "ppo.lr", c.lr);
    push(out, "ppo.entropy_coef", c.entropy_coef);
    push(out, "ppo.value_coef", c.value_coef);
    push(out, "ppo.horizon", c.horizon);
    push(out, "ppo.n_envs", c.n_envs);
    push(out, "ppo.hidden", join(&c.hidden));
    push(out, "ppo.init_log_std", c.init_log_std);
}

fn set_intrinsic(c: &mut IntrinsicConfig, key: &str, v: &str) -> Result<bool, String> {
    if let Some(rest) = key.strip_prefix("empowerment.") {
        return set_estimator(&mut c.empowerment, rest, v);
    }
    match key {
        "forward_hidden" => c.forward_hidden = num(v)?,
        "forward_lr" => c.forward_lr = num(v)?,
        "ensemble_size" => c.ensemble_size = num(v)?,
        "epochs" => c.epochs = num(v)?,
        "minibatch" => c.minibatch = num(v)?,
        "train_before_reward" => c.train_before_reward = flag(v)?,
        "blend_threshold" => c.blend.threshold = num(v)?,
        "blend_slope" => c.blend.slope = num(v)?,
        "use_normalized_icm" => c.blend.use_normalized_icm = flag(v)?,
        "empowerment_bound" => c.empowerment_bound = num::<EstimatorKind>(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn intrinsic_entries(out: &mut Entries, c: &IntrinsicConfig) {
    push(out, "intrinsic.forward_hidden", c.forward_hidden);
    push(out, "intrinsic.forward_lr", c.forward_lr);
    push(out, "intrinsic.ensemble_size", c.ensemble_size);
    push(out, "intrinsic.epochs", c.epochs);
    push(out, "intrinsic.minibatch", c.minibatch);
    push(out, "intrinsic.train_before_reward", c.train_before_reward);
    push(out, "intrinsic.blend_threshold", c.blend.threshold);
    push(out, "intrinsic.blend_slope", c.blend.slope);
    push(out, "intrinsic.use_normalized_icm", c.blend.use_normalized_icm);
    push(out, "intrinsic.empowerment_bound", c.empowerment_bound);
    estimator_entries(out, "intrinsic.empowerment.", &c.empowerment);
}

fn seeds_from_count(v: &str) -> Result<Vec<u64>, String> {
    let n: u64 = num(v)?;
    if n == 0 {
        return Err("need at least one seed".into());
    }
    Ok((0..n).collect())
}

/// `mi-bench` settings.
#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub run_id: String,
    pub strict: bool,
    pub bench: BenchConfig,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            run_id: "mi-bench".into(),
            strict: false,
            bench: BenchConfig::default(),
        }
    }
}

impl Settings for BenchSettings {
    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let b = &mut self.bench;
        if let Some(rest) = key.strip_prefix("estimator.") {
            return if set_estimator(&mut b.estimator, rest, v)? { Ok(()) } else { Err(unknown(key)) };
        }
        match key {
            "run_id" => self.run_id = v.to_string(),
            "strict" => self.strict = flag(v)?,
            "kinds" => b.kinds = list(v)?,
            "dims" => b.dims = list(v)?,
            "sizes" => b.sizes = list(v)?,
            "seeds" => b.seeds = seeds_from_count(v)?,
            "sigma_z" => b.sigma_z = num(v)?,
            "noise" => b.noise = num(v)?,
            "epochs" => b.epochs = num(v)?,
            "grid_size" => b.grid_size = num(v)?,
            "samples_per_z" => b.samples_per_z = num(v)?,
            "record_wall_time" => b.record_wall_time = flag(v)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn entries(&self) -> Entries {
        let b = &self.bench;
        let mut out = Vec::new();
        push(&mut out, "run_id", &self.run_id);
        push(&mut out, "strict", self.strict);
        push(&mut out, "kinds", join(&b.kinds));
        push(&mut out, "dims", join(&b.dims));
        push(&mut out, "sizes", join(&b.sizes));
        push(&mut out, "seeds", b.seeds.len());
        push(&mut out, "sigma_z", b.sigma_z);
        push(&mut out, "noise", b.noise);
        push(&mut out, "epochs", b.epochs);
        push(&mut out, "grid_size", b.grid_size);
        push(&mut out, "samples_per_z", b.samples_per_z);
        push(&mut out, "record_wall_time", b.record_wall_time);
        estimator_entries(&mut out, "estimator.", &b.estimator);
        out
    }
}

/// `train` settings. The run id defaults to `train-<mode>-s<seed>`.
#[derive(Debug, Clone, Default)]
pub struct TrainSettings {
    pub run_id: Option<String>,
    pub train: TrainConfig,
}

impl TrainSettings {
    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("train-{}-s{}", self.train.mode, self.train.seed))
    }
}

impl Settings for TrainSettings {
    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let t = &mut self.train;
        let known = if let Some(rest) = key.strip_prefix("env.") {
            set_env(&mut t.env, rest, v)?
        } else if let Some(rest) = key.strip_prefix("ppo.") {
            set_ppo(&mut t.ppo, rest, v)?
        } else if let Some(rest) = key.strip_prefix("intrinsic.") {
            set_intrinsic(&mut t.intrinsic, rest, v)?
        } else {
            match key {
                "run_id" => self.run_id = Some(v.to_string()),
                "mode" => t.mode = num::<Mode>(v)?,
                "seed" => t.seed = num(v)?,
                "total_steps" => t.total_steps = num(v)?,
                "checkpoint_every" => t.checkpoint_every = num(v)?,
                "replay_capacity" => t.replay_capacity = num(v)?,
                "wall_clock" => t.wall_clock = flag(v)?,
                _ => return Err(unknown(key)),
            }
            true
        };
        if known {
            Ok(())
        } else {
            Err(unknown(key))
        }
    }

    fn entries(&self) -> Entries {
        let t = &self.train;
        let mut out = Vec::new();
        push(&mut out, "run_id", self.run_id());
        push(&mut out, "mode", t.mode);
        push(&mut out, "seed", t.seed);
        push(&mut out, "total_steps", t.total_steps);
        push(&mut out, "checkpoint_every", t.checkpoint_every);
        push(&mut out, "replay_capacity", t.replay_capacity);
        push(&mut out, "wall_clock", t.wall_clock);
        env_entries(&mut out, &t.env);
        ppo_entries(&mut out, &t.ppo);
        intrinsic_entries(&mut out, &t.intrinsic);
        out
    }
}

/// `eval` settings. Environment keys override the checkpoint's own
/// environment, so they are kept as given and applied after loading.
#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub run_id: String,
    pub checkpoint: Option<String>,
    pub episodes: usize,
    pub seed: u64,
    pub env_overrides: Vec<(String, String)>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            run_id: "eval".into(),
            checkpoint: None,
            episodes: 100,
            seed: 0,
            env_overrides: Vec::new(),
        }
    }
}

impl EvalSettings {
    pub fn env_for(&self, base: &EnvConfig) -> Result<EnvConfig, String> {
        let mut env = base.clone();
        for (k, v) in &self.env_overrides {
            set_env(&mut env, k, v)?;
        }
        Ok(env)
    }
}

impl Settings for EvalSettings {
    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        if let Some(rest) = key.strip_prefix("env.") {
            if !set_env(&mut EnvConfig::default(), rest, v)? {
                return Err(unknown(key));
            }
            self.env_overrides.retain(|(k, _)| k != rest);
            self.env_overrides.push((rest.to_string(), v.to_string()));
            return Ok(());
        }
        match key {
            "run_id" => self.run_id = v.to_string(),
            "checkpoint" => self.checkpoint = Some(v.to_string()),
            "episodes" => self.episodes = num(v)?,
            "seed" => self.seed = num(v)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn entries(&self) -> Entries {
        let mut out = Vec::new();
        push(&mut out, "run_id", &self.run_id);
        if let Some(c) = &self.checkpoint {
            push(&mut out, "checkpoint", c);
        }
        push(&mut out, "episodes", self.episodes);
        push(&mut out, "seed", self.seed);
        for (k, v) in &self.env_overrides {
            push(&mut out, &format!("env.{k}"), v);
        }
        out
    }
}

/// `oracle` settings.
#[derive(Debug, Clone)]
pub struct OracleSettings {
    pub run_id: String,
    pub oracle: OracleConfig,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            run_id: "oracle".into(),
            oracle: OracleConfig::default(),
        }
    }
}

impl Settings for OracleSettings {
    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let o = &mut self.oracle;
        if let Some(rest) = key.strip_prefix("estimator.") {
            return if set_estimator(&mut o.estimator, rest, v)? { Ok(()) } else { Err(unknown(key)) };
        }
        match key {
            "run_id" => self.run_id = v.to_string(),
            "kinds" => o.kinds = list(v)?,
            "joints" => o.joints = list::<OracleJoint>(v)?,
            "samples" => o.samples = num(v)?,
            "jitter" => o.jitter = num(v)?,
            "epochs" => o.epochs = num(v)?,
            "seeds" => o.seeds = seeds_from_count(v)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn entries(&self) -> Entries {
        let o = &self.oracle;
        let mut out = Vec::new();
        push(&mut out, "run_id", &self.run_id);
        push(&mut out, "kinds", join(&o.kinds));
        push(&mut out, "joints", join(&o.joints));
        push(&mut out, "samples", o.samples);
        push(&mut out, "jitter", o.jitter);
        push(&mut out, "epochs", o.epochs);
        push(&mut out, "seeds", o.seeds.len());
        estimator_entries(&mut out, "estimator.", &o.estimator);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_text;

    fn round_trip<S: Settings + Default>(s: &S) -> Entries {
        let text = crate::config::echo("t", s);
        let mut fresh = S::default();
        for (k, v) in parse_text(&text, "echo").unwrap() {
            fresh.set(&k, &v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
        fresh.entries()
    }

    #[test]
    fn echoes_round_trip() {
        let mut t = TrainSettings::default();
        t.set("intrinsic.empowerment.lr", "0.00025").unwrap();
        t.set("ppo.hidden", "8,4").unwrap();
        assert_eq!(round_trip(&t), t.entries());
        let b = BenchSettings::default();
        assert_eq!(round_trip(&b), b.entries());
        let o = OracleSettings::default();
        assert_eq!(round_trip(&o), o.entries());
        let mut e = EvalSettings::default();
        e.set("env.distractor_dim", "2").unwrap();
        assert_eq!(round_trip(&e), e.entries());
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut t = TrainSettings::default();
        assert!(t.set("mode", "greedy").is_err());
        assert!(t.set("env.colour", "red").is_err());
        assert!(t.set("ppo.lr", "fast").is_err());
        let mut b = BenchSettings::default();
        assert!(b.set("kinds", "vlb,mine").is_err());
        assert!(b.set("seeds", "0").is_err());
        let mut e = EvalSettings::default();
        assert!(e.set("env.nope", "1").is_err());
    }

    #[test]
    fn seeds_are_a_count() {
        let mut b = BenchSettings::default();
        b.set("seeds", "3").unwrap();
        assert_eq!(b.bench.seeds, vec![0, 1, 2]);
    }
}
