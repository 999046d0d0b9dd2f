//! PPO with GAE over vectorised environments, the intrinsic-reward stack it
//! learns from, and a replay store whose intrinsic rewards are recomputed
//! on every draw.

pub mod gae;
pub mod policy;
pub mod replay;
pub mod stack;
pub mod train;

pub use gae::gae;
pub use policy::{PolicyValueNets, PpoBatch, PpoConfig, UpdateStats};
pub use replay::{recompute_intrinsic, Recomputed, ReplayStore, Transition};
pub use stack::{Blended, IntrinsicConfig, IntrinsicStack, Mode, PolicyNegatives, RawIntrinsic, TransitionView};
pub use train::{
    collect_rollout, evaluate, load_checkpoint, save_checkpoint, score_rollout, train, Agent, EvalReport, MetricsRow, RolloutBatch,
    TrainConfig, TrainReport, EPISODE_WINDOW, METRICS_HEADER,
};
