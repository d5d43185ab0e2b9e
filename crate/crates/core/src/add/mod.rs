//! Diffusion-policy bandwidth allocation.
//!
//! A denoising chain maps the allocation state to per-user token budgets;
//! twin Q-networks with periodically synced targets supply the gradient
//! the chain is trained to ascend.

pub mod baseline;
pub mod critic;
pub mod diffusion;
pub mod env;
pub mod nn;
pub mod replay;
pub mod state;
pub mod train;

pub use baseline::{baseline_allocate, Baseline};
pub use critic::{bellman_target, q_target, Critic, CriticId, TwinCritics};
pub use diffusion::{denoise_update, DiffusionPolicy, NoiseSchedule};
pub use env::{AllocEnv, SyntheticSpec, TableEnv};
pub use replay::{Record, ReplayBuffer};
pub use state::{make_state, pool_mask, AllocAction, AllocState, UserInput, UserSlot};
pub use train::{critic_gradient, policy_gradient, train, AddAgent, AddConfig, TrainOutcome, Trainer};
