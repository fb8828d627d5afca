//! Trajectory-plus-sparse-anchor human motion generation.
//!
//! The crate is organised bottom-up:
//!
//! * [`motion`]: skeleton, motion/trajectory/anchor data model and the `.pmg` container.
//! * [`filter`]: uniform anchor placement under a minimum-gap constraint.
//! * [`curriculum`]: stage-wise schedule of the minimum anchor count.
//! * [`diffusion`]: noise schedule, forward noising and the multistep data-prediction sampler.
//! * [`tape`]: a small matrix-valued reverse-mode autodiff engine.
//! * [`denoiser`]: the five-stage conditional denoiser network.
//! * [`objectives`]: reconstruction, anchor, joint, physical and adversarial losses.
//! * [`metrics`]: MPJPE, K-MPJPE, joint smoothness, diversity, directional consistency, FID.
//! * [`pipeline`]: synthetic data, training loop, sampling, evaluation, checkpoints.

pub mod config;
pub mod curriculum;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod filter;
pub mod metrics;
pub mod motion;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod tape;

pub use error::{Error, Result};
