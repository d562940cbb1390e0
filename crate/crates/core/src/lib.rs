//! Sequential latent world models and sequential sampling-based planning
//! for cooperative multi-agent control.

pub mod autodiff;
pub mod codec;
pub mod comm;
pub mod worldmodel;
pub mod planner;
pub mod envs;
pub mod harness;
