//! Bandwidth allocation across a semantic-extraction, AIGC-inference and
//! rendering pipeline: the system model, a state sampler, a grid oracle,
//! a small f64 network toolkit, a diffusion policy trained actor-critic,
//! a PPO baseline and the experiment harness around them.

pub mod config;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod ppo;
pub mod report;
pub mod scenario;
pub mod trainer;

pub use error::{Error, Result};
