//! Constrained Q-learning for stochastic batch processes.

pub mod agent;
pub mod calibrate;
pub mod config;
pub mod error;
pub mod es;
pub mod eval;
pub mod memory;
pub mod nmpc;
pub mod nnet;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/environments.md")]
    mod environments {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/tuning.md")]
    mod tuning {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/nmpc.md")]
    mod nmpc {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
