//! Toolkit for in-context instruction-tuning corpora in which the model
//! first judges each in-prompt example as correct or wrong, restates a fixed
//! self-reminder, and then answers.
//!
//! Pipeline: [`corpus`] loads SuperNI task files and samples splits,
//! [`packer`] assembles length-bounded samples rendered by [`templater`],
//! [`loss`] annotates the two supervised spans, [`outparse`] and [`metrics`]
//! score generations, and [`selfinstruct`] synthesizes extra examples.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod outparse;
pub mod packer;
pub mod seed;
pub mod selfinstruct;
pub mod templater;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
