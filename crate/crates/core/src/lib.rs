//! Probe language models for occupational gender stereotypes with
//! counterexample knowledge.
//!
//! The crate generates cloze prompts (a base sentence, optionally preceded
//! by pro-, anti-, neutral, or unrelated knowledge), scores them through a
//! pluggable backend, and measures how each kind of knowledge shifts the
//! probability mass a model assigns to female versus male tokens.
//!
//! Modules follow the data flow:
//! [`registry`] → [`prompt`] → [`scoring`] → [`metrics`] / [`analysis`] →
//! [`report`], wired together by [`pipeline`].

pub mod analysis;
pub mod error;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod prompt;
pub mod registry;
pub mod report;
pub mod scoring;
pub mod verbalizer;

pub use error::{Error, Result};
pub use par::Execution;
