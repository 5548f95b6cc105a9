//! Reinforcement learning in partially known Markov decision processes.
//!
//! The world's hidden state is split into a part whose dynamics the learner
//! is given (`x`) and a part it knows nothing about (`s`). After each episode
//! the learner sees the interface sequences (Y, Z) exchanged between the two
//! halves. Returns of arbitrary candidate policies are then estimated by
//! weighted importance sampling in which the known half is integrated out
//! exactly ([`severed`]), and the estimate is maximized by conjugate
//! gradient ascent ([`optimizer`]).

pub mod env;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod model;
pub mod optimizer;
pub mod oracle;
pub mod severed;

pub use error::{PkmdpError, Result};
pub use estimator::ExperienceBuffer;
pub use model::{CondTable, Episode, FiniteSpace, FullModel, KnownModel, Policy};
pub use optimizer::OptimizerConfig;
