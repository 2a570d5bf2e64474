//! Offline reinforcement learning on finite MDPs via relative pessimism.
//!
//! The crate solves the maximin game
//! `max_pi min_{M in version space} J_M(pi) - J_M(pi_ref)`
//! exactly by enumeration on small instances, and also runs the practical
//! adversarial actor-critic iteration over differentiable tabular
//! parameterizations. A version space is the set of candidate MDP models
//! whose fitting loss on an offline dataset is within `alpha` of the best.

pub mod data;
pub mod error;
pub mod mdp;
pub mod synth;

pub use data::{Dataset, DatasetMeta, SampleScheme, Transition};
pub use error::{Error, Result};
pub use mdp::{Occupancy, PolicyTable, TabularMdp, ValueResult};
