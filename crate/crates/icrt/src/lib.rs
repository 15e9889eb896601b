//! In-context imitation learning on a desk-scale simulated tabletop.
//!
//! A causal transformer is trained with next-token prediction on packed
//! multi-task sensorimotor trajectories (prompt-loss masked), then executes
//! unseen task instances by being prompted with demonstration trajectories —
//! no parameter updates at test time.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod geom;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod tensor;

pub mod data;
pub mod model;
pub mod runtime;
pub mod sim;

pub use error::{Error, Result};
