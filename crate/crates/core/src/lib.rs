//! Reciprocal forward/backward trajectory prediction.
//!
//! Two structurally identical LSTM-GAN predictors are trained jointly: a
//! forward network mapping observed trajectories to futures and a backward
//! network mapping futures to pasts. Each is regularized by how well its
//! partner maps its prediction back. At inference the backward network drives
//! a gradient refinement of the forward prediction ([`attack`]).
//!
//! The crate ships its own reverse-mode autodiff engine ([`graph`]).

pub mod attack;
pub mod baseline;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod par;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Elementwise, Graph, Reduce, Var};
pub use tensor::{Tensor, TensorError};

/// A 2-D position in meters.
pub type Point = [f64; 2];
