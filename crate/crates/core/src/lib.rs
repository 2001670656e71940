//! VideoGraph: graph-inspired long-range activity recognition.
//!
//! Segment features are attended against a set of learned latent concepts
//! (graph nodes); stacked graph-embedding layers then model how those nodes
//! relate across time and to each other. Everything is generic over the
//! floating point type; the aliases below fix it for common use.

pub mod analysis;
pub mod autograd;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use autograd::{Activation, Mode, ParamId, ParamStore, Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape64 = Tape<f64>;
pub type VideoGraph32 = model::VideoGraph<f32>;
pub type VideoGraph64 = model::VideoGraph<f64>;
