pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kv;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{Gradients, LayerParams, ParamMap};
pub use tensor::{Rng, Scalar, Tensor};
