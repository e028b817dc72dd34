pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod loss;
pub mod models;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
