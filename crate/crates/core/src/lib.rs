pub mod data_io;
pub mod error;
pub mod hierarchy;
pub mod online_learning;
pub mod resources;
pub mod tensor_nn;
pub mod training;

pub use error::{Error, Result};
