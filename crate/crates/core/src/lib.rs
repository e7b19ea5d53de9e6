pub mod cli;
pub mod deform;
pub mod error;
pub mod gcn3d;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod nets;
pub mod rotation;
pub mod tensor;

pub use error::{Error, Result};
