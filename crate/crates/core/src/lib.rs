pub mod cli;
pub mod error;
pub mod interaction;
pub mod ldp;
pub mod macro_solver;
pub mod measure;
pub mod sampler;
pub mod seed;
pub mod space;

pub use error::{Error, Result};
