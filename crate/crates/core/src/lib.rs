pub mod analysis;
pub mod checkpoint;
pub mod crf;
pub mod dataio;
pub mod digest;
pub mod encoder;
pub mod error;
pub mod memory;
pub mod model;
pub mod pnma;
pub mod registry;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use tensor::{Real, Tensor};
