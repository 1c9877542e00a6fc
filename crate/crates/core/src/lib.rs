pub mod error;
pub mod numerics;
pub mod rng;
pub mod transformer;

pub use error::{Error, Result};
pub mod alignment;
pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod model;
pub mod molecular;
pub mod spectral;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use embedding::Embedding;
pub use model::{Model, ModelConfig};
