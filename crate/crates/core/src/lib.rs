//! Part-based CNN facial attribute estimation, unsupervised attribute
//! discovery and attribute-based continuous face authentication.

pub mod adam;
pub mod auth;
pub mod budget;
pub mod checkpoint;
pub mod datapipe;
pub mod discovery;
pub mod heads;
pub mod error;
pub mod netdef;
pub mod pipeline;
pub mod synth;
pub mod ops;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use netdef::{build, count_params, Family, Mode, Network, NetworkSpec};
pub use tensor::Tensor;
