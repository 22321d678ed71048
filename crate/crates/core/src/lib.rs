pub mod autodiff;
pub mod cli;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod filmfit;
pub mod gridmath;
pub mod heatmap;
pub mod imageio;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod sapg;
pub mod synthdata;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use heatmap::Heatmap;
pub use params::ParamSet;
pub use tensor::{Scalar, Tensor};
