pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod distortion;
pub mod error;
pub mod gradsuite;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pointcloud;
pub mod projection;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Networks32 = models::Networks<f32>;
pub type Networks64 = models::Networks<f64>;
pub type Checkpoint32 = checkpoint::Checkpoint<f32>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
pub type TrainedModel32 = trainer::TrainedModel<f32>;
pub type TrainedModel64 = trainer::TrainedModel<f64>;
