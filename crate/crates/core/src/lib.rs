//! Set-transformer classification of flow-cytometry samples into
//! leukemia lineages (B-ALL, T-ALL, AML).
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod attention;
pub mod cli;
pub mod fcs;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod params;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod training;

pub use scalar::Scalar;
pub use tensor::{Graph, Tensor, TensorError, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = model::FcmFormer<f32>;
pub type Model64 = model::FcmFormer<f64>;
