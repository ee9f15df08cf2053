//! Motion features from maxpool-amplified frame residuals, video-level
//! aggregation by temporal channel shift, and the tooling around them: frame
//! ingest, sparse segment sampling, a Horn–Schunck comparator, a throughput
//! harness and a small two-branch classifier trained on synthetic clips.
//!
//! Kernels are generic over [`Scalar`] (`f32` and `f64`). Storage and
//! training use `f32`; gradient probes run in `f64`.

pub mod bench;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod motion;
pub mod mtf;
pub mod nn;
pub mod ops;
pub mod sampler;
pub mod scalar;
pub mod tensor;
pub mod toynet;
pub mod video_io;
pub mod vla;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Layout, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type MeConfig32 = motion::MeConfig<f32>;
pub type MotionFeatures32 = motion::MotionFeatures<f32>;
pub type GroupWeights32 = vla::GroupWeights<f32>;
pub type FlowField32 = flow::FlowField<f32>;
pub type ToyNet32 = toynet::ToyNet<f32>;
pub type ToyNet64 = toynet::ToyNet<f64>;
