//! Point cloud classification and part segmentation with multi-path
//! feature pyramids fused by cross-level and cross-scale attention.
//!
//! Everything runs on a small reverse-mode autodiff engine over `f64`
//! matrices ([`tensor`]), so the library has no native dependencies and its
//! results are reproducible bit for bit.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod geometry;
pub mod model;
pub mod params;
pub mod pyramid;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{Point3, PointCloud};
pub use model::{Mode, Network, NetworkConfig, Task, Variant};
pub use params::ModelParams;
pub use tensor::{Graph, Tensor, Var};

/// Runnable examples from the guide in `book/`.
#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/tensors.md")]
    pub struct Tensors;
    #[doc = include_str!("../../../book/src/geometry.md")]
    pub struct Geometry;
    #[doc = include_str!("../../../book/src/attention.md")]
    pub struct Attention;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/verification.md")]
    pub struct Verification;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
