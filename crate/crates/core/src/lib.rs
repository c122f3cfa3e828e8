//! Numerical kernels for the DASSF aerial-detection architecture.
//!
//! The crate implements the architecture's mechanisms as pure tensor
//! operators: DySample dynamic upsampling, triple feature encoding,
//! dynamic scale-sequence fusion, channel/position attention, the DyHead
//! attention triad, and a complete backbone→neck→head→decode→NMS
//! assembly, plus a small reverse-mode tape so every block can be
//! checked against finite differences.

pub mod autodiff;
pub mod context;
pub mod detector;
pub mod dyhead;
pub mod dysample;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod imgio;
pub mod ops;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{ConvParams, Tensor, Tensor64};
