//! Spectral graph convolution with learnable discrete Meixner polynomial
//! filters, plus a Chebyshev baseline.
//!
//! The crate is self-contained: a small reverse-mode autodiff tape
//! ([`autodiff`]), sparse graph operators ([`graph`]), the polynomial filter
//! banks ([`poly`]), the two-layer node classifiers ([`model`]), Adam and the
//! training/ablation drivers ([`train`], [`optim`]), and the on-disk dataset
//! and checkpoint formats ([`data`], [`checkpoint`]). [`spectral`] and
//! [`verify`] hold dense reference computations used for self-checks.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod model;
pub mod optim;
pub mod poly;
pub mod spectral;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
