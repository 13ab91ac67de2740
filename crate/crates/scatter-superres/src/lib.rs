//! Imaging through strongly scattering media with a blindly estimated sensing matrix.
//!
//! The crate covers the whole chain: Foldy-Lax synthesis of array data
//! ([`wavefield`]), blind dictionary learning ([`sparse_dict`]), recovery of the
//! focal-point geometry of the learned columns ([`grid_order`]), consensus
//! clustering of column pools ([`cluster`]), migration imaging and resolution
//! metrics ([`imaging`]), and the CMX1 interchange format plus run orchestration
//! ([`cmx`], [`config`], [`pipeline`]).

pub mod cluster;
pub mod cmx;
pub mod config;
pub mod grid_order;
pub mod imaging;
pub mod linalg;
pub mod pipeline;
pub mod sparse_dict;
pub mod wavefield;

mod error;

// Links the OpenBLAS backend used by `ndarray` products.
extern crate blas_src;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
pub type CMat = ndarray::Array2<C64>;
pub type CVec = ndarray::Array1<C64>;

/// Points are embedded in 3-D as `[cross_range, range, 0]`.
pub type Point3 = [f64; 3];
