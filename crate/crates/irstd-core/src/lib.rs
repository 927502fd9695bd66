//! Core algorithms for infrared small target detection.
//!
//! The crate implements two detectors over a shared evaluation stack:
//!
//! * a differentiable compression–reconstruction–subtraction network
//!   ([`net`]) built on a minimal reverse-mode tape ([`tape`]), trained
//!   with a combined segmentation + reconstruction loss ([`loss`],
//!   [`train`]);
//! * a classical patch-image low-rank/sparse decomposition baseline
//!   ([`lowrank`]) solved by inexact augmented Lagrangian iteration.
//!
//! [`synth`] generates controllable scenes (low-rank background, Gaussian
//! targets, sensor noise) and [`metrics`] scores predictions with pixel-
//! and object-level measures plus ROC/AUC.
//!
//! The crate is `no_std`-compatible (`alloc` required); all I/O, file
//! formats and the command-line front end live in the companion
//! `irstd-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod blocks;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod lowrank;
pub mod lrrt;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod scalar;
pub mod svd;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
