//! Dynamic Gaussian flow analysis and vector-controlled Gaussian splatting.
//!
//! The crate is organised along the processing pipeline:
//!
//! * [`scene`] holds Gaussians, cameras, scripted motion and the synthetic
//!   scene simulator used as ground truth.
//! * [`render`] projects Gaussians to splats and alpha-composites color,
//!   depth, accumulated alpha and the dynamic Gaussian flow channel.
//! * [`flow`] implements the camera-flow / Gaussian-flow / residual
//!   decomposition of optical flow, `.flo` I/O and a finite-difference oracle.
//! * [`dataset`] simulates preset frame sequences and reads and writes run
//!   directories of frames, poses and flows.
//! * [`discovery`] finds dynamic Gaussians from flow masks, clusters them with
//!   HDBSCAN and extracts per-cluster trajectories.
//! * [`control`] encodes control vectors, evaluates deformation networks and
//!   renders controlled scenes.
//! * [`train`] contains the losses, analytic backward pass, Adam and the two
//!   training stages.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iterators otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod control;
pub mod dataset;
pub mod discovery;
pub mod exec;
pub mod flow;
pub mod math;
pub mod render;
pub mod scene;
pub mod train;

mod error;

pub use error::{Error, Result};
