//! Toolkit for multi-modal (LiDAR + surround-view camera) place recognition.
//!
//! The crate covers the whole desk-scale benchmark loop:
//!
//! - [`geometry`]: rigid poses, pinhole projection and spherical range images.
//! - [`interaction`]: LiDAR to camera sparse depth targets, camera to LiDAR
//!   appearance rendering, and the pseudo-depth to holistic range conversion.
//! - [`losses`]: depth, lazy triplet, reprojection and weighted total losses as
//!   plain scalar functions.
//! - [`benchmark`]: distance-metric and time-metric training tuple mining plus
//!   test ground truth.
//! - [`descriptor`]: a deterministic yaw-invariant baseline descriptor and the
//!   descriptor exchange file.
//! - [`retrieval`]: exact nearest neighbour search and average recall at N.
//! - [`dataio`]: dataset manifest, binary clouds, PPM images, split files and a
//!   synthetic world generator.
//! - [`cli`]: the `fpr` command line front end.
//!
//! Batch work runs through [`exec::Execution`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iterators otherwise.

pub mod benchmark;
pub mod cli;
pub mod dataio;
pub mod descriptor;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod interaction;
pub mod losses;
pub mod retrieval;

pub use error::{Error, Result};
