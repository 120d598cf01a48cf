//! Differentiable point-cloud rendering through triple slim feature
//! volumes.
//!
//! A colored point cloud is voxelized ([`pointcloud`]), regrouped along
//! each axis into three slim volumes ([`encoder`]), decoded by three
//! independent 3D UNets ([`decoder`]) and rendered by sampling rays,
//! querying the volumes and compositing a radiance field ([`render`]).
//! [`train`] fits the networks end to end; [`scene`] generates synthetic
//! benchmark scenes and [`metrics`] scores images.

pub mod alloc_track;
pub mod bench;
pub mod decoder;
pub mod encoder;
pub mod eval;
mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pointcloud;
pub mod render;
pub mod scene;
pub mod tensor;
pub mod threads;
pub mod train;

pub use error::{Error, Result};
