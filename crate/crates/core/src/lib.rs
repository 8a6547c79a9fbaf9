//! Graph SLAM for 2D LiDAR that keeps glass walls in the map.
//!
//! Glass is nearly invisible to a laser scanner except at near-normal
//! incidence, where it returns a sharp intensity spike. This crate detects
//! those spikes, pins the detected cells inside each submap, and optionally
//! carries them across submaps through a registry of glass points.

pub mod backend;
pub mod config;
pub mod detector;
pub mod eval;
pub mod error;
pub mod frontend;
pub mod geometry;
pub mod glass;
pub mod grid;
pub mod io;
pub mod map;
pub mod matcher;
pub mod pipeline;
pub mod scan;
pub mod sim;
pub mod submap;

pub use error::{Error, Result};
pub use geometry::{normalize_angle, Point, Pose2, Transform2};
