//! Out-of-core neural radiance field with camera-centric parameter
//! interpolation.
//!
//! The scene is represented by three networks (two proposal, one final),
//! each a multiresolution feature grid plus small MLPs. Networks flagged as
//! interpolated anchor their fine feature tables and MLP weights at the
//! vertices of a 2D camera-space grid and blend the four corner sets
//! bilinearly by camera origin. Training walks the grid cell by cell,
//! swapping the four resident parameter sets (and their Adam moments)
//! between memory and disk.

pub mod diffnet;
pub mod error;
pub mod featgrid;
pub mod harness;
pub mod interp;
pub mod num;
pub mod render;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
