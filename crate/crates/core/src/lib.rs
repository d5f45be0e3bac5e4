//! Multi-view texture mapping for triangle meshes.
//!
//! The pipeline selects a few source views per face with loopy belief
//! propagation on the face adjacency graph, blends them with
//! distance-transform weights and packs the result into texture atlases.
//! Synthetic scene generation and image metrics support evaluation.

pub mod atlas;
pub mod blend;
pub mod camera;
pub mod dt;
pub mod eval;
pub mod mesh;
pub mod mrf;
pub mod par;
pub mod pipeline;
pub mod quality;
pub mod raster;
pub mod sample;
pub mod synth;
pub mod visibility;
