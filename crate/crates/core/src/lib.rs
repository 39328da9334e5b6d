//! Embodied world-model video benchmark: trajectory, scene and semantic
//! metrics, benchmark curation, pose conditioning images, a closed-loop
//! rollout driver and the batch evaluation harness.

pub mod closed_loop;
pub mod curation;
pub mod embedding;
pub mod geo;
pub mod harness;
pub mod pose;
pub mod semantic;
pub mod traj;
