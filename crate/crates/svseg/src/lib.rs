//! Human segmentation in video from weak supervision.
//!
//! This crate infers per-pixel human masks for video using only
//! frame-level person detections as supervision. Frames are decomposed
//! into supervoxels, consecutive-frame supervoxel slices become nodes of
//! a spatio-temporal graph, and a binary Markov random field over those
//! nodes — unary potentials from detection-guided proposals plus a
//! per-pixel appearance model, contrast-weighted pairwise potentials,
//! and robust higher-order potentials over supervoxel cliques — is
//! minimized exactly by reduction to s-t min-cut. The masks inferred on
//! key frames are then used as training data for the appearance model,
//! and inference and training alternate for several rounds, improving
//! both together.
//!
//! Module map:
//!
//! - [`videoio`] — frame/mask/detection/proposal file formats and IoU;
//! - [`supervoxel`] — grid-based supervoxel extraction and label maps;
//! - [`stgraph`] — spatio-temporal graph construction and node features;
//! - [`energy`] — potential definitions and exact energy evaluation;
//! - [`solver`] — max-flow/min-cut minimization plus a brute-force oracle;
//! - [`learner`] — the per-pixel linear appearance model;
//! - [`pipeline`] — iterative self-training driver and evaluation;
//! - [`synthgen`] — deterministic synthetic video corpus generator;
//! - [`report`] — run summaries and the experiment table.

mod color;
mod error;

pub mod energy;
pub mod learner;
pub mod pipeline;
pub mod report;
pub mod solver;
pub mod stgraph;
pub mod supervoxel;
pub mod synthgen;
pub mod videoio;

pub use error::{Error, Result};
