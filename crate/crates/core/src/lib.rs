//! Dynamic Laplacian eigenproblems for finite-time coherent sets from
//! trajectory data.
//!
//! Trajectories are triangulated slice by slice, the P1 stiffness matrices
//! of the slices are averaged into a generalized eigenproblem with the mass
//! matrix of the initial slice, and the leading eigenvectors are turned into
//! coherent-set indicators (SEBA) and checked against Cheeger-type bounds.

pub mod cheeger;
pub mod config;
pub mod dynlap;
pub mod eigen;
pub mod flow;
pub mod io;
pub mod mesh;
pub mod pipeline;
pub mod seba;

pub use pipeline::{run_pipeline, PipelineError as Error};
