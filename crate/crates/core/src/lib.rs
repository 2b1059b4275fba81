//! Numerical laboratory for Stokes flow in randomly perforated domains.
//!
//! The crate covers the whole pipeline: sampling a marked Poisson process of
//! holes, building the hierarchical covering of clustered holes, the set
//! algebra of the covering chain, capacity bounds, the compatible extension
//! of a pressure test source, and a staggered-grid Stokes/Brinkman layer with
//! a discrete Bogovskii (right inverse of the divergence) solver.
//!
//! Data-parallel loops (Monte Carlo blocks, grid stencils, per-seed sweeps)
//! run on rayon when the `parallel` feature is enabled (the default) and fall
//! back to plain iterators otherwise. Results are bit-identical either way.

pub mod capacity;
pub mod chain;
pub mod covering;
pub mod error;
pub mod exec;
pub mod extension;
pub mod geometry;
pub mod linalg;
pub mod point_process;
pub mod region;
pub mod rng;
pub mod stokes;

pub use error::{Error, Result};
