//! Cut-based piecewise-affine (PWA) approximation of multi-dimensional
//! nonlinear functions.
//!
//! A box domain is partitioned by an arrangement of cutting hyperplanes
//! `{x | hᵀx = 1}`, each built from `d` points on the circumscribed
//! hypersphere parameterized by spherical angles. The nonempty chambers of
//! the arrangement are enumerated with tiny feasibility LPs, an affine mode
//! is fitted on every chamber by constrained linear least squares
//! (optionally glued continuously across shared facets), and an outer
//! genetic search over the angles escalates the number of cuts until a
//! user tolerance on the approximation error is met.
//!
//! The crate is organized along the pipeline:
//!
//! * [`geometry`] — domains, hyperspheres, hyperplanes, angle genomes
//! * [`lp`] — self-contained phase-1 simplex feasibility solver
//! * [`partition`] — chamber enumeration, adjacency, region extraction
//! * [`fitting`] — sampling, cost functional, (constrained) affine fits
//! * [`search`] — genetic optimization of cut angles and the escalation loop
//! * [`model`] — the serializable PWA model: evaluation and validation
//! * [`expr`] — expression parser and the builtin benchmark registry

pub use nalgebra;

pub mod expr;
pub mod fitting;
pub mod geometry;
pub mod lp;
pub mod model;
pub mod partition;
pub mod search;

pub use geometry::{AngleGenome, CutArrangement, Domain, Hyperplane, Hypersphere};
pub use model::PwaModel;
pub use search::{SearchConfig, SearchOutcome};
