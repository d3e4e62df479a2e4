//! Numerical laboratory for lightlike scattering on Lorentzian manifolds with
//! timelike boundary.
//!
//! The crate is organized bottom-up:
//!
//! - [`pseries`]: truncated multivariate power series, the scalar type of all
//!   jet computations;
//! - [`metric`]: Lorentzian metric fields, Christoffel symbols and the null
//!   Hamiltonian `H = ½ g^{ij} ξ_i ξ_j`;
//! - [`chart`]: boundary defining functions, boundary parameterizations and frames;
//! - [`geodesic`]: adaptive Dormand–Prince integration of the Hamiltonian flow
//!   with boundary event detection;
//! - [`scatter`]: the scattering relations `S` and `S♯`, null lifts and
//!   escape-time tables;
//! - [`gauge`]: conformal factors and boundary-fixing diffeomorphisms, their
//!   action on metrics and invariance checkers;
//! - [`jetlab`]: boundary normal coordinates, the normalization jet solver,
//!   jet comparison, convexity probes, second fundamental form recovery,
//!   light-cone tensor fits and the jet sensitivity experiment.

pub mod chart;
pub mod error;
pub mod gauge;
pub mod geodesic;
pub mod jetlab;
pub mod linalg;
pub mod metric;
pub mod pseries;
pub mod scatter;

pub use error::{Error, Result};
