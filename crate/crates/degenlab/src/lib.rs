//! degenlab — a finite-difference laboratory for Dirichlet problems whose
//! gradient degeneracy switches between two variable exponents.
//!
//! The crate solves equations of the form
//! `H(x, Du) * F(D^2 u) = f` with `H` comparable to
//! `|Du|^p(x) + a(x) |Du|^q(x)`, using monotone wide-stencil discretizations
//! of the extremal (Pucci) operators, a vanishing-viscosity continuation in
//! a regularization parameter, and policy iteration for the inner Bellman
//! solves. On top of the solver sit measurement tools: growth-rate and
//! oscillation profiling, comparison and maximum-principle bounds, explicit
//! barrier constructions, and dead-core / obstacle-problem variants.

pub mod barriers;
pub mod cli;
pub mod error;
pub mod grid;
pub mod model;
pub mod pucci;
pub mod reglab;
pub mod solver;

pub use error::{Error, Result};
