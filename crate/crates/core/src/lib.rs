//! Relativistic Vlasov–Darwin particle simulation with an optimal-transport
//! stability lab.
//!
//! Units have `c = 1`. An [`ensemble::Ensemble`] of weighted phase-space
//! samples `(x, p, w)` carries the density; [`fields`] solves for the
//! scalar and vector potentials, [`dynamics`] integrates the characteristic
//! flow, [`transport`] computes exact W₂ plans, and [`stability`] compares
//! two flows of the same data.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod fields;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod sampling;
pub mod stability;
pub mod transport;
