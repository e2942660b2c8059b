//! Hybrid system identification for control.
//!
//! Pipeline: fit a difference-of-max-affine model to (state, input,
//! successor) triplets, convert it to a linear-complementarity model through
//! the KKT system of its consolidated QP, and solve finite-horizon optimal
//! control problems with complementarity constraints, certifying local
//! optimality by a standard KKT residual.

pub mod bench;
pub mod error;
pub mod ident;
pub mod io;
pub mod lc;
pub mod model;
pub mod ocp;
pub mod qp;

pub use error::{Error, Result};
