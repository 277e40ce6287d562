//! Adaptive trust-region reduced-basis optimization for parameterized elliptic problems.
//!
//! The crate is layered bottom-up:
//!
//! - [`model`]: parameter box, parameter-separable forms, the problem container;
//! - [`fem`]: P1 assembly on a structured mesh and the energy product;
//! - [`fom`]: full-order solves, Ĵ_h, gradient and hessian;
//! - [`rom`]: RB spaces and the NCD-corrected reduced functional;
//! - [`estimators`]: a posteriori bounds;
//! - [`optimizer`]: the TR-RB outer loop, its subproblem solvers and a FOM baseline.

pub mod error;
pub mod estimators;
pub mod fem;
pub mod fom;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod par;
pub mod rom;
pub mod toy;

pub use error::{Error, Result};
pub use par::Execution;
