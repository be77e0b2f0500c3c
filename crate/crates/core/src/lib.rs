//! Additive Gaussian-process regression under componentwise linear inequality
//! constraints (monotonicity, convexity, bounds), with the MaxMod procedure
//! for choosing active input variables and knot positions.
//!
//! The model approximates each additive component by its piecewise-linear
//! interpolant on a knot subdivision. Constraints on the knot values are then
//! equivalent to constraints on the whole function, so the posterior mode
//! (a quadratic program) and exact-HMC samples of the truncated posterior
//! satisfy them everywhere on `[0, 1]^d`.

pub mod basis;
pub mod bench;
pub mod constraints;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod maxmod;
pub mod model;
pub mod posterior;
pub mod qp;
pub mod registry;
pub mod sampler;

pub use error::{Error, Result};
pub use nalgebra;
