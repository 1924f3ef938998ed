//! Two-timescale dynamics of gradient flow with small weight decay: test
//! problems, integrators, the slow flow on the minimiser manifold and
//! closed-form references.

pub mod error;
pub mod flows;
pub mod manifold;
pub mod oracles;
pub mod problems;
pub mod rng;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Problem64 = problems::Problem<f64>;
pub type Problem32 = problems::Problem<f32>;
pub type Trajectory64 = flows::Trajectory<f64>;
pub type Trajectory32 = flows::Trajectory<f32>;
pub type Vector64 = nalgebra::DVector<f64>;
pub type Matrix64 = nalgebra::DMatrix<f64>;
