//! Hybrid stochastic kinetic model of two-dimensional traffic.
//!
//! Along-lane speeds follow a nonlinear Fokker-Planck equation solved with a
//! Chang-Cooper finite-volume scheme; lane changes are a linear relaxation
//! collision operator handled by Monte Carlo. The uncertain desired lateral
//! speed is propagated with Gauss-Legendre stochastic collocation.

pub mod diagram;
pub mod error;
pub mod fp;
pub mod grid;
pub mod hybrid;
pub mod io;
pub mod mc;
pub mod model;
pub mod uq;
pub mod util;
pub mod validation;

pub use error::{Error, Result};
pub use grid::{GridDistribution, MomentSet, VelocityGrid};
pub use model::ModelParams;
