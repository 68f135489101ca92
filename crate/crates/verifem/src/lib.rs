//! 2D finite element verification toolkit.
//!
//! Solves linear elliptic diffusion problems with conforming P1 elements and
//! certifies the discretization error through recovery, residual and
//! equilibrated-flux estimators, goal-oriented bounds on linear quantities of
//! interest, and indicator-driven h-adaptive refinement.

pub mod adapt;
pub mod config;
pub mod equilibration;
pub mod error;
pub mod mesh;
pub mod fem;
pub mod goal;
pub mod lagrange;
pub mod problems;
pub mod quad;
pub mod recovery;
pub mod residual;
pub mod report;
pub mod runner;
pub mod vtk;
pub mod sparse;

pub use error::VerifemError;
