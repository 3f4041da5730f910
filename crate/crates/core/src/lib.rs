//! Maximum smoothed likelihood estimation of a distribution function from
//! interval censored data with separated inspection times.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! asymptotic and simulation layers work in `f64`.

// `!(x > 0)` checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod duality;
pub mod error;
pub mod grid;
pub mod isotonics;
pub mod kernels;
pub mod mle_smle;
pub mod msle_solver;
pub mod quadrature;
pub mod sample;
pub mod scalar;
pub mod simulation;
pub mod smoothing;
pub mod stats;

pub use error::{Error, Result};
pub use grid::{Grid, QuadratureRule};
pub use kernels::Bandwidth;
pub use asymptotics::ObservationModel;
pub use msle_solver::SolverConfig;
pub use simulation::SimDesign;
pub use sample::{CensoredSample, Delta, Record};
pub use scalar::Scalar;
pub use smoothing::SmoothedDensities;

pub type Grid64 = grid::Grid<f64>;
pub type Sample64 = sample::CensoredSample<f64>;
pub type Densities64 = smoothing::SmoothedDensities<f64>;
pub type Estimate64 = duality::MonotoneEstimate<f64>;
