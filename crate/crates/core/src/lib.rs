//! Simulation and verification toolkit for projected stochastic gradient
//! descent with decreasing step sizes under correlated (mixing) noise.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64` aliases below are the usual entry points.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` also rejects NaN

pub mod analysis;
pub mod error;
pub mod escape;
pub mod linalg;
pub mod lyapunov;
pub mod noise;
pub mod objective;
pub mod optimizer;
pub mod probe;
pub mod scalar;
pub mod seed;
pub mod stats;

pub use analysis::{ConstantsReport, CurveReport, PowerFit};
pub use error::{Error, Result};
pub use escape::{DriftMode, EscapeConfig, StartMode};
pub use noise::{MixingProfile, NoiseKind, NoiseModel};
pub use objective::{NoiseGain, ObjectiveSpec, Perturbation};
pub use optimizer::{ProjectionSet, RunConfig, Trajectory};
pub use scalar::Scalar;

pub type NoiseModelF64 = NoiseModel<f64>;
pub type ObjectiveSpecF64 = ObjectiveSpec<f64>;
pub type ProjectionSetF64 = ProjectionSet<f64>;
pub type RunConfigF64 = RunConfig<f64>;
pub type TrajectoryF64 = Trajectory<f64>;
pub type EscapeConfigF64 = EscapeConfig<f64>;
pub type ConstantsReportF64 = ConstantsReport<f64>;
pub type CurveReportF64 = CurveReport<f64>;

pub type NoiseModelF32 = NoiseModel<f32>;
pub type ObjectiveSpecF32 = ObjectiveSpec<f32>;
pub type RunConfigF32 = RunConfig<f32>;
pub type TrajectoryF32 = Trajectory<f32>;
