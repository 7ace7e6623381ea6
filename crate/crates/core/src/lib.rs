//! Diffusion limit of a kinetic equation driven by a finite-state Markov
//! random multiplier, with solvers for both the kinetic model and its
//! stochastic limit and tools for comparing them.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod generator;
pub mod grid;
pub mod harness;
pub mod kinetic;
pub mod noise;
pub mod output;
pub mod spde;
pub mod stats;
pub mod velocity;

pub use error::{Error, Result};
pub use generator::{CorrectorSystem, FunctionalKind, TestFunctional};
pub use grid::{Grid, GridFunction, Shape, Spectral};
pub use kinetic::{KineticField, KineticSolver, OutputPlan, SolverConfig, Trajectory};
pub use noise::{ChainSpec, NoiseModel, NoisePath};
pub use spde::SpdeSolver;
pub use stats::RunningStats;
pub use velocity::{DiffusionMatrix, VelocityModel};
