//! Flux-qubit annealing with the non-adiabatic geometric term.
//!
//! The pipeline discretizes a continuous-variable circuit Hamiltonian, tracks
//! its lowest levels over the anneal, builds the effective low-energy
//! Hamiltonian `t_f κ̇ H̃ − G` in the instantaneous eigenbasis, maps it to the
//! persistent-current basis and propagates it.

pub mod circuit;
pub mod config;
pub mod computational;
pub mod discretization;
pub mod dynamics;
pub mod eigen;
pub mod error;
pub mod experiment;
pub mod frame;
pub mod pipeline;
pub mod spectral;
pub mod spline;
pub mod system;

pub use circuit::{CircuitParams, Family, FluxConvention, IsingSpec, Kappa, Schedule};
pub use computational::{BasisMap, PauliDecomposition};
pub use config::{load_config, Experiment, RunConfig};
pub use discretization::{Mesh, SparseOperator};
pub use dynamics::{Basis, OdeOptions, Trajectory};
pub use eigen::{EigenOptions, EigenPairs};
pub use error::{Error, Result};
pub use experiment::{run_experiment, Manifest};
pub use frame::EffectiveFrame;
pub use pipeline::{solve_static, PipelineOptions, StaticSolution};
pub use spectral::SpectralSlice;
pub use system::System;
