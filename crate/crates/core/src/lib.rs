//! Exact state-vector simulation of post-selected nonlinear transformations of
//! probability amplitudes, and the quantum Euler integrator built on top of them.
//!
//! The crate is organised bottom-up:
//!
//! - [`poly`]: sparse polynomial maps and ODE systems with the `z_0 = 1`
//!   padding convention, plus the classical oracle used to check everything else.
//! - [`state`]: amplitude encoding, tensor powers and phase-aligned distances.
//! - [`step`]: the `A` operator, the pointer Hamiltonian and the exact
//!   isometric step followed by ancilla post-selection.
//! - [`driver`]: copy-consuming iteration, resource planning, the Euler
//!   integrator and error propagation under a perturbed step unitary.
//! - [`observables`]: expectation values, sampled readout and Fourier sums.
//! - [`systems`]: built-in model systems.
//! - [`experiment`]: configuration-driven runs used by the `qeuler` binary.

pub mod driver;
pub mod error;
pub mod experiment;
pub mod observables;
pub mod poly;
pub mod rng;
pub mod sparse;
pub mod state;
pub mod step;
pub mod systems;

pub use num_complex::Complex64 as C64;

pub use driver::{
    error_bound, integrate, noise_study, plan_resources, run_deterministic, run_montecarlo,
    NoiseModel, ResourcePlan, RunReport,
};
pub use error::{Error, Result};
pub use observables::{expectation, fourier_spectrum, sample_expectation, Observable};
pub use poly::{euler_map, OdeSystem, PolynomialMap, SampleDomain, ValidationReport};
pub use state::{AmplitudeState, JointState};
pub use step::{quantum_step, StepMode, StepOperator, StepOutcome};
