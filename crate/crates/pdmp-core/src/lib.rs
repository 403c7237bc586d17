//! Event-driven simulation of N-particle Boltzmann-type piecewise
//! deterministic Markov processes (free flight, soft-sphere collisions,
//! diffusive boundary reflection), together with the pathwise
//! integration-by-parts machinery used to probe smoothness of the laws of
//! v(t) and x(t): perturbation flows on reduced trajectories, divergence
//! weights, and per-event-order-class density estimation.

pub mod calculus;
pub mod config;
pub mod density;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod linalg;
pub mod parallel;
pub mod quadrature;
pub mod reduced;
pub mod rng;
pub mod simulator;
pub mod smooth;
pub mod stats;
pub mod store;
pub mod verify;

pub use config::{ModelConfig, RunConfig};
pub use error::{CalculusError, KernelError, PathError, RunError};
pub use kernels::Kernels;
pub use simulator::{run_ensemble, simulate_path, Trajectory};
