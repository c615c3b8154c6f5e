//! Underdamped Langevin MCMC with friction 2 and inverse mass `1/L`: the exact
//! Gaussian transition kernel, step-size planning, ensemble sampling, coupling
//! experiments, W₂ metrics and an overdamped baseline.

pub mod baseline;
pub mod config;
pub mod coupling;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod law;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use kernel::{ChainState, KernelCoefficients};
pub use model::{GradientOracle, NoisyGradientOracle, TargetModel, TargetSpec};
pub use planner::{plan, plan_epochs, plan_fixed, plan_stochastic, EpochSchedule, ProblemSpec, SamplerPlan};
pub use sampler::{run, run_epochs, EnsembleSnapshot, RunConfig, Schedule, Trace};
