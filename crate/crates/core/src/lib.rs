//! Control of status updates at a wireless edge node that serves cached
//! measurements from energy-harvesting sensors.
//!
//! The edge node answers requests for sensor values from its cache and can
//! command a sensor to send a fresh update. Updates cost the sensor one unit
//! of harvested energy and traverse an unreliable channel; serving a request
//! is charged by the age of the cached value. Each sensor's control problem
//! is a finite discounted Markov decision process over battery level, age of
//! information, and the request flag.
//!
//! The crate provides the exact transition kernel, value iteration with
//! policy extraction, tabular Q-learning for the model-free case (with exact
//! or outdated battery observations), a multi-sensor scheduler under a
//! per-slot transmission budget, a slot-level simulator, and structural
//! checks on solved policies. Numeric routines are generic over the scalar
//! type through [`Real`]; the `f64` instantiations get aliases below.

pub mod coupled;
pub mod error;
pub mod export;
pub mod kernel;
pub mod mdp;
pub mod qlearning;
pub mod scalar;
pub mod sim;
pub mod solver;
pub mod structure;

pub use error::{Error, Result};
pub use mdp::{CommandAction, SensorState, StateSpace};
pub use scalar::Real;

/// Per-sensor constants over `f64`.
pub type SensorParams = mdp::SensorParams<f64>;
/// Tabulated transition law over `f64`.
pub type TransitionKernel = kernel::TransitionKernel<f64>;
/// State-value table over `f64`.
pub type ValueTable = solver::ValueTable<f64>;
/// Greedy policy table over `f64`.
pub type PolicyTable = solver::PolicyTable<f64>;
/// Learned action-value table over `f64`.
pub type QTableLearned = qlearning::QTableLearned<f64>;
/// Learner configuration over `f64`.
pub type LearnerConfig = qlearning::LearnerConfig<f64>;
/// Simulation configuration over `f64`.
pub type EnvConfig = sim::EnvConfig<f64>;
/// Episode cost summary over `f64`.
pub type CostReport = sim::CostReport<f64>;
