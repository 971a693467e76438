//! Bang-bang funnel control of an SIRASD epidemic model.
//!
//! A hysteresis controller switches social distancing on and off from the
//! symptomatic count so that ICU demand stays below capacity.

// Negated comparisons treat NaN as failing the condition.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod constants;
pub mod controller;
pub mod integrator;
pub mod model;
pub mod par;
pub mod scenario_file;
pub mod simulator;

pub use constants::{assess, check_sigma, check_sigma_rob, derive_constants, DerivedConstants};
pub use controller::{control_update, find_feasible_eps, in_cz, ControllerParams, SafetyDistances};
pub use model::{CapacityPolicy, EpidemicParams, InitialState, Input, Scenario, State};
pub use par::Execution;
pub use simulator::{simulate, RunReport, SimConfig, Trajectory};
