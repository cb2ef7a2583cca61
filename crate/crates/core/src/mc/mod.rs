//! Path simulation and Monte Carlo estimators.

pub mod estimate;
pub mod rng;
pub mod sim;
pub mod spike;

pub use estimate::{estimate_g, estimate_theta, estimates_table, evaluate_cost, Control, McEstimate};
pub use sim::{simulate, simulate_draws, PathBundle, SimConfig, StepPlan};
pub use spike::{spike_variation_batch, spike_variation_test, SpikeQuotient, SpikeReport};
