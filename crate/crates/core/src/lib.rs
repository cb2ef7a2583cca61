//! Equilibrium mean-variance investment under jump-diffusions: model types,
//! closed-form and ODE coefficients, a 2-D integro-PDE solver, Monte Carlo
//! estimators and adjoint consistency checks.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod closed_form;
pub mod coeff;
pub mod error;
pub mod fields;
pub mod mc;
pub mod model;
pub mod ode;
pub mod pide;
pub mod quadrature;
pub mod table;

pub use closed_form::{no_jump_reduction, solve_closed_form, ClosedFormSolution};
pub use coeff::CoefficientFn;
pub use error::{Error, Result};
pub use fields::{AnsatzFields, FieldDerivatives, ValueFields};
pub use model::{
    LevyAtom, LevyAtomMeasure, LinearStrategy, MarketParams, MarketSpec, ValidationReport, Violation,
};
pub use ode::{check_identities, evaluate_strategy, integrate_backward, IdentityReport, OdeSolution};
pub use pide::{policy_evaluation, policy_iteration, PideSolution, StateGrid2D};
pub use table::{Cell, Table};
