//! Solver kernel for infinite-horizon dynamic discrete choice models with
//! extreme value type I shocks.
//!
//! The same model can be solved through the integrated value function `W`
//! (length `|X|`) or the stacked expected value functions `EV` (length
//! `J|X|`). Successive approximations cost the same in both; a Newton step
//! on `W` factors an `|X| x |X|` system while `EV` needs a `J|X| x J|X|` one.

pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod models;
pub mod mpec;
pub mod operators;
pub mod solvers;

pub use error::{Error, Result};
pub use model::{logsumexp, validate_model, CCPMatrix, EVStack, ModelSpec, ValidationReport, Violation, WVector};
pub use models::{
    build_bus_model, build_storable_goods_model, bus_ev2_diagnostics, BusDiagnostics, BusModelConfig, BusVariant,
    StorableGoodsConfig,
};
pub use operators::{
    apply_gamma, apply_lambda, ccp_from_ev, ccp_from_w, ev_from_w, frechet_gamma, frechet_lambda, w_from_ev,
    GammaDerivative, LambdaDerivative,
};
pub use solvers::{
    expand_reduced_bus, newton_step_ev, newton_step_reduced_bus, newton_step_w, poly_solve, poly_solve_from,
    reduced_bus_operator, solve_reduced_bus, vfi, Formulation, Iterate, Method, ReducedSolve, SolveOptions,
    SolveResult, SolveTrace, SwitchRule, TraceRow,
};
