//! Mixed-integer encoding and branch-and-bound solver.

use thiserror::Error;

mod bnb;
mod encode;
pub mod export;
mod kkt;
mod plan;
mod presolve;
pub mod qp;
pub mod sparse;

pub use bnb::{
    solve_miqp, solve_miqp_seeded, solve_qp_relaxation, BnbOptions, MiqpSolution, RelaxStatus, Relaxation, SolverStats,
};
pub use encode::{audit, encode, EncodeAudit, MiqpProblem, ModeAudit, StateRowAudit, VarMap};
pub use plan::{branch_and_bound, prepare, solve_plan, PlanSolution, PlannedRun, PLAN_SCHEMA};
pub use presolve::tighten_big_m;

use crate::chance::ChanceError;
use qp::QpError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MiqpError {
    #[error(
        "complementarity row {row} at step {step} admits neither mode at theta = {theta:.3e} \
         (contact needs theta > {contact_threshold:.3e}, separation needs theta > {separation_threshold:.3e})"
    )]
    InfeasibleByLemma1 { step: usize, row: usize, theta: f64, contact_threshold: f64, separation_threshold: f64 },
    #[error("tightened window {upper} / {lower} at step {step} is empty (width {width:.3e})")]
    EmptyTightenedWindow { upper: String, lower: String, step: usize, width: f64 },
    #[error("no integer-feasible solution")]
    Infeasible,
    #[error("node limit {limit} reached{}", if incumbent.is_some() { " with an incumbent" } else { " without an incumbent" })]
    NodeLimitReached { limit: usize, incumbent: Option<Box<MiqpSolution>> },
    #[error("node limit {limit} reached{}", if incumbent.is_some() { " with an incumbent" } else { " without an incumbent" })]
    PlanNodeLimit { limit: usize, incumbent: Option<Box<PlanSolution>> },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Chance(#[from] ChanceError),
    #[error("{0}")]
    Model(String),
}
