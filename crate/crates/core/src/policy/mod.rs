//! Per-node optimal stopping: state grid, stopping costs, continuation
//! kernels, Bellman backward induction and deterministic policy evaluation.

pub mod cost;
pub mod evaluate;
pub mod grid;
pub mod table;
pub mod transition;

pub use cost::{g, stopping_cost, CostCoefficients, PointPosterior, PosteriorTable};
pub use evaluate::{
    evaluate_design_model, evaluate_policy_on_grid, theta_bins, ConditionalKernel, EvaluationSettings, PolicyMetrics,
    TruthKernel,
};
pub use grid::StateGrid;
pub use table::{backward_induction, PolicyStep, PolicyTable, STOP_TIE_TOL};
pub use transition::{build_transition_step, SparseKernel, TransitionOperator};
