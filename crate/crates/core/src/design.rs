//! Cost-coefficient design.
//!
//! For fixed `(λ, μ)` the Bellman values are the largest `ρ` satisfying
//! `ρ_n <= D_{i,n}` and `ρ_n <= 1 + T_n ρ_{n+1}`. Treating the coefficients as
//! variables too gives the linear program
//!
//! ```text
//! max  ρ_0(s_0) - Σ_i p_i (λ_i α_i + μ_i β_i)
//! s.t. ρ_n(j) <= λ_{1-i} P(H_{1-i}|x_j) + μ_i P(H_i|x_j) Var[Θ_i|H_i,x_j]   n = 1..N, i = 0,1
//!      ρ_n(j) <= 1 + Σ_j' T_n[j,j'] ρ_{n+1}(j')                              n < N
//!      λ, μ >= 0
//! ```
//!
//! There are no stopping rows at `n = 0` since at least one sample is taken.
//!
//! whose optimal coefficients make the unconstrained-optimal policy meet the
//! error constraints, with equality wherever a coefficient is positive.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HypothesisModel;
use crate::network::StateStats;
use crate::policy::cost::stopping_cost_terms;
use crate::policy::{
    backward_induction, evaluate_design_model, evaluate_policy_on_grid, ConditionalKernel, CostCoefficients,
    EvaluationSettings, PolicyMetrics, PolicyTable, PosteriorTable, StateGrid, TransitionOperator,
};

/// Coefficients at or below this are treated as inactive.
pub const ACTIVE_COEFFICIENT: f64 = 1e-6;

/// Tolerated error levels `α_i ∈ (0,1)` and MSE levels `β_i > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorConstraints {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
}

impl ErrorConstraints {
    pub fn new(alpha: [f64; 2], beta: [f64; 2]) -> Result<Self> {
        for a in alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidParameter(format!("error levels must lie in (0,1), got {a}")));
            }
        }
        for b in beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidParameter(format!("MSE levels must be positive and finite, got {b}")));
            }
        }
        Ok(Self { alpha, beta })
    }

    /// `[α_0, α_1, β_0, β_1]`, aligned with [`CostCoefficients::as_array`].
    pub fn as_array(&self) -> [f64; 4] {
        [self.alpha[0], self.alpha[1], self.beta[0], self.beta[1]]
    }
}

/// Hypothesis index that each of `[λ_0, λ_1, μ_0, μ_1]` prices.
const COEFFICIENT_HYPOTHESIS: [usize; 4] = [0, 1, 0, 1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub constraints: ErrorConstraints,
    pub horizon: usize,
    pub grid: StateGrid,
    pub n_samp: usize,
    pub seed: u64,
    /// Solver tolerance; LP/induction agreement is checked at ten times this.
    pub tolerance: f64,
    pub evaluation: EvaluationSettings,
}

impl DesignSpec {
    pub fn validate(&self) -> Result<()> {
        ErrorConstraints::new(self.constraints.alpha, self.constraints.beta)?;
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon N must be at least 1".into()));
        }
        if self.n_samp == 0 {
            return Err(Error::InvalidParameter("n_samp must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidParameter(format!("tolerance must lie in (0,1), got {}", self.tolerance)));
        }
        Ok(())
    }
}

/// Everything design needs about one node: posteriors and frozen kernels on
/// the grid, plus the conditional kernel used for evaluation.
#[derive(Debug, Clone)]
pub struct NodeContext {
    pub node: usize,
    pub grid: StateGrid,
    pub model: HypothesisModel,
    pub posteriors: PosteriorTable,
    pub transitions: TransitionOperator,
    pub truth: ConditionalKernel,
    pub evaluation: EvaluationSettings,
}

impl NodeContext {
    pub fn build(model: &HypothesisModel, stats: &StateStats, node: usize, spec: &DesignSpec) -> Result<Self> {
        spec.validate()?;
        if stats.horizon() != spec.horizon {
            return Err(Error::Mismatch(format!(
                "state statistics cover N = {}, design asks for N = {}",
                stats.horizon(),
                spec.horizon
            )));
        }
        let started = Instant::now();
        let posteriors = PosteriorTable::build(model, stats, node, &spec.grid)?;
        let transitions = TransitionOperator::build(model, stats, node, &spec.grid, spec.n_samp, spec.seed)?;
        log::debug!(
            "node {node}: kernels built in {:.2?} ({} nonzeros)",
            started.elapsed(),
            transitions.nnz()
        );
        Ok(Self {
            node,
            grid: spec.grid,
            model: *model,
            posteriors,
            transitions,
            truth: ConditionalKernel::build(stats, node, spec.evaluation.kernel)?,
            evaluation: spec.evaluation,
        })
    }

    pub fn horizon(&self) -> usize {
        self.transitions.horizon()
    }

    pub fn policy(&self, coefficients: &CostCoefficients) -> Result<PolicyTable> {
        backward_induction(self.node, &self.grid, coefficients, &self.transitions, &self.posteriors)
    }

    /// Hypothesis-conditional grid evaluation under the evaluation kernel.
    pub fn evaluate(&self, policy: &PolicyTable) -> Result<PolicyMetrics> {
        evaluate_policy_on_grid(policy, &self.model, &self.truth, &self.evaluation)
    }

    /// Posterior-weighted performance under the design kernels.
    pub fn evaluate_design_model(&self, policy: &PolicyTable) -> Result<PolicyMetrics> {
        evaluate_design_model(policy, &self.model, &self.transitions, &self.posteriors)
    }
}

/// `max cᵀx  s.t.  A x <= b,  x_i >= 0 for i in nonnegative`, with `A` in CSR.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub rhs: Vec<f64>,
    pub nonnegative: Vec<usize>,
    pub layout: LpLayout,
}

/// Variable layout: `ρ_n(j)` at `n * M + j`, then `λ_0, λ_1, μ_0, μ_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpLayout {
    pub horizon: usize,
    pub points: usize,
    pub origin: usize,
}

impl LpLayout {
    pub fn rho(&self, n: usize, j: usize) -> usize {
        n * self.points + j
    }

    /// Index of coefficient `c` in `[λ_0, λ_1, μ_0, μ_1]`.
    pub fn coefficient(&self, c: usize) -> usize {
        (self.horizon + 1) * self.points + c
    }
}

impl LpProblem {
    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of `A x <= b` and of the sign constraints.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = (0..self.num_rows()).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum::<f64>() - self.rhs[r]);
        let signs = self.nonnegative.iter().map(|&i| -x[i]);
        rows.chain(signs).fold(0.0, f64::max)
    }

    pub fn coefficients(&self, x: &[f64]) -> CostCoefficients {
        let l = &self.layout;
        CostCoefficients::from_array(std::array::from_fn(|c| x[l.coefficient(c)].max(0.0)))
    }
}

/// Emits the design LP of one node.
pub fn assemble_lp(spec: &DesignSpec, ctx: &NodeContext) -> Result<LpProblem> {
    let origin = ctx.grid.origin_index()?;
    let horizon = ctx.horizon();
    let m = ctx.grid.len();
    let layout = LpLayout {
        horizon,
        points: m,
        origin,
    };
    let num_vars = (horizon + 1) * m + 4;
    let mut lp = LpProblem {
        num_vars,
        objective: vec![0.0; num_vars],
        row_ptr: vec![0],
        cols: Vec::new(),
        vals: Vec::new(),
        rhs: Vec::new(),
        nonnegative: (0..4).map(|c| layout.coefficient(c)).collect(),
        layout,
    };
    lp.objective[layout.rho(0, origin)] = 1.0;
    let levels = spec.constraints.as_array();
    for c in 0..4 {
        lp.objective[layout.coefficient(c)] = -ctx.model.prior_prob(COEFFICIENT_HYPOTHESIS[c]) * levels[c];
    }

    let push_row = |lp: &mut LpProblem, entries: &mut Vec<(usize, f64)>, rhs: f64| {
        entries.sort_unstable_by_key(|e| e.0);
        for &(c, v) in entries.iter() {
            lp.cols.push(c);
            lp.vals.push(v);
        }
        lp.row_ptr.push(lp.cols.len());
        lp.rhs.push(rhs);
        entries.clear();
    };

    let mut entries = Vec::new();
    for n in 1..=horizon {
        for j in 0..m {
            let post = ctx.posteriors.at(n, j);
            for i in 0..2 {
                let (det, est) = stopping_cost_terms(&post, i);
                entries.push((layout.rho(n, j), 1.0));
                entries.push((layout.coefficient(1 - i), -det));
                entries.push((layout.coefficient(2 + i), -est));
                push_row(&mut lp, &mut entries, 0.0);
            }
        }
    }
    for n in 0..horizon {
        let kernel = ctx.transitions.step(n);
        for j in 0..m {
            entries.push((layout.rho(n, j), 1.0));
            for (c, w) in kernel.row(j) {
                entries.push((layout.rho(n + 1, c), -w));
            }
            push_row(&mut lp, &mut entries, 1.0);
        }
    }
    Ok(lp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: String,
    pub iterations: u32,
    pub solve_time: f64,
}

/// Any exact LP solver: standard-form sparse LP in, primal solution out.
pub trait LpSolver: Sync {
    fn name(&self) -> &str;
    fn solve(&self, lp: &LpProblem) -> Result<LpSolution>;
}

/// Interior-point solver backed by Clarabel.
#[derive(Debug, Clone, Copy)]
pub struct ClarabelSolver {
    pub tolerance: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl ClarabelSolver {
    pub fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            max_iter: 200,
            verbose: false,
        }
    }
}

impl LpSolver for ClarabelSolver {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve(&self, lp: &LpProblem) -> Result<LpSolution> {
        let n = lp.num_vars;
        let rows = lp.num_rows() + lp.nonnegative.len();
        // A x + s = b, s >= 0, in CSC.
        let mut counts = vec![0usize; n + 1];
        for &c in &lp.cols {
            counts[c + 1] += 1;
        }
        for &i in &lp.nonnegative {
            counts[i + 1] += 1;
        }
        for c in 0..n {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let nnz = counts[n];
        let mut rowval = vec![0usize; nnz];
        let mut nzval = vec![0.0; nnz];
        for r in 0..lp.num_rows() {
            for (c, v) in lp.row(r) {
                rowval[next[c]] = r;
                nzval[next[c]] = v;
                next[c] += 1;
            }
        }
        for (k, &i) in lp.nonnegative.iter().enumerate() {
            rowval[next[i]] = lp.num_rows() + k;
            nzval[next[i]] = -1.0;
            next[i] += 1;
        }
        let a = CscMatrix::new(rows, n, counts, rowval, nzval);
        let p = CscMatrix::zeros((n, n));
        let q: Vec<f64> = lp.objective.iter().map(|c| -c).collect();
        let mut b = lp.rhs.clone();
        b.extend(std::iter::repeat_n(0.0, lp.nonnegative.len()));
        let cones = [SupportedConeT::NonnegativeConeT(rows)];
        let settings = DefaultSettingsBuilder::default()
            .verbose(self.verbose)
            .max_iter(self.max_iter)
            .tol_gap_abs(self.tolerance)
            .tol_gap_rel(self.tolerance)
            .tol_feas(self.tolerance)
            .build()
            .map_err(|e| Error::Solver(format!("settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::Solver(format!("setup: {e}")))?;
        solver.solve();
        let sol = &solver.solution;
        match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(LpSolution {
                objective: lp.objective_value(&sol.x),
                x: sol.x.clone(),
                status: format!("{:?}", sol.status),
                iterations: sol.iterations,
                solve_time: sol.solve_time,
            }),
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => Err(Error::Solver(format!(
                "LP unbounded ({} variables, {} rows, {} nonzeros): the constraints cannot be met within N samples",
                n,
                lp.num_rows(),
                lp.nnz()
            ))),
            status => Err(Error::Solver(format!(
                "status {status:?} after {} iterations ({} variables, {} rows, {} nonzeros)",
                sol.iterations,
                n,
                lp.num_rows(),
                lp.nnz()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solver: String,
    pub status: String,
    pub iterations: u32,
    pub solve_time: f64,
    pub variables: usize,
    pub constraints: usize,
    pub nonzeros: usize,
}

/// Result of designing one node.
#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub node: usize,
    pub method: DesignMethod,
    pub coefficients: CostCoefficients,
    pub policy: PolicyTable,
    /// Dual objective `ρ_0(s_0) - Σ p_i (λ_i α_i + μ_i β_i)`.
    pub objective: f64,
    /// `ρ_0(s_0)` as reported by the optimizer.
    pub rho0_solver: f64,
    /// `ρ_0(s_0)` from backward induction with the returned coefficients.
    pub rho0_induction: f64,
    /// Posterior-weighted metrics under the design kernels.
    pub design_metrics: PolicyMetrics,
    /// Hypothesis-conditional metrics under the evaluation kernel.
    pub evaluated: PolicyMetrics,
    pub solver: Option<SolverReport>,
    pub trajectory: Vec<DualAscentIterate>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignMethod {
    LinearProgram,
    CuttingPlane,
    DualAscent,
}

impl DesignOutcome {
    /// One structured record for the design log.
    pub fn report(&self, constraints: &ErrorConstraints) -> DesignReport {
        DesignReport {
            node: self.node,
            method: self.method,
            coefficients: self.coefficients,
            objective: self.objective,
            rho0_solver: self.rho0_solver,
            rho0_induction: self.rho0_induction,
            constraints: *constraints,
            evaluated: self.evaluated,
            design_model: self.design_metrics,
            solver: self.solver.clone(),
            converged: self.converged,
            iterations: self.trajectory.len(),
            trajectory: self.trajectory.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub node: usize,
    pub method: DesignMethod,
    pub coefficients: CostCoefficients,
    pub objective: f64,
    pub rho0_solver: f64,
    pub rho0_induction: f64,
    pub constraints: ErrorConstraints,
    pub evaluated: PolicyMetrics,
    pub design_model: PolicyMetrics,
    pub solver: Option<SolverReport>,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trajectory: Vec<DualAscentIterate>,
}

/// Solves the design LP and rebuilds the policy with the optimal coefficients.
pub fn solve_coefficients(spec: &DesignSpec, ctx: &NodeContext, solver: &dyn LpSolver) -> Result<DesignOutcome> {
    let lp = assemble_lp(spec, ctx)?;
    let started = Instant::now();
    let solution = solver.solve(&lp)?;
    log::info!(
        "node {}: {} solved {} x {} LP ({} nonzeros) in {:.2?}, {} iterations",
        ctx.node,
        solver.name(),
        lp.num_rows(),
        lp.num_vars,
        lp.nnz(),
        started.elapsed(),
        solution.iterations
    );
    let coefficients = lp.coefficients(&solution.x);
    let policy = ctx.policy(&coefficients)?;
    let origin = lp.layout.origin;
    let rho0_solver = solution.x[lp.layout.rho(0, origin)];
    let rho0_induction = policy.steps[0].value[origin];
    let tol = 10.0 * spec.tolerance * rho0_induction.abs().max(1.0);
    if (rho0_solver - rho0_induction).abs() > tol {
        return Err(Error::Solver(format!(
            "LP value ρ_0 = {rho0_solver} disagrees with backward induction {rho0_induction} (tolerance {tol:e})"
        )));
    }
    let objective = dual_objective(rho0_induction, &coefficients, &spec.constraints, &ctx.model);
    Ok(DesignOutcome {
        node: ctx.node,
        method: DesignMethod::LinearProgram,
        coefficients,
        design_metrics: ctx.evaluate_design_model(&policy)?,
        evaluated: ctx.evaluate(&policy)?,
        policy,
        objective,
        rho0_solver,
        rho0_induction,
        solver: Some(SolverReport {
            solver: solver.name().to_string(),
            status: solution.status,
            iterations: solution.iterations,
            solve_time: solution.solve_time,
            variables: lp.num_vars,
            constraints: lp.num_rows(),
            nonzeros: lp.nnz(),
        }),
        trajectory: Vec::new(),
        converged: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuttingPlaneSettings {
    /// Stop once the model's upper bound is within `tolerance · max(1, |F|)`
    /// of the best value found.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for CuttingPlaneSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iters: 500,
        }
    }
}

/// Solves the same LP through its four-dimensional dual function
///
/// ```text
/// F(x) = ρ_0(s_0; x) - Σ_c p_c level_c x_c,
/// ```
///
/// which is concave and piecewise linear. Backward induction evaluates
/// `ρ_0`, and the design-model metrics of its policy give the supergradient
/// `p_c (e_c - level_c)`, so Kelley's method converges to the LP optimum
/// without assembling the full constraint matrix. The search box starts at
/// `x_c <= N / (p_c level_c)` and grows tenfold whenever the optimum touches it.
pub fn solve_coefficients_cutting_plane(
    spec: &DesignSpec,
    ctx: &NodeContext,
    settings: &CuttingPlaneSettings,
) -> Result<DesignOutcome> {
    let origin = ctx.grid.origin_index()?;
    let started = Instant::now();
    let levels = spec.constraints.as_array();
    let weight: [f64; 4] = std::array::from_fn(|c| ctx.model.prior_prob(COEFFICIENT_HYPOTHESIS[c]) * levels[c]);

    let probe = |x: [f64; 4]| -> Result<(f64, [f64; 4], f64)> {
        let coefficients = CostCoefficients::from_array(x);
        let policy = ctx.policy(&coefficients)?;
        let metrics = ctx.evaluate_design_model(&policy)?;
        let rho0 = policy.steps[0].value[origin];
        let e = metrics.errors();
        let value = rho0 - (0..4).map(|c| weight[c] * x[c]).sum::<f64>();
        let grad = std::array::from_fn(|c| weight[c] / levels[c] * e[c] - weight[c]);
        Ok((value, grad, rho0))
    };

    let (f0, g0, _) = probe([0.0; 4])?;
    let mut upper: [f64; 4] = std::array::from_fn(|c| ctx.horizon() as f64 / weight[c]);
    let mut cuts = vec![([0.0; 4], f0, g0)];
    let mut best = ([0.0f64; 4], f0);
    let mut bound = f64::INFINITY;
    let mut iterations = 0;
    while iterations < settings.max_iters {
        iterations += 1;
        let (x, model_value) = kelley_master(&cuts, &upper)?;
        bound = bound.min(model_value);
        let (value, grad, _) = probe(x)?;
        if value > best.1 {
            best = (x, value);
        }
        cuts.push((x, value, grad));
        if bound - best.1 <= settings.tolerance * best.1.abs().max(1.0) {
            // The bound only holds inside the box; widen it if the optimum touches a face.
            let mut widened = false;
            for c in 0..4 {
                if best.0[c] >= 0.99 * upper[c] {
                    upper[c] *= 10.0;
                    widened = true;
                }
            }
            if !widened {
                break;
            }
            bound = f64::INFINITY;
        }
    }
    let gap = bound - best.1;
    if gap > settings.tolerance * best.1.abs().max(1.0) {
        return Err(Error::NotConverged {
            iterations,
            violation: gap,
        });
    }
    log::info!(
        "node {}: cutting plane converged in {iterations} iterations ({:.2?}), gap {gap:e}",
        ctx.node,
        started.elapsed()
    );
    let coefficients = CostCoefficients::from_array(best.0);
    let policy = ctx.policy(&coefficients)?;
    let rho0 = policy.steps[0].value[origin];
    Ok(DesignOutcome {
        node: ctx.node,
        method: DesignMethod::CuttingPlane,
        coefficients,
        design_metrics: ctx.evaluate_design_model(&policy)?,
        evaluated: ctx.evaluate(&policy)?,
        policy,
        objective: best.1,
        rho0_solver: bound + (0..4).map(|c| weight[c] * best.0[c]).sum::<f64>(),
        rho0_induction: rho0,
        solver: Some(SolverReport {
            solver: "cutting-plane".into(),
            status: "Solved".into(),
            iterations: iterations as u32,
            solve_time: started.elapsed().as_secs_f64(),
            variables: 4,
            constraints: cuts.len(),
            nonzeros: 0,
        }),
        trajectory: Vec::new(),
        converged: true,
    })
}

/// `max t  s.t.  t <= f_k + g_k·(x - x_k),  0 <= x <= upper`.
fn kelley_master(cuts: &[([f64; 4], f64, [f64; 4])], upper: &[f64; 4]) -> Result<([f64; 4], f64)> {
    // Variables (x_0..x_3, t); rows: cuts, upper bounds, sign.
    let rows = cuts.len() + 8;
    let mut triplets: (Vec<usize>, Vec<usize>, Vec<f64>) = (Vec::new(), Vec::new(), Vec::new());
    let mut push = |r: usize, c: usize, v: f64| {
        triplets.0.push(r);
        triplets.1.push(c);
        triplets.2.push(v);
    };
    let mut b = Vec::with_capacity(rows);
    for (r, (x, f, g)) in cuts.iter().enumerate() {
        for c in 0..4 {
            push(r, c, -g[c]);
        }
        push(r, 4, 1.0);
        b.push(f - (0..4).map(|c| g[c] * x[c]).sum::<f64>());
    }
    let r = cuts.len();
    for c in 0..4 {
        push(r + c, c, 1.0);
        b.push(upper[c]);
    }
    for c in 0..4 {
        push(r + 4 + c, c, -1.0);
        b.push(0.0);
    }
    let a = CscMatrix::new_from_triplets(rows, 5, triplets.0, triplets.1, triplets.2);
    let p = CscMatrix::zeros((5, 5));
    let q = [0.0, 0.0, 0.0, 0.0, -1.0];
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-12)
        .tol_gap_rel(1e-12)
        .tol_feas(1e-12)
        .build()
        .map_err(|e| Error::Solver(format!("settings: {e:?}")))?;
    let cones = [SupportedConeT::NonnegativeConeT(rows)];
    let mut solver =
        DefaultSolver::new(&p, &q, &a, &b, &cones, settings).map_err(|e| Error::Solver(format!("setup: {e}")))?;
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let x = std::array::from_fn(|c| sol.x[c].clamp(0.0, upper[c]));
            Ok((x, sol.x[4]))
        }
        status => Err(Error::Solver(format!("cutting-plane master problem: {status:?}"))),
    }
}

/// `ρ_0 - Σ_i p_i (λ_i α_i + μ_i β_i)`.
pub fn dual_objective(
    rho0: f64,
    coefficients: &CostCoefficients,
    constraints: &ErrorConstraints,
    model: &HypothesisModel,
) -> f64 {
    let c = coefficients.as_array();
    let levels = constraints.as_array();
    rho0 - (0..4)
        .map(|k| model.prior_prob(COEFFICIENT_HYPOTHESIS[k]) * c[k] * levels[k])
        .sum::<f64>()
}

/// Which performance numbers drive the dual ascent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AscentTarget {
    /// Hypothesis-conditional grid evaluation.
    #[default]
    Evaluated,
    /// Posterior-weighted metrics under the design kernels: exact
    /// supergradients of the LP's dual function.
    DesignModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualAscentSettings {
    /// Iterations driven by `target`.
    pub max_iters: usize,
    /// Cheap warm-up iterations on the design-model dual; 0 disables.
    pub warmup_iters: usize,
    /// Initial log-scale step.
    pub initial_step: f64,
    /// Relative tolerance on `error / constraint - 1`.
    pub rel_tol: f64,
    pub target: AscentTarget,
}

impl Default for DualAscentSettings {
    fn default() -> Self {
        Self {
            max_iters: 40,
            warmup_iters: 800,
            initial_step: 0.5,
            rel_tol: 0.02,
            target: AscentTarget::Evaluated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualAscentIterate {
    pub target: AscentTarget,
    pub coefficients: CostCoefficients,
    pub errors: [f64; 4],
    pub asn: f64,
    /// Dual objective for design-model iterates, `-(ASN + N Σ violations)`
    /// for evaluated ones; larger is better.
    pub score: f64,
    pub step: [f64; 4],
}

/// Largest relative complementary-slackness residual: `|e/c - 1|` for active
/// coefficients, `max(0, e/c - 1)` for inactive ones.
pub fn slackness_residual(coefficients: &CostCoefficients, errors: &[f64; 4], constraints: &ErrorConstraints) -> f64 {
    let c = coefficients.as_array();
    let levels = constraints.as_array();
    (0..4)
        .map(|k| {
            let rel = errors[k] / levels[k] - 1.0;
            if c[k] > ACTIVE_COEFFICIENT {
                rel.abs()
            } else {
                rel.max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

struct Phase {
    target: AscentTarget,
    iters: usize,
    step: f64,
    growth: f64,
    max_step: f64,
    rel_tol: f64,
}

struct PhaseResult {
    best: usize,
    converged: bool,
}

/// One ascent phase; appends its iterates to `trajectory`.
fn ascend(
    spec: &DesignSpec,
    ctx: &NodeContext,
    start: [f64; 4],
    phase: &Phase,
    trajectory: &mut Vec<DualAscentIterate>,
) -> Result<PhaseResult> {
    let levels = spec.constraints.as_array();
    let origin = ctx.grid.origin_index()?;
    let horizon = ctx.horizon() as f64;
    let weight: [f64; 4] = std::array::from_fn(|c| ctx.model.prior_prob(COEFFICIENT_HYPOTHESIS[c]) * levels[c]);
    // A coefficient worth one sample when its constraint is met with equality.
    let unit: [f64; 4] = std::array::from_fn(|c| 1.0 / weight[c]);
    let mut x = start;
    let mut step = [phase.step; 4];
    let mut last_sign = [0i8; 4];
    let first = trajectory.len();
    let mut best = first;
    for iter in 0..phase.iters {
        let coefficients = CostCoefficients::from_array(x);
        let policy = ctx.policy(&coefficients)?;
        let metrics = match phase.target {
            AscentTarget::Evaluated => ctx.evaluate(&policy)?,
            AscentTarget::DesignModel => ctx.evaluate_design_model(&policy)?,
        };
        let errors = metrics.errors();
        let score = match phase.target {
            AscentTarget::DesignModel => {
                policy.steps[0].value[origin] - (0..4).map(|c| weight[c] * x[c]).sum::<f64>()
            }
            AscentTarget::Evaluated => {
                let violation: f64 = (0..4).map(|c| (errors[c] / levels[c] - 1.0).max(0.0)).sum();
                -(metrics.asn + horizon * violation)
            }
        };
        log::debug!(
            "dual ascent node {} {:?} iter {iter}: x = {x:?}, errors = {errors:?}",
            ctx.node,
            phase.target
        );
        trajectory.push(DualAscentIterate {
            target: phase.target,
            coefficients,
            errors,
            asn: metrics.asn,
            score,
            step,
        });
        let here = trajectory.len() - 1;
        if score > trajectory[best].score {
            best = here;
        }
        if slackness_residual(&coefficients, &errors, &spec.constraints) <= phase.rel_tol {
            return Ok(PhaseResult {
                best: here,
                converged: true,
            });
        }
        for c in 0..4 {
            let ratio = errors[c] / levels[c];
            let sign: i8 = if ratio > 1.0 {
                1
            } else if ratio < 1.0 {
                -1
            } else {
                0
            };
            if sign != 0 && last_sign[c] != 0 {
                step[c] = if sign == last_sign[c] {
                    (step[c] * phase.growth).min(phase.max_step)
                } else {
                    step[c] * 0.5
                };
            }
            if sign != 0 {
                last_sign[c] = sign;
            }
            if x[c] <= 0.0 {
                if ratio > 1.0 {
                    x[c] = unit[c];
                }
                continue;
            }
            let log_ratio = if ratio > 0.0 { ratio.ln().clamp(-2.0, 2.0) } else { -2.0 };
            x[c] *= (step[c] * log_ratio).exp();
            if x[c] < 1e-8 * unit[c] && ratio < 1.0 {
                x[c] = 0.0;
            }
        }
    }
    Ok(PhaseResult { best, converged: false })
}

/// Relative dual gap at which the ellipsoid warm-up stops.
const WARMUP_GAP: f64 = 1e-7;

/// Central-cut ellipsoid maximization of the design-model dual
/// `F(x) = ρ_0(x) - Σ_c p_c level_c x_c` over `x >= 0`, in coordinates scaled
/// so that one unit of `x_c` is worth one sample. Returns the best point.
fn ellipsoid_warmup(
    spec: &DesignSpec,
    ctx: &NodeContext,
    iters: usize,
    trajectory: &mut Vec<DualAscentIterate>,
) -> Result<[f64; 4]> {
    use nalgebra::{Matrix4, Vector4};
    let levels = spec.constraints.as_array();
    let origin = ctx.grid.origin_index()?;
    let weight: [f64; 4] = std::array::from_fn(|c| ctx.model.prior_prob(COEFFICIENT_HYPOTHESIS[c]) * levels[c]);
    let radius = 100.0 * ctx.horizon() as f64;
    let dim = 4.0;
    let mut center = Vector4::repeat(0.5 * radius);
    let mut shape = Matrix4::identity() * (radius * radius * dim);
    let mut upper = f64::INFINITY;
    // Value and scaled supergradient `(e_c / level_c - 1)` at `x`.
    let mut probe = |x: [f64; 4], width: &dyn Fn(&Vector4<f64>) -> f64| -> Result<(f64, Vector4<f64>, f64)> {
        let coefficients = CostCoefficients::from_array(x);
        let policy = ctx.policy(&coefficients)?;
        let metrics = ctx.evaluate_design_model(&policy)?;
        let errors = metrics.errors();
        let value = policy.steps[0].value[origin] - (0..4).map(|c| weight[c] * x[c]).sum::<f64>();
        let g = Vector4::from_fn(|c, _| errors[c] / levels[c] - 1.0);
        let w = width(&g);
        trajectory.push(DualAscentIterate {
            target: AscentTarget::DesignModel,
            coefficients,
            errors,
            asn: metrics.asn,
            score: value,
            step: [w; 4],
        });
        Ok((value, g, w))
    };
    // A nonpositive supergradient at the origin certifies it as the maximum.
    let (value, g, _) = probe([0.0; 4], &|_| 0.0)?;
    let mut best = ([0.0; 4], value);
    if g.iter().all(|&gc| gc <= 0.0) {
        return Ok(best.0);
    }
    for _ in 0..iters {
        // Cut direction `h` keeps `{y : h·(y - center) <= 0}`.
        let h = if let Some(c) = (0..4).find(|&c| center[c] < 0.0) {
            -Vector4::ith(c, 1.0)
        } else {
            let x: [f64; 4] = std::array::from_fn(|c| center[c] / weight[c]);
            let (value, g, width) = probe(x, &|g| (g.transpose() * shape * g)[0].max(0.0).sqrt())?;
            upper = upper.min(value + width);
            if value > best.1 {
                best = (x, value);
            }
            if upper - best.1 <= WARMUP_GAP * best.1.abs().max(1.0) {
                break;
            }
            -g
        };
        let ph = shape * h;
        let norm = h.dot(&ph).sqrt();
        if !(norm > 0.0) {
            break;
        }
        let b = ph / norm;
        center -= b / (dim + 1.0);
        shape = (shape - b * b.transpose() * (2.0 / (dim + 1.0))) * (dim * dim / (dim * dim - 1.0));
    }
    log::debug!(
        "node {}: ellipsoid warm-up reached dual value {} (bound {upper})",
        ctx.node,
        best.1
    );
    Ok(best.0)
}

/// Projected subgradient ascent on `(λ, μ)`.
///
/// The supergradient of the dual in coordinate `c` is `p_i (e_c - level_c)`.
/// Steps are diagonally scaled by `x_c / (p_i level_c)` and taken in log
/// space, `x_c ← x_c exp(η_c clamp(ln(e_c / level_c), ±2))`, so coefficients
/// spanning several orders of magnitude move at comparable rates. A
/// coefficient at zero is reactivated at the value of one sample as soon as
/// its constraint is violated and is projected back to zero once it falls far
/// below that while its constraint is slack. Per-coordinate steps halve
/// whenever the sign of the violation flips.
///
/// A warm-up phase maximizes the design-model dual, whose iterations are
/// cheap and whose supergradients are exact, with the central-cut ellipsoid
/// method; the main phase then follows the `target` metrics from the best
/// warm-up point.
pub fn dual_ascent_fallback(
    spec: &DesignSpec,
    ctx: &NodeContext,
    settings: &DualAscentSettings,
) -> Result<DesignOutcome> {
    let mut trajectory = Vec::new();
    let mut start = [0.0; 4];
    if settings.warmup_iters > 0 {
        start = ellipsoid_warmup(spec, ctx, settings.warmup_iters, &mut trajectory)?;
    }
    let main = Phase {
        target: settings.target,
        iters: settings.max_iters,
        step: settings.initial_step,
        growth: 1.0,
        max_step: settings.initial_step,
        rel_tol: settings.rel_tol,
    };
    let offset = trajectory.len();
    let r = ascend(spec, ctx, start, &main, &mut trajectory)?;
    let best = if r.best < offset && settings.max_iters > 0 { offset } else { r.best };
    if !r.converged {
        log::warn!(
            "dual ascent for node {} did not reach relative tolerance {} in {} iterations",
            ctx.node,
            settings.rel_tol,
            settings.max_iters
        );
    }
    let coefficients = trajectory[best].coefficients;
    let policy = ctx.policy(&coefficients)?;
    let rho0 = policy.steps[0].value[ctx.grid.origin_index()?];
    Ok(DesignOutcome {
        node: ctx.node,
        method: DesignMethod::DualAscent,
        coefficients,
        objective: dual_objective(rho0, &coefficients, &spec.constraints, &ctx.model),
        rho0_solver: rho0,
        rho0_induction: rho0,
        design_metrics: ctx.evaluate_design_model(&policy)?,
        evaluated: ctx.evaluate(&policy)?,
        policy,
        solver: None,
        trajectory,
        converged: r.converged,
    })
}
