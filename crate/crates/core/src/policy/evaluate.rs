//! Deterministic grid evaluation of a policy's error probabilities, MSEs and
//! average sample number.
//!
//! Under each hypothesis the prior of `θ` is cut into bins and the joint mass
//! over `(θ-bin, grid point)` is pushed forward in time with a
//! hypothesis-conditional Gaussian kernel
//!
//! ```text
//! s_{n+1} | s_n, θ ~ N(θ + r_n (s_n - θ), q_n)
//! ```
//!
//! deposited with the same clamped linear-interpolation scheme as the design
//! kernels, but integrated in closed form instead of sampled. Mass that hits
//! a stop region is booked against its decision and removed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::HypothesisModel;
use crate::network::StateStats;
use crate::policy::cost::PosteriorTable;
use crate::policy::table::PolicyTable;
use crate::policy::transition::TransitionOperator;
use crate::policy::StateGrid;

/// Masses below this fraction are not propagated.
const MASS_FLOOR: f64 = 1e-18;

/// Which conditional law of `s_{n+1}^k` given `(s_n^k, θ)` drives evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthKernel {
    /// Gaussian regression on the exact joint law of `(s_n^k, s_{n+1}^k)`:
    /// matches every marginal variance and lag-one covariance of the network
    /// recursion.
    #[default]
    GaussMarkov,
    /// `s̃` and `v̄` independent of `s_n` given `θ`, as in the posterior
    /// predictive used for design.
    Componentwise,
}

/// Per-step regression `r_n` and noise variance `q_n` of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalKernel {
    pub regression: Vec<f64>,
    pub noise_var: Vec<f64>,
}

impl ConditionalKernel {
    pub fn build(stats: &StateStats, node: usize, kind: TruthKernel) -> Result<Self> {
        stats.check_node(node)?;
        let horizon = stats.horizon();
        let w_kk = stats.self_weight(node);
        let innovation = stats.innovation_var(node);
        let (mut regression, mut noise_var) = (Vec::with_capacity(horizon), Vec::with_capacity(horizon));
        for n in 0..horizon {
            let nf = n as f64;
            let (r, q) = match kind {
                TruthKernel::Componentwise => (
                    nf * w_kk / (nf + 1.0),
                    (nf * nf * stats.neighbor_state_var(node, n) + innovation) / (nf + 1.0).powi(2),
                ),
                TruthKernel::GaussMarkov if n == 0 => (0.0, stats.state_var(node, 1)),
                TruthKernel::GaussMarkov => {
                    let var = stats.state_var(node, n);
                    let cov = stats.lag_cov(node, n);
                    let q = stats.state_var(node, n + 1) - cov * cov / var;
                    (cov / var, q.max(0.0))
                }
            };
            regression.push(r);
            noise_var.push(q);
        }
        Ok(Self { regression, noise_var })
    }

    pub fn horizon(&self) -> usize {
        self.regression.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSettings {
    pub theta_bins: usize,
    /// Bins cover `m_i ± theta_span · v_i`.
    pub theta_span: f64,
    pub kernel: TruthKernel,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            theta_bins: 201,
            theta_span: 6.0,
            kernel: TruthKernel::GaussMarkov,
        }
    }
}

/// `α_i`, conditional MSEs `β_i` and the average sample number.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub alpha: [f64; 2],
    pub mse: [f64; 2],
    pub asn: f64,
    /// `E[τ | H_i]`.
    pub asn_given: [f64; 2],
    /// Mass never stopped; zero whenever `Ψ_N ≡ 1`.
    pub residual_mass: f64,
}

impl PolicyMetrics {
    /// `[α_0, α_1, β_0, β_1]`.
    pub fn errors(&self) -> [f64; 4] {
        [self.alpha[0], self.alpha[1], self.mse[0], self.mse[1]]
    }
}

/// Closed-form expected clamped linear-interpolation deposit of a Gaussian,
/// tabulated with cubic Hermite interpolation in the fractional offset.
struct DepositTable {
    sigma: f64,
    lo: f64,
    hi: f64,
    inv_step: f64,
    g: Vec<f64>,
    dg: Vec<f64>,
}

const TABLE_STEPS_PER_SIGMA: f64 = 64.0;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl DepositTable {
    /// `sigma` is the noise standard deviation in grid cells.
    fn new(sigma: f64) -> Self {
        let reach = 9.5 * sigma + 1.0;
        let (lo, hi) = (-reach, 1.0 + reach);
        // Hermite error scales like (step / σ)^4.
        let step = sigma.max(0.05) / TABLE_STEPS_PER_SIGMA;
        let steps = ((hi - lo) / step).ceil() as usize;
        let step = (hi - lo) / steps as f64;
        let mut table = Self {
            sigma,
            lo,
            hi,
            inv_step: 1.0 / step,
            g: Vec::with_capacity(steps + 1),
            dg: Vec::with_capacity(steps + 1),
        };
        for i in 0..=steps {
            let d = lo + i as f64 * step;
            let (g, dg) = table.exact(d);
            table.g.push(g);
            table.dg.push(dg * step);
        }
        table
    }

    /// `G(δ) = E[clamp(δ + Z, 0, 1)]`, `Z ~ N(0, σ²)`, and `G'(δ)`.
    fn exact(&self, d: f64) -> (f64, f64) {
        let s = self.sigma;
        if s < 1e-9 {
            return (d.clamp(0.0, 1.0), if (0.0..1.0).contains(&d) { 1.0 } else { 0.0 });
        }
        let r = |x: f64| x * std_normal_cdf(x / s) + s * std_normal_pdf(x / s);
        (r(d) - r(d - 1.0), std_normal_cdf(d / s) - std_normal_cdf((d - 1.0) / s))
    }

    #[inline]
    fn eval(&self, d: f64) -> f64 {
        if d <= self.lo {
            return 0.0;
        }
        if d >= self.hi {
            return 1.0;
        }
        let u = (d - self.lo) * self.inv_step;
        let i = (u as usize).min(self.g.len() - 2);
        let t = u - i as f64;
        let (p0, p1, m0, m1) = (self.g[i], self.g[i + 1], self.dg[i], self.dg[i + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * p0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * p1 + (t3 - t2) * m1
    }

    /// Adds `mass ×` the deposit of `N(mean, σ²)` (grid coordinates) to `out`.
    #[inline]
    fn deposit(&self, mean: f64, mass: f64, out: &mut [f64]) {
        let m = out.len();
        // C_t = G(mean - t + 1): mass deposited at points >= t.
        let cum = |t: usize| -> f64 {
            if t == 0 {
                1.0
            } else if t >= m {
                0.0
            } else {
                self.eval(mean - t as f64 + 1.0)
            }
        };
        let first = (mean + 1.0 - self.hi).floor().max(1.0) as usize - 1;
        let last = ((mean + 1.0 - self.lo).ceil().max(0.0) as usize).min(m - 1);
        if first > last {
            // Entire mass beyond one boundary.
            let idx = if mean < 0.0 { 0 } else { m - 1 };
            out[idx] += mass;
            return;
        }
        let mut c_here = cum(first);
        for (t, slot) in out.iter_mut().enumerate().take(last + 1).skip(first) {
            let c_next = cum(t + 1);
            *slot += mass * (c_here - c_next);
            c_here = c_next;
        }
    }
}

/// Midpoint quadrature `(θ, weight)` of the prior of `Θ_i`: equal-width bins
/// over `m_i ± theta_span · v_i`, weights renormalized to sum to one.
pub fn theta_bins(model: &HypothesisModel, i: usize, settings: &EvaluationSettings) -> Vec<(f64, f64)> {
    let (m, v) = (model.prior_mean(i), model.prior_std(i));
    let b = settings.theta_bins.max(1);
    let width = 2.0 * settings.theta_span * v / b as f64;
    let lo = m - settings.theta_span * v;
    let mut bins: Vec<(f64, f64)> = (0..b)
        .map(|k| {
            let a = lo + k as f64 * width;
            let w = std_normal_cdf((a + width - m) / v) - std_normal_cdf((a - m) / v);
            (a + 0.5 * width, w)
        })
        .collect();
    let total: f64 = bins.iter().map(|b| b.1).sum();
    bins.iter_mut().for_each(|b| b.1 /= total);
    bins
}

/// Forward-propagates the state distribution of `policy` under each
/// hypothesis. The stopping rule is first consulted at `n = 1`.
pub fn evaluate_policy_on_grid(
    policy: &PolicyTable,
    model: &HypothesisModel,
    kernel: &ConditionalKernel,
    settings: &EvaluationSettings,
) -> Result<PolicyMetrics> {
    let horizon = policy.horizon;
    if kernel.horizon() != horizon {
        return Err(Error::Mismatch(format!(
            "kernel horizon {} vs policy horizon {horizon}",
            kernel.horizon()
        )));
    }
    let grid = &policy.grid;
    let h = grid.spacing();
    let tables: Vec<DepositTable> = kernel.noise_var.iter().map(|q| DepositTable::new(q.sqrt() / h)).collect();

    let mut out = PolicyMetrics::default();
    for i in 0..2 {
        let bins = theta_bins(model, i, settings);
        let per_bin: Vec<[f64; 4]> = bins
            .par_iter()
            .map(|&(theta, weight)| propagate_bin(policy, grid, kernel, &tables, i, theta, weight))
            .collect();
        let mut acc = [0.0; 4];
        for b in per_bin {
            for (a, v) in acc.iter_mut().zip(b) {
                *a += v;
            }
        }
        out.alpha[i] = acc[0];
        out.mse[i] = acc[1];
        out.asn_given[i] = acc[2];
        out.residual_mass = out.residual_mass.max(acc[3]);
    }
    out.asn = model.prior_prob(0) * out.asn_given[0] + model.prior_prob(1) * out.asn_given[1];
    Ok(out)
}

/// Returns `[wrong-decision mass, squared-error mass, Σ n·stopped, residual]`.
fn propagate_bin(
    policy: &PolicyTable,
    grid: &StateGrid,
    kernel: &ConditionalKernel,
    tables: &[DepositTable],
    hypothesis: usize,
    theta: f64,
    weight: f64,
) -> [f64; 4] {
    let m = grid.len();
    let h = grid.spacing();
    let a = grid.lower();
    let mut mass = vec![0.0; m];
    let mut next = vec![0.0; m];
    // n = 0: the regression on s_0 vanishes, so the source location is moot.
    mass[0] = weight;
    let (mut wrong, mut sq, mut time) = (0.0, 0.0, 0.0);
    let floor = weight * MASS_FLOOR;
    for n in 0..policy.horizon {
        next.iter_mut().for_each(|v| *v = 0.0);
        let r = kernel.regression[n];
        for (j, &p) in mass.iter().enumerate() {
            if p <= floor {
                continue;
            }
            let x = if n == 0 { theta } else { grid.value(j) };
            let mean = theta + r * (x - theta);
            tables[n].deposit((mean - a) / h, p, &mut next);
        }
        std::mem::swap(&mut mass, &mut next);
        let step = policy.step(n + 1);
        for j in 0..m {
            let p = mass[j];
            if p == 0.0 || !step.stop[j] {
                continue;
            }
            let decision = usize::from(step.decide[j]);
            if decision != hypothesis {
                wrong += p;
            } else {
                let e = theta - step.estimate(decision)[j];
                sq += p * e * e;
            }
            time += p * (n + 1) as f64;
            mass[j] = 0.0;
        }
    }
    [wrong, sq, time, mass.iter().sum()]
}

/// Bayesian performance of `policy` under the design kernels themselves:
/// stopped mass is split over hypotheses with the posterior weights the
/// stopping costs use. These are the quantities the cost coefficients price
/// in `ρ_0`, so they satisfy complementary slackness exactly.
pub fn evaluate_design_model(
    policy: &PolicyTable,
    model: &HypothesisModel,
    transitions: &TransitionOperator,
    posteriors: &PosteriorTable,
) -> Result<PolicyMetrics> {
    let m = policy.grid.len();
    let origin = policy.grid.origin_index()?;
    let mut mass = vec![0.0; m];
    mass[origin] = 1.0;
    let mut next = vec![0.0; m];
    let mut joint_err = [0.0; 2];
    let mut joint_sq = [0.0; 2];
    let mut time = [0.0; 2];
    for n in 0..policy.horizon {
        transitions.step(n).push_forward(&mass, &mut next);
        std::mem::swap(&mut mass, &mut next);
        let step = policy.step(n + 1);
        for j in 0..m {
            let p = mass[j];
            if p == 0.0 || !step.stop[j] {
                continue;
            }
            let post = posteriors.at(n + 1, j);
            let d = usize::from(step.decide[j]);
            joint_err[1 - d] += p * post.hyp[1 - d];
            joint_sq[d] += p * post.hyp[d] * post.var[d];
            for (i, t) in time.iter_mut().enumerate() {
                *t += p * post.hyp[i] * (n + 1) as f64;
            }
            mass[j] = 0.0;
        }
    }
    let mut out = PolicyMetrics {
        residual_mass: mass.iter().sum(),
        ..Default::default()
    };
    for i in 0..2 {
        let p = model.prior_prob(i);
        out.alpha[i] = joint_err[i] / p;
        out.mse[i] = joint_sq[i] / p;
        out.asn_given[i] = time[i] / p;
    }
    out.asn = time[0] + time[1];
    Ok(out)
}
