//! Shared oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqjde::model::{normal_pdf, HypothesisModel};
use seqjde::policy::{
    backward_induction, stopping_cost, theta_bins, ConditionalKernel, CostCoefficients, EvaluationSettings,
    PointPosterior, PolicyMetrics, PolicyTable, PosteriorTable, SparseKernel, StateGrid, TransitionOperator,
};
use statrs::distribution::{ContinuousCDF, Normal};

/// A hand-built stopping problem on a three-point grid.
#[derive(Debug, Clone)]
pub struct Toy {
    pub grid: StateGrid,
    pub horizon: usize,
    /// `rows[n][j][k]`, `n = 0..N`.
    pub rows: Vec<Vec<Vec<f64>>>,
    /// `posteriors[n][j]`, `n = 0..=N`.
    pub posteriors: Vec<Vec<PointPosterior>>,
    pub coefficients: CostCoefficients,
}

impl Toy {
    pub fn random(seed: u64, horizon: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 3;
        let rows = (0..horizon)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let raw: Vec<f64> = (0..m)
                            .map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() })
                            .collect();
                        let total: f64 = raw.iter().sum();
                        if total == 0.0 {
                            vec![1.0 / m as f64; m]
                        } else {
                            raw.iter().map(|v| v / total).collect()
                        }
                    })
                    .collect()
            })
            .collect();
        let posteriors = (0..=horizon)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let p1 = rng.random::<f64>();
                        PointPosterior {
                            hyp: [1.0 - p1, p1],
                            mean: [rng.random_range(-3.0..0.0), rng.random_range(0.0..3.0)],
                            var: [rng.random_range(0.01..0.5), rng.random_range(0.01..0.5)],
                        }
                    })
                    .collect()
            })
            .collect();
        let coefficients = CostCoefficients::new(
            [rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)],
            [rng.random_range(0.0..8.0), rng.random_range(0.0..8.0)],
        )
        .unwrap();
        Self {
            grid: StateGrid::new(-2.5, 2.5, 3).unwrap(),
            horizon,
            rows,
            posteriors,
            coefficients,
        }
    }

    pub fn transitions(&self) -> TransitionOperator {
        TransitionOperator::new(self.rows.iter().map(|r| SparseKernel::from_dense(r)).collect()).unwrap()
    }

    pub fn posterior_table(&self) -> PosteriorTable {
        let flat: Vec<PointPosterior> = self.posteriors.iter().flatten().copied().collect();
        PosteriorTable::from_points(self.horizon, self.grid.len(), &flat).unwrap()
    }

    pub fn policy(&self) -> PolicyTable {
        backward_induction(0, &self.grid, &self.coefficients, &self.transitions(), &self.posterior_table()).unwrap()
    }

    fn g(&self, n: usize, j: usize) -> f64 {
        let p = &self.posteriors[n][j];
        stopping_cost(&self.coefficients, p, 0).min(stopping_cost(&self.coefficients, p, 1))
    }

    /// Every stop/continue assignment over `n = 1..N-1`, as `mask[n-1][j]`.
    pub fn assignments(&self) -> Vec<Vec<Vec<bool>>> {
        let m = self.grid.len();
        let bits = m * (self.horizon - 1);
        (0..1u32 << bits)
            .map(|code| {
                (0..self.horizon - 1)
                    .map(|n| (0..m).map(|j| code >> (n * m + j) & 1 == 1).collect())
                    .collect()
            })
            .collect()
    }

    /// Expected cost of continuing from `(n, j)` under `mask`, counting one
    /// unit per sample.
    fn cost_from(&self, mask: &[Vec<bool>], n: usize, j: usize) -> f64 {
        if n == self.horizon || (n > 0 && mask[n - 1][j]) {
            return self.g(n, j);
        }
        1.0 + self.rows[n][j]
            .iter()
            .enumerate()
            .map(|(k, p)| p * self.cost_from(mask, n + 1, k))
            .sum::<f64>()
    }

    /// Minimum over all assignments of the expected cost from `(n, j)`.
    pub fn brute_force_value(&self, n: usize, j: usize) -> f64 {
        self.assignments()
            .iter()
            .map(|a| self.cost_from(a, n, j))
            .fold(f64::INFINITY, f64::min)
    }

    /// `policy` with its stop masks at `n = 1..N-1` replaced by `mask`.
    pub fn with_mask(&self, policy: &PolicyTable, mask: &[Vec<bool>]) -> PolicyTable {
        let mut p = policy.clone();
        for (n, row) in mask.iter().enumerate() {
            p.steps[n + 1].stop = row.clone();
        }
        p
    }
}

/// `E[max(X - a, 0)]`, `X ~ N(mean, sd²)`.
fn ramp(mean: f64, sd: f64, a: f64) -> f64 {
    let z = (mean - a) / sd;
    let n = Normal::standard();
    (mean - a) * n.cdf(z) + sd * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected clamped hat-function weights of `N(mean, sd²)` in grid
/// coordinates on `m` points.
pub fn hat_deposit(mean: f64, sd: f64, m: usize) -> Vec<f64> {
    let last = (m - 1) as f64;
    (0..m)
        .map(|j| {
            let u = j as f64;
            if j == 0 {
                1.0 - ramp(mean, sd, 0.0) + ramp(mean, sd, 1.0)
            } else if j == m - 1 {
                ramp(mean, sd, last - 1.0) - ramp(mean, sd, last)
            } else {
                ramp(mean, sd, u - 1.0) - 2.0 * ramp(mean, sd, u) + ramp(mean, sd, u + 1.0)
            }
        })
        .collect()
}

/// Performance of `policy` by enumerating every grid path under the Gaussian
/// kernel `kernel`, on the same θ quadrature the evaluator uses.
pub fn enumerate_metrics(
    policy: &PolicyTable,
    model: &HypothesisModel,
    kernel: &ConditionalKernel,
    settings: &EvaluationSettings,
) -> PolicyMetrics {
    let grid = &policy.grid;
    let (a, h, m) = (grid.lower(), grid.spacing(), grid.len());
    let mut out = PolicyMetrics::default();
    for i in 0..2 {
        let mut acc = [0.0; 3];
        for (theta, weight) in theta_bins(model, i, settings) {
            // (mass, location) of every live path.
            let mut live = vec![(weight, theta)];
            for n in 0..policy.horizon {
                let step = policy.step(n + 1);
                let sd = kernel.noise_var[n].sqrt() / h;
                let mut next = Vec::new();
                for &(p, x) in &live {
                    let mean = theta + kernel.regression[n] * (x - theta);
                    for (j, w) in hat_deposit((mean - a) / h, sd, m).into_iter().enumerate() {
                        let q = p * w;
                        if !step.stop[j] {
                            next.push((q, grid.value(j)));
                            continue;
                        }
                        let d = usize::from(step.decide[j]);
                        if d != i {
                            acc[0] += q;
                        } else {
                            acc[1] += q * (theta - step.estimate(d)[j]).powi(2);
                        }
                        acc[2] += q * (n + 1) as f64;
                    }
                }
                live = next;
            }
            out.residual_mass = out.residual_mass.max(live.iter().map(|l| l.0).sum());
        }
        out.alpha[i] = acc[0];
        out.mse[i] = acc[1];
        out.asn_given[i] = acc[2];
    }
    out.asn = model.prior_prob(0) * out.asn_given[0] + model.prior_prob(1) * out.asn_given[1];
    out
}

/// Composite Simpson moments `(mass, mean, variance)` of `prior × likelihood`
/// for `Θ_i`.
pub fn quadrature(model: &HypothesisModel, i: usize, s: f64, state_var: f64) -> (f64, f64, f64) {
    let (m, v) = (model.prior_mean(i), model.prior_std(i));
    let (lo, hi) = (m - 14.0 * v, m + 14.0 * v);
    let intervals = 8000;
    let h = (hi - lo) / intervals as f64;
    let mut acc = [0.0; 3];
    for j in 0..=intervals {
        let t = lo + j as f64 * h;
        let w = if j == 0 || j == intervals { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
        let f = w * normal_pdf(t, m, v * v) * normal_pdf(s, t, state_var);
        acc[0] += f;
        acc[1] += f * t;
        acc[2] += f * t * t;
    }
    let mean = acc[1] / acc[0];
    (acc[0] * h / 3.0, mean, acc[2] / acc[0] - mean * mean)
}
