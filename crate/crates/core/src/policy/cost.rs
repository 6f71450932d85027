use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HypothesisModel;
use crate::network::StateStats;
use crate::policy::StateGrid;

/// Detection costs `λ_0, λ_1` and estimation costs `μ_0, μ_1`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostCoefficients {
    pub lambda: [f64; 2],
    pub mu: [f64; 2],
}

impl CostCoefficients {
    pub fn new(lambda: [f64; 2], mu: [f64; 2]) -> Result<Self> {
        let c = Self { lambda, mu };
        c.validate()?;
        Ok(c)
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.lambda.iter().chain(&self.mu) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "cost coefficients must be finite and non-negative, got {self:?}"
                )));
            }
        }
        Ok(())
    }

    /// `[λ_0, λ_1, μ_0, μ_1]`.
    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda[0], self.lambda[1], self.mu[0], self.mu[1]]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            lambda: [a[0], a[1]],
            mu: [a[2], a[3]],
        }
    }
}

/// Posterior quantities at one grid point and time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPosterior {
    /// `P(H_i | s)`.
    pub hyp: [f64; 2],
    /// `E[Θ_i | H_i, s]`.
    pub mean: [f64; 2],
    /// `Var[Θ_i | H_i, s]`.
    pub var: [f64; 2],
}

/// `D_{i,n}(s) = λ_{1-i} P(H_{1-i} | s) + μ_i P(H_i | s) Var[Θ_i | H_i, s]`.
#[inline]
pub fn stopping_cost(c: &CostCoefficients, post: &PointPosterior, i: usize) -> f64 {
    c.lambda[1 - i] * post.hyp[1 - i] + c.mu[i] * post.hyp[i] * post.var[i]
}

/// Coefficients of `λ_{1-i}` and `μ_i` in `D_{i,n}`, so that
/// `D_{i,n} = det * λ_{1-i} + est * μ_i`.
#[inline]
pub fn stopping_cost_terms(post: &PointPosterior, i: usize) -> (f64, f64) {
    (post.hyp[1 - i], post.hyp[i] * post.var[i])
}

/// Instantaneous stopping cost `g = min(D_0, D_1)`.
#[inline]
pub fn g(c: &CostCoefficients, post: &PointPosterior) -> f64 {
    stopping_cost(c, post, 0).min(stopping_cost(c, post, 1))
}

/// Posterior quantities of one node on the grid for every `n = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    horizon: usize,
    points: usize,
    hyp1: Vec<f64>,
    mean: [Vec<f64>; 2],
    var: [Vec<f64>; 2],
}

impl PosteriorTable {
    pub fn build(model: &HypothesisModel, stats: &StateStats, node: usize, grid: &StateGrid) -> Result<Self> {
        stats.check_node(node)?;
        let horizon = stats.horizon();
        let m = grid.len();
        let mut table = Self {
            horizon,
            points: m,
            hyp1: Vec::with_capacity((horizon + 1) * m),
            mean: [Vec::with_capacity((horizon + 1) * m), Vec::with_capacity((horizon + 1) * m)],
            var: [Vec::with_capacity((horizon + 1) * m), Vec::with_capacity((horizon + 1) * m)],
        };
        for n in 0..=horizon {
            let state_var = stats.state_var(node, n);
            for j in 0..m {
                let s = grid.value(j);
                let post = model.posterior_state(node, n, s, state_var);
                table.hyp1.push(post.hyp_posterior);
                for i in 0..2 {
                    table.mean[i].push(post.theta_mean[i]);
                    table.var[i].push(post.theta_var[i]);
                }
            }
        }
        Ok(table)
    }

    /// Builds a table from explicit per-`(n, j)` values, mainly for toy
    /// instances.
    pub fn from_points(horizon: usize, points: usize, values: &[PointPosterior]) -> Result<Self> {
        if values.len() != (horizon + 1) * points {
            return Err(Error::InvalidParameter(format!(
                "expected {} posterior points, got {}",
                (horizon + 1) * points,
                values.len()
            )));
        }
        Ok(Self {
            horizon,
            points,
            hyp1: values.iter().map(|p| p.hyp[1]).collect(),
            mean: [
                values.iter().map(|p| p.mean[0]).collect(),
                values.iter().map(|p| p.mean[1]).collect(),
            ],
            var: [
                values.iter().map(|p| p.var[0]).collect(),
                values.iter().map(|p| p.var[1]).collect(),
            ],
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn points(&self) -> usize {
        self.points
    }

    #[inline]
    pub fn at(&self, n: usize, j: usize) -> PointPosterior {
        let idx = n * self.points + j;
        let p1 = self.hyp1[idx];
        PointPosterior {
            hyp: [1.0 - p1, p1],
            mean: [self.mean[0][idx], self.mean[1][idx]],
            var: [self.var[0][idx], self.var[1][idx]],
        }
    }

    /// `g` over the grid at time `n`.
    pub fn stopping_costs(&self, c: &CostCoefficients, n: usize) -> (Vec<f64>, Vec<f64>) {
        (0..self.points)
            .map(|j| {
                let p = self.at(n, j);
                (stopping_cost(c, &p, 0), stopping_cost(c, &p, 1))
            })
            .unzip()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_post(s: f64, state_var: f64) -> PointPosterior {
        let m = HypothesisModel::reference();
        let p = m.posterior_state(0, 0, s, state_var);
        PointPosterior {
            hyp: [1.0 - p.hyp_posterior, p.hyp_posterior],
            mean: p.theta_mean,
            var: p.theta_var,
        }
    }

    #[test]
    fn zero_costs_give_zero() {
        let c = CostCoefficients::zero();
        for s in [-3.0, 0.0, 1.7] {
            let p = reference_post(s, 2.0);
            assert_eq!(stopping_cost(&c, &p, 0), 0.0);
            assert_eq!(stopping_cost(&c, &p, 1), 0.0);
            assert_eq!(g(&c, &p), 0.0);
        }
    }

    #[test]
    fn symmetric_point_has_equal_costs() {
        let c = CostCoefficients::new([10.0, 10.0], [5.0, 5.0]).unwrap();
        let p = reference_post(0.0, 1.0);
        assert_eq!(stopping_cost(&c, &p, 0), stopping_cost(&c, &p, 1));
    }

    #[test]
    fn cost_at_s2_from_sub_oracles() {
        // p(H_0 | s=2) and Var[Θ_i | s] at state variance 1 composed by hand:
        // marginal likelihoods N(2; ∓2, 1.25), posterior variance 1/(4+1) = 0.2.
        let c = CostCoefficients::new([10.0, 10.0], [5.0, 5.0]).unwrap();
        let p = reference_post(2.0, 1.0);
        let l0 = (-(4.0f64).powi(2) / 2.5).exp();
        let l1 = 1.0;
        let p0 = l0 / (l0 + l1);
        let d1 = 10.0 * p0 + 5.0 * (1.0 - p0) * 0.2;
        let d0 = 10.0 * (1.0 - p0) + 5.0 * p0 * 0.2;
        assert!((stopping_cost(&c, &p, 1) - d1).abs() < 1e-12);
        assert!((stopping_cost(&c, &p, 0) - d0).abs() < 1e-12);
        assert!((g(&c, &p) - d1).abs() < 1e-12);
    }

    #[test]
    fn terms_reassemble_cost() {
        let c = CostCoefficients::new([3.0, 7.0], [2.0, 0.5]).unwrap();
        let p = reference_post(-0.4, 0.7);
        for i in 0..2 {
            let (det, est) = stopping_cost_terms(&p, i);
            let direct = stopping_cost(&c, &p, i);
            assert!((det * c.lambda[1 - i] + est * c.mu[i] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_negative_coefficients() {
        assert!(CostCoefficients::new([-1.0, 0.0], [0.0, 0.0]).is_err());
        assert!(CostCoefficients::new([0.0, 0.0], [f64::INFINITY, 0.0]).is_err());
    }
}
