//! Two Gaussian hypotheses with conjugate Gaussian priors on the common mean.
//!
//! ```text
//! H_i:  x_n^k | θ_i ~ N(θ_i, σ²),   Θ_i ~ N(m_i, v_i²),   P(H_i) = p_i
//! ```
//!
//! A node only sees its own state `s_n^k`, which given `(H_i, θ_i)` is
//! `N(θ_i, σ²_{s_n^k})`. Everything here is a closed-form posterior quantity
//! of that single observation, plus the posterior predictive sampler of the
//! next combined neighbor state `s̃` and combined innovation `v̄`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::StateStats;

/// Overlap mass above which the priors are reported as not almost disjoint.
pub const OVERLAP_WARN_LEVEL: f64 = 1e-3;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisModel {
    sigma: f64,
    prior_mean: [f64; 2],
    prior_std: [f64; 2],
    prior_prob: [f64; 2],
}

impl HypothesisModel {
    /// `p1` is `P(H_1)`; `P(H_0) = 1 - p1`.
    pub fn new(sigma: f64, prior_mean: [f64; 2], prior_std: [f64; 2], p1: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        for i in 0..2 {
            if !(prior_std[i] > 0.0 && prior_std[i].is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "prior std v{i} must be positive, got {}",
                    prior_std[i]
                )));
            }
            if !prior_mean[i].is_finite() {
                return Err(Error::InvalidParameter(format!("prior mean m{i} must be finite")));
            }
        }
        if !(p1 > 0.0 && p1 < 1.0) {
            return Err(Error::InvalidParameter(format!("P(H_1) must lie in (0,1), got {p1}")));
        }
        let model = Self {
            sigma,
            prior_mean,
            prior_std,
            prior_prob: [1.0 - p1, p1],
        };
        let overlap = model.prior_overlap();
        if overlap > OVERLAP_WARN_LEVEL {
            log::warn!(
                "prior overlap mass {overlap:.3e} exceeds {OVERLAP_WARN_LEVEL:e}; the priors are not almost disjoint"
            );
        }
        Ok(model)
    }

    /// Experimental setup with `σ = 4`, `θ_0 ~ N(-2, 0.5²)`, `θ_1 ~ N(2, 0.5²)`
    /// and equal hypothesis priors.
    pub fn reference() -> Self {
        Self::new(4.0, [-2.0, 2.0], [0.5, 0.5], 0.5).expect("reference model is valid")
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn prior_mean(&self, i: usize) -> f64 {
        self.prior_mean[i]
    }

    pub fn prior_std(&self, i: usize) -> f64 {
        self.prior_std[i]
    }

    pub fn prior_prob(&self, i: usize) -> f64 {
        self.prior_prob[i]
    }

    /// `∫ min(N(m_0, v_0²), N(m_1, v_1²)) dθ` by composite Simpson.
    pub fn prior_overlap(&self) -> f64 {
        let lo = (self.prior_mean[0] - 12.0 * self.prior_std[0]).min(self.prior_mean[1] - 12.0 * self.prior_std[1]);
        let hi = (self.prior_mean[0] + 12.0 * self.prior_std[0]).max(self.prior_mean[1] + 12.0 * self.prior_std[1]);
        let intervals = 40_000;
        let h = (hi - lo) / intervals as f64;
        let f = |t: f64| {
            normal_pdf(t, self.prior_mean[0], self.prior_std[0].powi(2))
                .min(normal_pdf(t, self.prior_mean[1], self.prior_std[1].powi(2)))
        };
        let mut acc = f(lo) + f(hi);
        for j in 1..intervals {
            acc += f(lo + j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    /// `(P(H_0 | s), P(H_1 | s))` given a state observed with variance
    /// `state_var`. An infinite variance returns the prior.
    pub fn hypothesis_posterior(&self, s: f64, state_var: f64) -> [f64; 2] {
        if state_var.is_infinite() {
            return self.prior_prob;
        }
        let log_joint = |i: usize| {
            let var = self.prior_std[i].powi(2) + state_var;
            self.prior_prob[i].ln() + log_normal_pdf(s, self.prior_mean[i], var)
        };
        // Logistic of the log ratio keeps the smaller component accurate.
        let diff = log_joint(1) - log_joint(0);
        if diff >= 0.0 {
            let e = (-diff).exp();
            [e / (1.0 + e), 1.0 / (1.0 + e)]
        } else {
            let e = diff.exp();
            [1.0 / (1.0 + e), e / (1.0 + e)]
        }
    }

    /// Posterior `(mean, variance)` of `Θ_i` under `H_i`.
    pub fn theta_posterior(&self, s: f64, state_var: f64, i: usize) -> (f64, f64) {
        let prior_var = self.prior_std[i].powi(2);
        if state_var.is_infinite() {
            return (self.prior_mean[i], prior_var);
        }
        let var = 1.0 / (1.0 / prior_var + 1.0 / state_var);
        (var * (self.prior_mean[i] / prior_var + s / state_var), var)
    }

    /// `Var[Θ_i | H_i, s]`, which does not depend on `s` for conjugate priors.
    pub fn posterior_theta_variance(&self, _s: f64, state_var: f64, i: usize) -> f64 {
        self.theta_posterior(0.0, state_var, i).1
    }

    pub fn posterior_state(&self, node: usize, n: usize, s: f64, state_var: f64) -> PosteriorState {
        let hyp = self.hypothesis_posterior(s, state_var);
        let t0 = self.theta_posterior(s, state_var, 0);
        let t1 = self.theta_posterior(s, state_var, 1);
        PosteriorState {
            node,
            n,
            s,
            state_var,
            hyp_posterior: hyp[1],
            theta_mean: [t0.0, t1.0],
            theta_var: [t0.1, t1.1],
        }
    }

    /// Posterior-predictive parameters of `(s̃_{n+1}^k, v̄_{n+1}^k)` at state `s`.
    pub fn predictive(&self, stats: &StateStats, node: usize, n: usize, s: f64) -> Result<Predictive> {
        stats.check_node(node)?;
        let (neighbor_var, innovation_var) = predictive_component_variances(stats, node, n)?;
        let post = self.posterior_state(node, n, s, stats.state_var(node, n));
        Ok(Predictive {
            hyp1: post.hyp_posterior,
            theta_mean: post.theta_mean,
            theta_std: [post.theta_var[0].sqrt(), post.theta_var[1].sqrt()],
            open_weight: 1.0 - stats.self_weight(node),
            neighbor_std: neighbor_var.sqrt(),
            innovation_std: innovation_var.sqrt(),
        })
    }

    /// Draws `count` samples of `(s̃_{n+1}^k, v̄_{n+1}^k)` given `s_n^k = s`.
    pub fn sample_posterior_predictive<R: Rng + ?Sized>(
        &self,
        s: f64,
        stats: &StateStats,
        node: usize,
        n: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<(f64, f64)>> {
        let pred = self.predictive(stats, node, n, s)?;
        Ok((0..count).map(|_| pred.sample(rng)).collect())
    }
}

/// Posterior summary of one node at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    pub node: usize,
    pub n: usize,
    pub s: f64,
    pub state_var: f64,
    /// `P(H_1 | s)`.
    pub hyp_posterior: f64,
    pub theta_mean: [f64; 2],
    pub theta_var: [f64; 2],
}

/// `(σ²_{s̃_{n+1}^k}, σ²_{v̄^k})` for `0 <= n < N`.
pub fn predictive_component_variances(stats: &StateStats, node: usize, n: usize) -> Result<(f64, f64)> {
    stats.check_node(node)?;
    if n >= stats.horizon() {
        return Err(Error::TimeOutOfRange {
            n,
            lo: 0,
            hi: stats.horizon() - 1,
        });
    }
    Ok((stats.neighbor_state_var(node, n), stats.innovation_var(node)))
}

/// Frozen parameters of the posterior predictive at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Predictive {
    /// Bernoulli success rate `P(H_1 | s)`.
    pub hyp1: f64,
    pub theta_mean: [f64; 2],
    pub theta_std: [f64; 2],
    /// `1 - w_kk`.
    pub open_weight: f64,
    pub neighbor_std: f64,
    pub innovation_std: f64,
}

impl Predictive {
    /// One draw of `(s̃, v̄)`: `H ~ Bern(r)`, `θ | H, s`, then the two
    /// conditionally independent Gaussians.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let h = usize::from(rng.random::<f64>() < self.hyp1);
        let z: f64 = rng.sample(StandardNormal);
        let theta = self.theta_mean[h] + self.theta_std[h] * z;
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let neighbor = self.open_weight * theta + self.neighbor_std * z1;
        let innovation = theta + self.innovation_std * z2;
        (neighbor, innovation)
    }

    /// `E[v̄] = E[θ | s]`.
    pub fn mean_theta(&self) -> f64 {
        self.hyp1 * self.theta_mean[1] + (1.0 - self.hyp1) * self.theta_mean[0]
    }
}

pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / var - 0.5 * var.ln() - LN_SQRT_2PI
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    log_normal_pdf(x, mean, var).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetworkGraph, WeightMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Trapezoid quadrature over θ of prior × likelihood, independent of the
    /// closed forms.
    fn quadrature_posterior(m: &HypothesisModel, s: f64, state_var: f64) -> ([f64; 2], [(f64, f64); 2]) {
        let mut evidence = [0.0; 2];
        let mut moments = [(0.0, 0.0); 2];
        for i in 0..2 {
            let (mu, v) = (m.prior_mean(i), m.prior_std(i));
            let lo = mu - 14.0 * v;
            let steps = 40_000;
            let h = 28.0 * v / steps as f64;
            let (mut z, mut z1, mut z2) = (0.0, 0.0, 0.0);
            for j in 0..=steps {
                let t = lo + j as f64 * h;
                let wgt = if j == 0 || j == steps { 0.5 } else { 1.0 };
                let f = wgt
                    * (-(t - mu).powi(2) / (2.0 * v * v)).exp()
                    / (v * (2.0 * std::f64::consts::PI).sqrt())
                    * (-(s - t).powi(2) / (2.0 * state_var)).exp()
                    / (2.0 * std::f64::consts::PI * state_var).sqrt();
                z += f;
                z1 += f * t;
                z2 += f * t * t;
            }
            evidence[i] = m.prior_prob(i) * z * h;
            let mean = z1 / z;
            moments[i] = (mean, z2 / z - mean * mean);
        }
        let total = evidence[0] + evidence[1];
        ([evidence[0] / total, evidence[1] / total], moments)
    }

    #[test]
    fn symmetric_tie_is_half() {
        let m = HypothesisModel::reference();
        assert_eq!(m.hypothesis_posterior(0.0, 1.0), [0.5, 0.5]);
        assert_eq!(m.hypothesis_posterior(0.0, 37.0), [0.5, 0.5]);
    }

    #[test]
    fn posterior_matches_quadrature_at_n16() {
        let m = HypothesisModel::reference();
        let got = m.hypothesis_posterior(2.0, 1.0);
        let (oracle, moments) = quadrature_posterior(&m, 2.0, 1.0);
        assert!((got[1] - oracle[1]).abs() < 1e-12, "{got:?} vs {oracle:?}");
        for i in 0..2 {
            let (mean, var) = m.theta_posterior(2.0, 1.0, i);
            assert!((mean - moments[i].0).abs() < 1e-8);
            assert!((var - moments[i].1).abs() < 1e-8);
        }
    }

    #[test]
    fn dominant_prior_wins() {
        let m = HypothesisModel::new(4.0, [-2.0, 2.0], [0.5, 0.5], 1.0 - 1e-15).unwrap();
        for s in [-5.0, -2.0, 0.0, 3.0] {
            let p = m.hypothesis_posterior(s, 16.0);
            assert!(p[1] > 1.0 - 1e-12, "{p:?}");
        }
    }

    #[test]
    fn far_tail_does_not_underflow() {
        let m = HypothesisModel::reference();
        let p = m.hypothesis_posterior(-80.0, 0.01);
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
        assert_eq!(p[0] + p[1], 1.0);
    }

    #[test]
    fn theta_posterior_closed_forms() {
        let m = HypothesisModel::reference();
        for i in 0..2 {
            let mi = m.prior_mean(i);
            assert!((m.theta_posterior(mi, 3.3, i).0 - mi).abs() < 1e-15);
            let (mean, var) = m.theta_posterior(1.3, 0.25, i);
            assert!((var - 0.125).abs() < 1e-15);
            assert!((mean - (mi + 1.3) / 2.0).abs() < 1e-14);
            assert_eq!(m.theta_posterior(7.0, f64::INFINITY, i), (mi, 0.25));
            let (mean, var) = m.theta_posterior(7.0, 1e300, i);
            assert!((mean - mi).abs() < 1e-12 && (var - 0.25).abs() < 1e-12);
            assert_eq!(m.posterior_theta_variance(-4.0, 0.25, i), 0.125);
        }
    }

    #[test]
    fn posterior_state_invariants() {
        let m = HypothesisModel::reference();
        let p = m.posterior_state(3, 7, 0.4, 16.0 / 7.0);
        assert!((0.0..=1.0).contains(&p.hyp_posterior));
        for i in 0..2 {
            assert!(p.theta_var[i] > 0.0);
            assert!(p.theta_var[i] < 0.25f64.min(16.0 / 7.0));
        }
    }

    #[test]
    fn overlap_of_reference_priors_is_small() {
        let overlap = HypothesisModel::reference().prior_overlap();
        // 2 Φ(-4)
        assert!((overlap - 6.334_248_366_623_996e-5).abs() < 1e-9, "{overlap}");
        let wide = HypothesisModel::new(1.0, [0.0, 0.0], [1.0, 1.0], 0.5).unwrap();
        assert!((wide.prior_overlap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(HypothesisModel::new(0.0, [-2.0, 2.0], [0.5, 0.5], 0.5).is_err());
        assert!(HypothesisModel::new(4.0, [-2.0, 2.0], [0.0, 0.5], 0.5).is_err());
        assert!(HypothesisModel::new(4.0, [-2.0, 2.0], [0.5, 0.5], 1.0).is_err());
        assert!(HypothesisModel::new(4.0, [f64::NAN, 2.0], [0.5, 0.5], 0.5).is_err());
    }

    #[test]
    fn single_node_predictive() {
        let g = NetworkGraph::from_edges(1, &[]).unwrap();
        let stats = StateStats::compute(&WeightMatrix::equal(&g), 4.0, 10).unwrap();
        assert_eq!(predictive_component_variances(&stats, 0, 3).unwrap(), (0.0, 16.0));
        assert!(predictive_component_variances(&stats, 0, 10).is_err());
        let m = HypothesisModel::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = m.sample_posterior_predictive(0.7, &stats, 0, 4, 1000, &mut rng).unwrap();
        assert!(draws.iter().all(|&(s, _)| s == 0.0));
    }

    #[test]
    fn sampler_is_deterministic_per_stream() {
        let g = NetworkGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let stats = StateStats::compute(&WeightMatrix::equal(&g), 4.0, 10).unwrap();
        let m = HypothesisModel::reference();
        let a = m
            .sample_posterior_predictive(0.3, &stats, 1, 2, 50, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let b = m
            .sample_posterior_predictive(0.3, &stats, 1, 2, 50, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(a, b);
    }
}
