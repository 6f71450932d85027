use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::cost::{stopping_cost, CostCoefficients, PosteriorTable};
use crate::policy::transition::TransitionOperator;
use crate::policy::StateGrid;

/// Stop when `g <= d_n + STOP_TIE_TOL`.
pub const STOP_TIE_TOL: f64 = 1e-9;

/// Policy of one node at one time on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStep {
    /// `ρ_n`.
    pub value: Vec<f64>,
    /// `g = min(D_0, D_1)`.
    pub stop_cost: Vec<f64>,
    /// `Ψ_n`.
    #[serde(with = "mask")]
    pub stop: Vec<bool>,
    /// `δ_n`, `true` deciding `H_1`.
    #[serde(with = "mask")]
    pub decide: Vec<bool>,
    /// `E[Θ_0 | H_0, s]`.
    pub estimate0: Vec<f64>,
    /// `E[Θ_1 | H_1, s]`.
    pub estimate1: Vec<f64>,
}

impl PolicyStep {
    pub fn estimate(&self, i: usize) -> &[f64] {
        if i == 0 {
            &self.estimate0
        } else {
            &self.estimate1
        }
    }
}

/// Optimal stopping policy of one node: `steps[n]` for `n = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub node: usize,
    pub horizon: usize,
    pub grid: StateGrid,
    pub coefficients: CostCoefficients,
    pub steps: Vec<PolicyStep>,
}

impl PolicyTable {
    pub fn step(&self, n: usize) -> &PolicyStep {
        &self.steps[n]
    }

    /// `ρ_0` at the initial state `s_0 = 0`.
    pub fn initial_value(&self) -> Result<f64> {
        Ok(self.steps[0].value[self.grid.origin_index()?])
    }

    /// `(stop, decide_h1, estimate)` at state `s` and time `n >= 1`:
    /// nearest grid point for the masks, linear interpolation for the
    /// estimate of the chosen hypothesis.
    pub fn lookup(&self, n: usize, s: f64) -> (bool, bool, f64) {
        let step = &self.steps[n];
        let j = self.grid.nearest(s);
        let decide = step.decide[j];
        let estimate = self.grid.interpolate(step.estimate(usize::from(decide)), s);
        (step.stop[j], decide, estimate)
    }

    /// Structured text (JSON) with full-precision floats.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: Self = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.len() != self.horizon + 1 {
            return Err(Error::Parse(format!(
                "policy of node {} has {} steps for horizon {}",
                self.node,
                self.steps.len(),
                self.horizon
            )));
        }
        let m = self.grid.len();
        for (n, s) in self.steps.iter().enumerate() {
            let lens = [
                s.value.len(),
                s.stop_cost.len(),
                s.stop.len(),
                s.decide.len(),
                s.estimate0.len(),
                s.estimate1.len(),
            ];
            if lens.iter().any(|&l| l != m) {
                return Err(Error::Parse(format!("policy step {n} does not match grid size {m}")));
            }
        }
        if self.steps[self.horizon].stop.iter().any(|&s| !s) {
            return Err(Error::Parse("stop mask at the horizon must be all ones".into()));
        }
        Ok(())
    }
}

/// Bellman recursion
///
/// ```text
/// ρ_N = g,    ρ_n = min(g, 1 + T_n ρ_{n+1}),  0 < n < N,    ρ_0 = 1 + T_0 ρ_1
/// ```
///
/// with `Ψ_n = 1{g <= d_n}`, `δ_n = 1{D_0 > D_1}` (ties go to the more
/// probable hypothesis) and posterior-mean estimators. At least one sample
/// is always taken, so `Ψ_0 ≡ 0`.
pub fn backward_induction(
    node: usize,
    grid: &StateGrid,
    coefficients: &CostCoefficients,
    transitions: &TransitionOperator,
    posteriors: &PosteriorTable,
) -> Result<PolicyTable> {
    coefficients.validate()?;
    let horizon = transitions.horizon();
    let m = grid.len();
    if posteriors.horizon() != horizon || posteriors.points() != m || transitions.points() != m {
        return Err(Error::Mismatch(format!(
            "grid/horizon mismatch: grid {m}, transitions {}x{}, posteriors {}x{}",
            transitions.horizon(),
            transitions.points(),
            posteriors.horizon(),
            posteriors.points()
        )));
    }

    let mut steps: Vec<PolicyStep> = Vec::with_capacity(horizon + 1);
    let mut next_value: Vec<f64> = Vec::new();
    let mut continuation = vec![0.0; m];
    for n in (0..=horizon).rev() {
        let mut step = PolicyStep {
            value: vec![0.0; m],
            stop_cost: vec![0.0; m],
            stop: vec![true; m],
            decide: vec![false; m],
            estimate0: vec![0.0; m],
            estimate1: vec![0.0; m],
        };
        if n < horizon {
            transitions.step(n).apply(&next_value, &mut continuation);
        }
        for j in 0..m {
            let post = posteriors.at(n, j);
            let d0 = stopping_cost(coefficients, &post, 0);
            let d1 = stopping_cost(coefficients, &post, 1);
            let g = d0.min(d1);
            step.stop_cost[j] = g;
            step.decide[j] = d0 > d1 || (d0 == d1 && post.hyp[1] > post.hyp[0]);
            step.estimate0[j] = post.mean[0];
            step.estimate1[j] = post.mean[1];
            if n == horizon {
                step.value[j] = g;
            } else if n == 0 {
                step.value[j] = 1.0 + continuation[j];
                step.stop[j] = false;
            } else {
                let d = 1.0 + continuation[j];
                step.value[j] = g.min(d);
                step.stop[j] = g <= d + STOP_TIE_TOL;
            }
        }
        next_value = step.value.clone();
        steps.push(step);
    }
    steps.reverse();
    Ok(PolicyTable {
        node,
        horizon,
        grid: *grid,
        coefficients: *coefficients,
        steps,
    })
}

/// Masks serialize as strings of `0`/`1`.
mod mask {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mask: &[bool], s: S) -> Result<S::Ok, S::Error> {
        let text: String = mask.iter().map(|&b| if b { '1' } else { '0' }).collect();
        s.serialize_str(&text)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let text = String::deserialize(d)?;
        text.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(D::Error::custom(format!("mask character {other:?}"))),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::cost::PointPosterior;
    use crate::policy::transition::SparseKernel;

    fn toy(horizon: usize) -> (StateGrid, TransitionOperator, PosteriorTable) {
        let grid = StateGrid::new(-1.0, 1.0, 3).unwrap();
        let rows = vec![vec![0.6, 0.3, 0.1], vec![0.25, 0.5, 0.25], vec![0.1, 0.2, 0.7]];
        let t = TransitionOperator::new(vec![SparseKernel::from_dense(&rows); horizon]).unwrap();
        let mut pts = Vec::new();
        for n in 0..=horizon {
            for j in 0..3 {
                let p1 = [0.1, 0.5, 0.9][j] * (1.0 - 0.1 * n as f64) + 0.05 * n as f64;
                pts.push(PointPosterior {
                    hyp: [1.0 - p1, p1],
                    mean: [-1.0 + 0.1 * j as f64, 1.0 - 0.1 * j as f64],
                    var: [0.3 / (n + 1) as f64, 0.2 / (n + 1) as f64],
                });
            }
        }
        (grid, t, PosteriorTable::from_points(horizon, 3, &pts).unwrap())
    }

    #[test]
    fn zero_costs_stop_at_first_sample() {
        let (grid, t, post) = toy(3);
        let p = backward_induction(0, &grid, &CostCoefficients::zero(), &t, &post).unwrap();
        assert!(p.steps[0].value.iter().all(|&v| v == 1.0));
        assert!(p.steps[0].stop.iter().all(|&b| !b));
        for s in &p.steps[1..] {
            assert!(s.value.iter().all(|&v| v == 0.0));
            assert!(s.stop.iter().all(|&b| b));
        }
    }

    #[test]
    fn value_bounded_by_stopping_cost() {
        let (grid, t, post) = toy(4);
        let c = CostCoefficients::new([8.0, 5.0], [3.0, 9.0]).unwrap();
        let p = backward_induction(0, &grid, &c, &t, &post).unwrap();
        assert_eq!(p.steps[4].value, p.steps[4].stop_cost);
        assert!(p.steps[4].stop.iter().all(|&b| b));
        for s in &p.steps[1..] {
            for j in 0..3 {
                assert!(s.value[j] <= s.stop_cost[j]);
                assert!(s.value[j] >= 0.0);
                assert_eq!(s.stop[j], (s.value[j] - s.stop_cost[j]).abs() <= STOP_TIE_TOL);
            }
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (grid, t, post) = toy(2);
        let c = CostCoefficients::new([8.0 / 3.0, 5.1], [3.7, 9.0]).unwrap();
        let p = backward_induction(4, &grid, &c, &t, &post).unwrap();
        let back = PolicyTable::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
    }
}
