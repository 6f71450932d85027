use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equally spaced discretization `a = x_0 < x_1 < … < x_{M-1} = b` of the
/// scalar state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    lower: f64,
    upper: f64,
    points: usize,
}

impl StateGrid {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must satisfy a < b, got [{lower}, {upper}]"
            )));
        }
        if points < 3 {
            return Err(Error::InvalidParameter(format!("grid needs at least 3 points, got {points}")));
        }
        Ok(Self { lower, upper, points })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    #[inline]
    pub fn value(&self, j: usize) -> f64 {
        if j + 1 == self.points {
            self.upper
        } else {
            self.lower + j as f64 * self.spacing()
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.value(j)).collect()
    }

    /// Continuous grid coordinate `(x - a) / h`, unclamped.
    #[inline]
    pub fn coordinate(&self, x: f64) -> f64 {
        (x - self.lower) / self.spacing()
    }

    /// Linear-interpolation bracket `(j, f)`: weight `1-f` on `j`, `f` on
    /// `j+1`. Points outside `[a, b]` clamp to the boundary with `f = 0`.
    #[inline]
    pub fn bracket(&self, x: f64) -> (usize, f64) {
        let u = self.coordinate(x);
        if !(u > 0.0) {
            return (0, 0.0);
        }
        let last = (self.points - 1) as f64;
        if u >= last {
            return (self.points - 1, 0.0);
        }
        let j = u.floor() as usize;
        (j, u - j as f64)
    }

    /// Nearest grid point, clamped.
    #[inline]
    pub fn nearest(&self, x: f64) -> usize {
        let u = self.coordinate(x).round();
        if !(u > 0.0) {
            0
        } else {
            (u as usize).min(self.points - 1)
        }
    }

    /// Linear interpolation of per-point `values` at `x`, clamped.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let (j, f) = self.bracket(x);
        if f == 0.0 {
            values[j]
        } else {
            values[j] * (1.0 - f) + values[j + 1] * f
        }
    }

    /// Index of the grid point that equals the initial state `0`.
    pub fn origin_index(&self) -> Result<usize> {
        let u = self.coordinate(0.0);
        let j = u.round();
        if j >= 0.0 && (j as usize) < self.points && self.value(j as usize).abs() <= 1e-9 * self.spacing() {
            Ok(j as usize)
        } else {
            Err(Error::GridMissingOrigin(format!(
                "[{}, {}] with {} points; use a symmetric interval with an odd point count",
                self.lower, self.upper, self.points
            )))
        }
    }
}
