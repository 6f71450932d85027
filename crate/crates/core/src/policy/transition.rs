//! Continuation-cost kernels.
//!
//! `E[ρ_{n+1}(s_{n+1}) | s_n = x_j]` is realized as a frozen sparse row
//! `T_n[j, ·]`: posterior-predictive samples of `(s̃, v̄)` are mapped through
//!
//! ```text
//! s_{n+1} = (n w_kk x_j + n s̃ + v̄) / (n + 1)
//! ```
//!
//! and deposited onto the two bracketing grid points with linear
//! interpolation weights. The same kernel drives the backward induction and
//! the linear program, so both see identical continuation costs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::HypothesisModel;
use crate::network::StateStats;
use crate::policy::StateGrid;

/// Row-stochastic tolerance.
pub const ROW_TOL: f64 = 1e-9;

/// CSR matrix over the grid, one row per source point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseKernel {
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseKernel {
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut k = Self {
            indptr: Vec::with_capacity(rows.len() + 1),
            indices: Vec::new(),
            values: Vec::new(),
        };
        k.indptr.push(0);
        for row in rows {
            for (c, v) in row {
                k.indices.push(c);
                k.values.push(v);
            }
            k.indptr.push(k.indices.len());
        }
        k
    }

    /// Dense rows; zero entries are dropped.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        Self::from_rows(
            rows.iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .filter(|(_, v)| **v != 0.0)
                        .map(|(c, v)| (c as u32, *v))
                        .collect()
                })
                .collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[j], self.indptr[j + 1]);
        self.indices[a..b]
            .iter()
            .zip(&self.values[a..b])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn row_sum(&self, j: usize) -> f64 {
        self.values[self.indptr[j]..self.indptr[j + 1]].iter().sum()
    }

    /// `out[j] = Σ_j' T[j, j'] v[j']`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.row(j).map(|(c, w)| w * v[c]).sum();
        }
    }

    /// `out[j'] = Σ_j mass[j] T[j, j']`.
    pub fn push_forward(&self, mass: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, &m) in mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (c, w) in self.row(j) {
                out[c] += m * w;
            }
        }
    }

    pub fn dense_row(&self, j: usize, width: usize) -> Vec<f64> {
        let mut out = vec![0.0; width];
        for (c, v) in self.row(j) {
            out[c] += v;
        }
        out
    }
}

/// One kernel per time step `n = 0..N-1` for a single node.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOperator {
    steps: Vec<SparseKernel>,
}

impl TransitionOperator {
    pub fn new(steps: Vec<SparseKernel>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidParameter("transition operator needs at least one step".into()));
        }
        let m = steps[0].rows();
        if steps.iter().any(|s| s.rows() != m) {
            return Err(Error::InvalidParameter("transition steps disagree on grid size".into()));
        }
        Ok(Self { steps })
    }

    /// Builds every step of node `node` in parallel over grid points.
    pub fn build(
        model: &HypothesisModel,
        stats: &StateStats,
        node: usize,
        grid: &StateGrid,
        n_samp: usize,
        seed: u64,
    ) -> Result<Self> {
        let steps = (0..stats.horizon())
            .map(|n| build_transition_step(model, stats, node, n, grid, n_samp, seed))
            .collect::<Result<Vec<_>>>()?;
        Self::new(steps)
    }

    /// Number of steps, equal to the horizon `N`.
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn points(&self) -> usize {
        self.steps[0].rows()
    }

    pub fn step(&self, n: usize) -> &SparseKernel {
        &self.steps[n]
    }

    pub fn nnz(&self) -> usize {
        self.steps.iter().map(SparseKernel::nnz).sum()
    }
}

/// Independent stream for row `(node, n, j)` of a kernel built from `seed`.
pub fn row_rng(seed: u64, node: usize, n: usize, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((node as u64) << 48) | ((n as u64) << 24) | j as u64);
    rng
}

/// Kernel `T_n` of node `node`.
pub fn build_transition_step(
    model: &HypothesisModel,
    stats: &StateStats,
    node: usize,
    n: usize,
    grid: &StateGrid,
    n_samp: usize,
    seed: u64,
) -> Result<SparseKernel> {
    if n_samp == 0 {
        return Err(Error::InvalidParameter("n_samp must be at least 1".into()));
    }
    if n >= stats.horizon() {
        return Err(Error::TimeOutOfRange {
            n,
            lo: 0,
            hi: stats.horizon() - 1,
        });
    }
    let w_kk = stats.self_weight(node);
    let rows = (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let x = grid.value(j);
            let pred = model.predictive(stats, node, n, x)?;
            let mut rng = row_rng(seed, node, n, j);
            Ok(deposit_row(grid, n, w_kk, x, n_samp, || pred.sample(&mut rng)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseKernel::from_rows(rows))
}

/// Deposits `n_samp` successor states produced by `draw` (returning
/// `(s̃, v̄)`) onto the grid and normalizes the row.
pub fn deposit_row(
    grid: &StateGrid,
    n: usize,
    w_kk: f64,
    x: f64,
    n_samp: usize,
    mut draw: impl FnMut() -> (f64, f64),
) -> Vec<(u32, f64)> {
    let nf = n as f64;
    let mut acc = vec![0.0f64; grid.len()];
    let (mut lo, mut hi) = (usize::MAX, 0usize);
    for _ in 0..n_samp {
        let (neighbor, innovation) = draw();
        let next = (nf * w_kk * x + nf * neighbor + innovation) / (nf + 1.0);
        let (j, f) = grid.bracket(next);
        acc[j] += 1.0 - f;
        lo = lo.min(j);
        hi = hi.max(j);
        if f > 0.0 {
            acc[j + 1] += f;
            hi = hi.max(j + 1);
        }
    }
    let total: f64 = acc[lo..=hi].iter().sum();
    (lo..=hi)
        .filter(|&c| acc[c] > 0.0)
        .map(|c| (c as u32, acc[c] / total))
        .collect()
}
