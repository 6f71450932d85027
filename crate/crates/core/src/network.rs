//! Sensor network topology, consensus weights and the exact second-order
//! statistics of the consensus+innovations state recursion
//!
//! ```text
//! s_n = W ((n-1)/n s_{n-1} + 1/n x_n),    s_0 = 0.
//! ```
//!
//! Conditioned on the hypothesis and the common mean `θ`, every state is
//! Gaussian with mean `θ`, so the covariance matrices `Σ_n` are all that is
//! needed downstream.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Retry cap for connected geometric graph generation.
pub const DEFAULT_MAX_ATTEMPTS: usize = 10_000;

/// Tolerance on weight-matrix row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A simple, undirected graph over `K` sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    coordinates: Option<Vec<[f64; 2]>>,
    radius: Option<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl NetworkGraph {
    /// Builds a graph from an edge list. Self-loops and out-of-range endpoints
    /// are rejected; duplicate edges collapse.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidParameter("a network needs at least one node".into()));
        }
        let mut neighbors = vec![Vec::new(); node_count];
        for &(k, l) in edges {
            if k >= node_count || l >= node_count {
                return Err(Error::NodeOutOfRange {
                    node: k.max(l),
                    count: node_count,
                });
            }
            if k == l {
                return Err(Error::InvalidParameter(format!("self-loop at node {k}")));
            }
            neighbors[k].push(l);
            neighbors[l].push(k);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self {
            coordinates: None,
            radius: None,
            neighbors,
        })
    }

    /// Geometric graph: an edge joins every pair at distance `<= radius`.
    pub fn geometric(coordinates: Vec<[f64; 2]>, radius: f64) -> Self {
        let k = coordinates.len();
        let mut neighbors = vec![Vec::new(); k];
        for a in 0..k {
            for b in (a + 1)..k {
                let dx = coordinates[a][0] - coordinates[b][0];
                let dy = coordinates[a][1] - coordinates[b][1];
                if (dx * dx + dy * dy).sqrt() <= radius {
                    neighbors[a].push(b);
                    neighbors[b].push(a);
                }
            }
        }
        Self {
            coordinates: Some(coordinates),
            radius: Some(radius),
            neighbors,
        }
    }

    pub fn with_coordinates(mut self, coordinates: Vec<[f64; 2]>) -> Result<Self> {
        if coordinates.len() != self.node_count() {
            return Err(Error::InvalidParameter(format!(
                "{} coordinates for {} nodes",
                coordinates.len(),
                self.node_count()
            )));
        }
        self.coordinates = Some(coordinates);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Open neighborhood of `k` (excludes `k`), sorted.
    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    /// Closed neighborhood of `k`, sorted.
    pub fn closed_neighborhood(&self, k: usize) -> Vec<usize> {
        let mut out = self.neighbors[k].clone();
        out.push(k);
        out.sort_unstable();
        out
    }

    pub fn degree(&self, k: usize) -> usize {
        self.neighbors[k].len()
    }

    pub fn coordinates(&self) -> Option<&[[f64; 2]]> {
        self.coordinates.as_deref()
    }

    pub fn radius(&self) -> Option<f64> {
        self.radius
    }

    /// Undirected edges with `k < l`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().filter(|&&l| l > k).map(|&l| (k, l)));
        }
        out
    }

    pub fn component_count(&self) -> usize {
        let k = self.node_count();
        let mut seen = vec![false; k];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in 0..k {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for &u in &self.neighbors[v] {
                    if !seen[u] {
                        seen[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    pub fn ensure_connected(&self) -> Result<()> {
        match self.component_count() {
            1 => Ok(()),
            components => Err(Error::Disconnected { components }),
        }
    }

    /// Graph Laplacian `L = D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let k = self.node_count();
        let mut l = DMatrix::zeros(k, k);
        for (a, list) in self.neighbors.iter().enumerate() {
            l[(a, a)] = list.len() as f64;
            for &b in list {
                l[(a, b)] = -1.0;
            }
        }
        l
    }

    /// Text export: a `nodes` header, an optional `radius`, the `edges` block
    /// (`k l`, 0-based, one per line) and an optional `coordinates` block
    /// (`k x y`).
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# consensus+innovations sensor network");
        let _ = writeln!(out, "nodes {}", self.node_count());
        if let Some(r) = self.radius {
            let _ = writeln!(out, "radius {r}");
        }
        let _ = writeln!(out, "edges");
        for (k, l) in self.edges() {
            let _ = writeln!(out, "{k} {l}");
        }
        if let Some(coords) = &self.coordinates {
            let _ = writeln!(out, "coordinates");
            for (k, [x, y]) in coords.iter().enumerate() {
                let _ = writeln!(out, "{k} {x} {y}");
            }
        }
        out
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        enum Block {
            Header,
            Edges,
            Coordinates,
        }
        let mut block = Block::Header;
        let mut nodes = None;
        let mut radius = None;
        let mut edges = Vec::new();
        let mut coords: Vec<Option<[f64; 2]>> = Vec::new();
        let bad = |lineno: usize, msg: &str| Error::Parse(format!("line {}: {msg}", lineno + 1));

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match (fields[0], fields.len()) {
                ("nodes", 2) => {
                    let k: usize = fields[1].parse().map_err(|_| bad(lineno, "bad node count"))?;
                    nodes = Some(k);
                    coords = vec![None; k];
                    continue;
                }
                ("radius", 2) => {
                    radius = Some(fields[1].parse().map_err(|_| bad(lineno, "bad radius"))?);
                    continue;
                }
                ("edges", 1) => {
                    block = Block::Edges;
                    continue;
                }
                ("coordinates", 1) => {
                    block = Block::Coordinates;
                    continue;
                }
                _ => {}
            }
            match block {
                Block::Header => return Err(bad(lineno, "expected `nodes`, `radius`, `edges` or `coordinates`")),
                Block::Edges => {
                    if fields.len() != 2 {
                        return Err(bad(lineno, "edge lines have the form `k l`"));
                    }
                    let k = fields[0].parse().map_err(|_| bad(lineno, "bad node index"))?;
                    let l = fields[1].parse().map_err(|_| bad(lineno, "bad node index"))?;
                    edges.push((k, l));
                }
                Block::Coordinates => {
                    if fields.len() != 3 {
                        return Err(bad(lineno, "coordinate lines have the form `k x y`"));
                    }
                    let k: usize = fields[0].parse().map_err(|_| bad(lineno, "bad node index"))?;
                    let x = fields[1].parse().map_err(|_| bad(lineno, "bad coordinate"))?;
                    let y = fields[2].parse().map_err(|_| bad(lineno, "bad coordinate"))?;
                    let slot = coords.get_mut(k).ok_or_else(|| bad(lineno, "node index out of range"))?;
                    *slot = Some([x, y]);
                }
            }
        }
        let nodes = nodes.ok_or_else(|| Error::Parse("missing `nodes` header".into()))?;
        let mut graph = Self::from_edges(nodes, &edges)?;
        graph.radius = radius;
        if coords.iter().any(Option::is_some) {
            let all: Option<Vec<[f64; 2]>> = coords.into_iter().collect();
            let all = all.ok_or_else(|| Error::Parse("coordinates block is incomplete".into()))?;
            graph.coordinates = Some(all);
        }
        Ok(graph)
    }
}

/// Samples `K` positions uniformly in the unit square and connects nodes within
/// `d_com`, repeating until the graph is connected.
pub fn generate_geometric_network(node_count: usize, d_com: f64, seed: u64) -> Result<NetworkGraph> {
    generate_geometric_network_capped(node_count, d_com, seed, DEFAULT_MAX_ATTEMPTS)
}

pub fn generate_geometric_network_capped(
    node_count: usize,
    d_com: f64,
    seed: u64,
    max_attempts: usize,
) -> Result<NetworkGraph> {
    if node_count == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    if !(d_com > 0.0 && d_com.is_finite()) {
        return Err(Error::InvalidParameter(format!("d_com must be positive, got {d_com}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_attempts {
        let coords: Vec<[f64; 2]> = (0..node_count)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let graph = NetworkGraph::geometric(coords, d_com);
        if graph.is_connected() {
            return Ok(graph);
        }
    }
    Err(Error::NotConnected {
        nodes: node_count,
        radius: d_com,
        attempts: max_attempts,
    })
}

/// Row-stochastic combination weights `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: DMatrix<f64>,
}

impl WeightMatrix {
    /// Wraps a square matrix, checking that every row sums to one.
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() || w.nrows() == 0 {
            return Err(Error::InvalidParameter(format!(
                "weight matrix must be square and non-empty, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        for (row, r) in w.row_iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if !sum.is_finite() || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotStochastic { row, sum });
            }
        }
        Ok(Self { w })
    }

    /// `w_kl = 1/|closed neighborhood of k|` on the closed neighborhood.
    pub fn equal(graph: &NetworkGraph) -> Self {
        let k = graph.node_count();
        let mut w = DMatrix::zeros(k, k);
        for a in 0..k {
            let closed = graph.closed_neighborhood(a);
            let weight = 1.0 / closed.len() as f64;
            for b in closed {
                w[(a, b)] = weight;
            }
        }
        Self { w }
    }

    /// `W = I - c L`. Rows always sum to one; check [`Self::is_nonnegative`]
    /// before using the result for policy design.
    pub fn laplacian(graph: &NetworkGraph, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("Laplacian step c must be positive, got {c}")));
        }
        let k = graph.node_count();
        let w = DMatrix::identity(k, k) - graph.laplacian() * c;
        Ok(Self { w })
    }

    pub fn node_count(&self) -> usize {
        self.w.nrows()
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.w[(k, l)]
    }

    pub fn self_weight(&self, k: usize) -> f64 {
        self.w[(k, k)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn min_entry(&self) -> f64 {
        self.w.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.min_entry() >= 0.0
    }

    pub fn ensure_nonnegative(&self) -> Result<()> {
        if self.is_nonnegative() {
            Ok(())
        } else {
            Err(Error::NegativeWeights { min: self.min_entry() })
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.w.row_iter().map(|r| r.iter().sum()).collect()
    }

    /// Dense row-major CSV, shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in self.w.row_iter() {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("weights line {}: {e}", lineno + 1)))?;
            rows.push(row);
        }
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Parse("weight matrix CSV is not square".into()));
        }
        Self::from_matrix(DMatrix::from_fn(k, k, |a, b| rows[a][b]))
    }
}

/// Per-node, per-time variances of the state recursion, conditioned on
/// `(H_i, θ_i)`.
///
/// Time indices run over `0..=N`. At `n = 0` no sample has been taken, so the
/// state variance is reported as `+∞` (an uninformative observation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateStats {
    sigma: f64,
    horizon: usize,
    self_weight: Vec<f64>,
    innovation_var: Vec<f64>,
    /// `[n][k]`, `n = 0..=N`; `Σ_n[k,k]`.
    state_var: Vec<Vec<f64>>,
    /// `[n][k]`, variance of `s̃_{n+1}^k = Σ_{l ∈ Ω_k} w_kl s_n^l`.
    neighbor_state_var: Vec<Vec<f64>>,
    /// `[n][k]`, `Cov(s_{n+1}^k, s_n^k)`.
    lag_cov: Vec<Vec<f64>>,
}

impl StateStats {
    /// Incremental recursion
    /// `Σ_n = ((n-1)/n)^2 W Σ_{n-1} Wᵀ + (σ²/n²) W Wᵀ`.
    pub fn compute(weights: &WeightMatrix, sigma: f64, horizon: usize) -> Result<Self> {
        weights.ensure_nonnegative()?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
        }
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon N must be at least 1".into()));
        }
        let w = weights.matrix();
        let k = w.nrows();
        let wt = w.transpose();
        let innovation = w * &wt * (sigma * sigma);
        let mut w_open = w.clone();
        w_open.fill_diagonal(0.0);
        let w_open_t = w_open.transpose();

        let mut state_var = vec![vec![f64::INFINITY; k]];
        let mut neighbor_state_var = vec![vec![0.0; k]];
        let mut lag_cov = vec![vec![0.0; k]];
        let mut sigma_n = DMatrix::<f64>::zeros(k, k);
        for n in 1..=horizon {
            let nf = n as f64;
            let carry = ((nf - 1.0) / nf).powi(2);
            sigma_n = (w * &sigma_n * &wt) * carry + &innovation / (nf * nf);
            state_var.push(sigma_n.diagonal().iter().copied().collect());
            let neighbor = &w_open * &sigma_n * &w_open_t;
            neighbor_state_var.push(neighbor.diagonal().iter().copied().collect());
            let cross = w * &sigma_n;
            lag_cov.push((0..k).map(|a| cross[(a, a)] * nf / (nf + 1.0)).collect());
        }

        Ok(Self {
            sigma,
            horizon,
            self_weight: (0..k).map(|a| w[(a, a)]).collect(),
            innovation_var: innovation.diagonal().iter().copied().collect(),
            state_var,
            neighbor_state_var,
            lag_cov,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn node_count(&self) -> usize {
        self.self_weight.len()
    }

    pub fn self_weight(&self, k: usize) -> f64 {
        self.self_weight[k]
    }

    /// `σ²_{s_n^k}`; `+∞` at `n = 0`.
    pub fn state_var(&self, k: usize, n: usize) -> f64 {
        self.state_var[n][k]
    }

    /// `σ²_{v̄^k} = σ² (W Wᵀ)[k,k]`.
    pub fn innovation_var(&self, k: usize) -> f64 {
        self.innovation_var[k]
    }

    /// Variance of `s̃_{n+1}^k`; zero at `n = 0` and for isolated nodes.
    pub fn neighbor_state_var(&self, k: usize, n: usize) -> f64 {
        self.neighbor_state_var[n][k]
    }

    /// `Cov(s_{n+1}^k, s_n^k)`, `n = 0..=N`.
    pub fn lag_cov(&self, k: usize, n: usize) -> f64 {
        self.lag_cov[n][k]
    }

    pub fn check_node(&self, k: usize) -> Result<()> {
        if k < self.node_count() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                node: k,
                count: self.node_count(),
            })
        }
    }
}

/// One consensus+innovations update `s_n = W((n-1)/n s_{n-1} + x_n / n)`
/// of the whole state vector, in place. `scratch` is resized as needed.
pub fn consensus_step(w: &WeightMatrix, n: usize, state: &mut [f64], samples: &[f64], scratch: &mut Vec<f64>) {
    let nf = n as f64;
    scratch.clear();
    scratch.extend(state.iter().zip(samples).map(|(s, x)| (nf - 1.0) / nf * s + x / nf));
    let wm = w.matrix();
    for (r, s) in state.iter_mut().enumerate() {
        *s = scratch.iter().enumerate().map(|(c, m)| wm[(r, c)] * m).sum();
    }
}

/// Direct power sum `(σ²/n²) Σ_{i=1..n} Wⁱ (Wⁱ)ᵀ`, the defining form of `Σ_n`.
pub fn state_covariance_direct(weights: &WeightMatrix, sigma: f64, n: usize) -> DMatrix<f64> {
    let w = weights.matrix();
    let k = w.nrows();
    let mut power = DMatrix::<f64>::identity(k, k);
    let mut acc = DMatrix::<f64>::zeros(k, k);
    for _ in 0..n {
        power = w * power;
        acc += &power * power.transpose();
    }
    acc * (sigma * sigma / (n * n) as f64)
}
