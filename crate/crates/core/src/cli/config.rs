//! Run configuration: one TOML file with `[network]`, `[model]`,
//! `[constraints]`, `[design]` and `[simulate]` sections. Every key is
//! optional and defaults to the reference experiment; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::{DesignSpec, ErrorConstraints};
use crate::error::{Error, Result};
use crate::model::HypothesisModel;
use crate::policy::{EvaluationSettings, StateGrid, TruthKernel};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub model: ModelConfig,
    pub constraints: ConstraintsConfig,
    pub design: DesignConfig,
    pub simulate: SimulateConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    #[default]
    Equal,
    Laplacian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub nodes: usize,
    pub d_com: f64,
    pub seed: u64,
    pub max_attempts: usize,
    /// Read the graph from this edge-list file instead of generating it.
    pub edge_list: Option<PathBuf>,
    pub weights: WeightScheme,
    /// `c` in `W = I - cL`.
    pub laplacian_c: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            nodes: 20,
            d_com: 0.3,
            seed: 1,
            max_attempts: crate::network::DEFAULT_MAX_ATTEMPTS,
            edge_list: None,
            weights: WeightScheme::Equal,
            laplacian_c: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub sigma: f64,
    pub m0: f64,
    pub v0: f64,
    pub m1: f64,
    pub v1: f64,
    pub p1: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            sigma: 4.0,
            m0: -2.0,
            v0: 0.5,
            m1: 2.0,
            v1: 0.5,
            p1: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintsConfig {
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta0: f64,
    pub beta1: f64,
}

impl Default for ConstraintsConfig {
    fn default() -> Self {
        Self {
            alpha0: 1e-3,
            alpha1: 1e-3,
            beta0: 0.1,
            beta1: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    /// Kelley's method on the four-dimensional dual of the LP.
    #[default]
    CuttingPlane,
    /// The full sparse LP through the interior-point solver.
    Clarabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub horizon: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    pub n_samp: usize,
    pub seed: u64,
    pub solver: SolverChoice,
    pub tolerance: f64,
    pub kernel: TruthKernel,
    pub theta_bins: usize,
    pub theta_span: f64,
    pub dual_max_iters: usize,
    pub dual_rel_tol: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            grid_min: -9.0,
            grid_max: 9.0,
            // 1901 rather than 1900 so that the initial state 0 is a grid point.
            grid_points: 1901,
            n_samp: 50_000,
            seed: 1,
            solver: SolverChoice::CuttingPlane,
            tolerance: 1e-8,
            kernel: TruthKernel::GaussMarkov,
            theta_bins: 201,
            theta_span: 6.0,
            dual_max_iters: 40,
            dual_rel_tol: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub runs: u64,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub dump_trials: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            runs: 1_000_000,
            seed: 2,
            workers: 0,
            dump_trials: false,
        }
    }
}

/// A failed check: offending `section.key` and the reason.
type Violation = (&'static str, &'static str, String);

fn check(ok: bool, section: &'static str, key: &'static str, message: impl FnOnce() -> String) -> std::result::Result<(), Violation> {
    if ok {
        Ok(())
    } else {
        Err((section, key, message()))
    }
}

impl RunConfig {
    /// Reads and validates `path`; errors point at the offending line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            line: 0,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses TOML `text`; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_string(),
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        config.validate().map_err(|(section, key, message)| Error::Config {
            path: origin.to_string(),
            line: locate_key(text, section, key).unwrap_or(0),
            message: format!("{section}.{key}: {message}"),
        })?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    fn validate(&self) -> std::result::Result<(), Violation> {
        let n = &self.network;
        check(n.nodes >= 1, "network", "nodes", || "K must be at least 1".into())?;
        check(n.d_com > 0.0 && n.d_com.is_finite(), "network", "d_com", || {
            format!("communication radius must be positive, got {}", n.d_com)
        })?;
        check(n.max_attempts >= 1, "network", "max_attempts", || "must be at least 1".into())?;
        check(n.laplacian_c > 0.0, "network", "laplacian_c", || "must be positive".into())?;

        let m = &self.model;
        check(m.sigma > 0.0 && m.sigma.is_finite(), "model", "sigma", || "must be positive".into())?;
        check(m.v0 > 0.0 && m.v0.is_finite(), "model", "v0", || "prior std must be positive".into())?;
        check(m.v1 > 0.0 && m.v1.is_finite(), "model", "v1", || "prior std must be positive".into())?;
        check(m.m0.is_finite(), "model", "m0", || "must be finite".into())?;
        check(m.m1.is_finite(), "model", "m1", || "must be finite".into())?;
        check(m.p1 > 0.0 && m.p1 < 1.0, "model", "p1", || format!("must lie in (0,1), got {}", m.p1))?;

        let c = &self.constraints;
        for (key, v) in [("alpha0", c.alpha0), ("alpha1", c.alpha1)] {
            check(v > 0.0 && v < 1.0, "constraints", key, || format!("must lie in (0,1), got {v}"))?;
        }
        for (key, v) in [("beta0", c.beta0), ("beta1", c.beta1)] {
            check(v > 0.0 && v.is_finite(), "constraints", key, || format!("must be positive, got {v}"))?;
        }

        let d = &self.design;
        check(d.horizon >= 1, "design", "horizon", || "N must be at least 1".into())?;
        check(d.grid_min < d.grid_max, "design", "grid_max", || "must exceed grid_min".into())?;
        check(d.grid_points >= 3, "design", "grid_points", || "need at least 3 points".into())?;
        let grid = StateGrid::new(d.grid_min, d.grid_max, d.grid_points.max(3));
        check(
            grid.as_ref().is_ok_and(|g| g.origin_index().is_ok()),
            "design",
            "grid_points",
            || {
                format!(
                    "the grid [{}, {}] with {} points does not contain the initial state 0; \
                     use a symmetric interval with an odd number of points",
                    d.grid_min, d.grid_max, d.grid_points
                )
            },
        )?;
        check(d.n_samp >= 1, "design", "n_samp", || "must be at least 1".into())?;
        check(d.tolerance > 0.0 && d.tolerance < 1.0, "design", "tolerance", || "must lie in (0,1)".into())?;
        check(d.theta_bins >= 1, "design", "theta_bins", || "must be at least 1".into())?;
        check(d.theta_span > 0.0, "design", "theta_span", || "must be positive".into())?;
        check(d.dual_rel_tol > 0.0, "design", "dual_rel_tol", || "must be positive".into())?;

        check(self.simulate.runs >= 1, "simulate", "runs", || "must be at least 1".into())?;
        Ok(())
    }

    pub fn model(&self) -> Result<HypothesisModel> {
        let m = &self.model;
        HypothesisModel::new(m.sigma, [m.m0, m.m1], [m.v0, m.v1], m.p1)
    }

    pub fn grid(&self) -> Result<StateGrid> {
        StateGrid::new(self.design.grid_min, self.design.grid_max, self.design.grid_points)
    }

    pub fn design_spec(&self) -> Result<DesignSpec> {
        let c = &self.constraints;
        let d = &self.design;
        let spec = DesignSpec {
            constraints: ErrorConstraints::new([c.alpha0, c.alpha1], [c.beta0, c.beta1])?,
            horizon: d.horizon,
            grid: self.grid()?,
            n_samp: d.n_samp,
            seed: d.seed,
            tolerance: d.tolerance,
            evaluation: EvaluationSettings {
                theta_bins: d.theta_bins,
                theta_span: d.theta_span,
                kernel: d.kernel,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Replaces every seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.network.seed = seed;
        self.design.seed = seed;
        self.simulate.seed = seed;
    }
}

/// 1-based line of byte `offset`.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line of `key` inside `[section]`, or of the section header when
/// the key is absent.
fn locate_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_experiment() {
        let c = RunConfig::parse("", "default").unwrap();
        assert_eq!(c.network.nodes, 20);
        assert_eq!(c.network.d_com, 0.3);
        assert_eq!(c.design.horizon, 50);
        assert_eq!(c.design.grid_points, 1901);
        assert_eq!(c.design.n_samp, 50_000);
        assert_eq!(c.constraints.alpha0, 1e-3);
        assert_eq!(c.constraints.beta1, 0.1);
        assert_eq!(c.model().unwrap(), HypothesisModel::reference());
        assert_eq!(c.grid().unwrap().origin_index().unwrap(), 950);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_line() {
        let text = "[model]\nsigma = 4.0\n\n[constraints]\nalpah0 = 0.01\n";
        match RunConfig::parse(text, "run.toml") {
            Err(Error::Config { line, message, .. }) => {
                assert_eq!(line, 5);
                assert!(message.contains("alpah0"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_point_at_their_line() {
        let text = "[network]\nnodes = 5\nd_com = -0.3\n";
        match RunConfig::parse(text, "run.toml") {
            Err(Error::Config { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.starts_with("network.d_com"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let text = "[design]\ngrid_points = 1900\n";
        let err = RunConfig::parse(text, "run.toml").unwrap_err().to_string();
        assert!(err.contains("run.toml:2") && err.contains("initial state 0"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.design.solver = SolverChoice::Clarabel;
        c.network.edge_list = Some("net.txt".into());
        assert_eq!(RunConfig::parse(&c.to_toml(), "x").unwrap(), c);
    }
}
