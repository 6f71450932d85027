//! Command-line front end: `generate`, `design`, `simulate` and `report`.
//!
//! All artifacts live in one output directory:
//!
//! ```text
//! network.txt            edge list with coordinates
//! weights.csv            dense weight matrix
//! policies/node_NNN.json policy table, coefficients and input fingerprint
//! design_log.jsonl       one design report per node
//! results.csv            per-node and network-average Monte Carlo metrics
//! summary.json           the same with standard errors
//! trials.csv             raw trial dump (optional)
//! plots/*.svg            policy regions and results scatter
//! ```

pub mod config;
pub mod plot;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{
    dual_ascent_fallback, solve_coefficients, solve_coefficients_cutting_plane, ClarabelSolver, CuttingPlaneSettings,
    DesignMethod, DesignReport, DesignSpec, DualAscentSettings, NodeContext,
};
use crate::error::{Error, Result};
use crate::model::HypothesisModel;
use crate::network::{generate_geometric_network_capped, NetworkGraph, StateStats, WeightMatrix};
use crate::policy::{CostCoefficients, PolicyTable, StateGrid};
use crate::simulate::{monte_carlo, records_to_csv, simulate_trials, SimulationSummary};

pub use config::{RunConfig, SolverChoice, WeightScheme};

#[derive(Debug, Parser)]
#[command(name = "seqjde", version, about = "Distributed sequential joint detection and estimation")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true, value_name = "SEED")]
    pub seed: Option<u64>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the network and its weight matrix.
    Generate,
    /// Design the policy of every node.
    Design {
        /// Use projected dual ascent instead of the linear program.
        #[arg(long)]
        fallback_dual: bool,
        /// Only these nodes (comma separated).
        #[arg(long, value_delimiter = ',')]
        nodes: Option<Vec<usize>>,
    },
    /// Validate the designed policies by Monte Carlo simulation.
    Simulate {
        /// Override the number of runs.
        #[arg(long)]
        runs: Option<u64>,
        /// Write every trial to trials.csv.
        #[arg(long)]
        dump_trials: bool,
    },
    /// Print design and simulation summaries and redraw the plots.
    Report,
    /// Print the effective configuration.
    Config,
}

/// Policy file: the table, its coefficients and the inputs it belongs to.
/// Solver statistics and timings live in the design log, which keeps policy
/// files identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub fingerprint: String,
    pub method: DesignMethod,
    pub coefficients: CostCoefficients,
    pub policy: PolicyTable,
}

/// SHA-256 over `W`, the model, the grid and the horizon.
pub fn fingerprint(w: &WeightMatrix, model: &HypothesisModel, grid: &StateGrid, horizon: usize) -> String {
    let mut h = Sha256::new();
    let m = w.matrix();
    h.update((m.nrows() as u64).to_le_bytes());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            h.update(m[(r, c)].to_bits().to_le_bytes());
        }
    }
    let params = [
        model.sigma(),
        model.prior_mean(0),
        model.prior_mean(1),
        model.prior_std(0),
        model.prior_std(1),
        model.prior_prob(1),
        grid.lower(),
        grid.upper(),
    ];
    for p in params {
        h.update(p.to_bits().to_le_bytes());
    }
    h.update((grid.len() as u64).to_le_bytes());
    h.update((horizon as u64).to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct Paths {
    root: PathBuf,
}

impl Paths {
    fn network(&self) -> PathBuf {
        self.root.join("network.txt")
    }
    fn weights(&self) -> PathBuf {
        self.root.join("weights.csv")
    }
    fn policies(&self) -> PathBuf {
        self.root.join("policies")
    }
    fn policy(&self, node: usize) -> PathBuf {
        self.policies().join(format!("node_{node:03}.json"))
    }
    fn design_log(&self) -> PathBuf {
        self.root.join("design_log.jsonl")
    }
    fn results(&self) -> PathBuf {
        self.root.join("results.csv")
    }
    fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }
    fn trials(&self) -> PathBuf {
        self.root.join("trials.csv")
    }
    fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}

fn read(path: &Path, hint: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("cannot read {}: {e}{hint}", path.display())))
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("cannot write {}: {e}", path.display())))
    })
}

/// Loaded inputs shared by `design` and `simulate`.
struct Inputs {
    graph: NetworkGraph,
    weights: WeightMatrix,
    model: HypothesisModel,
    grid: StateGrid,
}

fn weights_for(config: &RunConfig, graph: &NetworkGraph) -> Result<WeightMatrix> {
    match config.network.weights {
        WeightScheme::Equal => Ok(WeightMatrix::equal(graph)),
        WeightScheme::Laplacian => WeightMatrix::laplacian(graph, config.network.laplacian_c),
    }
}

fn load_inputs(config: &RunConfig, paths: &Paths) -> Result<Inputs> {
    let (path, hint) = match &config.network.edge_list {
        Some(p) => (p.clone(), ""),
        None => (paths.network(), "; run `seqjde generate` first or set network.edge_list"),
    };
    let graph = NetworkGraph::parse_edge_list(&read(&path, hint)?)?;
    graph.ensure_connected()?;
    let weights = weights_for(config, &graph)?;
    weights.ensure_nonnegative()?;
    Ok(Inputs {
        graph,
        weights,
        model: config.model()?,
        grid: config.grid()?,
    })
}

pub fn cmd_generate(config: &RunConfig, out: &Path) -> Result<()> {
    let paths = Paths { root: out.to_path_buf() };
    let n = &config.network;
    let graph = match &n.edge_list {
        Some(p) => NetworkGraph::parse_edge_list(&read(p, "")?)?,
        None => generate_geometric_network_capped(n.nodes, n.d_com, n.seed, n.max_attempts)?,
    };
    graph.ensure_connected()?;
    let weights = weights_for(config, &graph)?;
    write(&paths.network(), &graph.to_edge_list())?;
    write(&paths.weights(), &weights.to_csv())?;
    let degrees: Vec<usize> = (0..graph.node_count()).map(|k| graph.degree(k)).collect();
    let mean = degrees.iter().sum::<usize>() as f64 / degrees.len() as f64;
    println!(
        "nodes {}  edges {}  connected yes  degree min {} mean {mean:.2} max {}",
        graph.node_count(),
        graph.edges().len(),
        degrees.iter().min().unwrap_or(&0),
        degrees.iter().max().unwrap_or(&0)
    );
    if weights.is_nonnegative() {
        println!("weights {:?}: nonnegative, rows sum to 1", config.network.weights);
    } else {
        println!(
            "weights {:?}: NEGATIVE entries (min {:e}); policy design will reject this matrix",
            config.network.weights,
            weights.min_entry()
        );
    }
    println!("wrote {} and {}", paths.network().display(), paths.weights().display());
    Ok(())
}

fn design_node(
    config: &RunConfig,
    spec: &DesignSpec,
    inputs: &Inputs,
    stats: &StateStats,
    node: usize,
    fallback_dual: bool,
) -> Result<(PolicyFile, DesignReport)> {
    let started = Instant::now();
    let ctx = NodeContext::build(&inputs.model, stats, node, spec)?;
    let outcome = if fallback_dual {
        let settings = DualAscentSettings {
            max_iters: config.design.dual_max_iters,
            rel_tol: config.design.dual_rel_tol,
            ..Default::default()
        };
        dual_ascent_fallback(spec, &ctx, &settings)?
    } else {
        match config.design.solver {
            SolverChoice::CuttingPlane => solve_coefficients_cutting_plane(
                spec,
                &ctx,
                &CuttingPlaneSettings {
                    tolerance: config.design.tolerance,
                    ..Default::default()
                },
            )?,
            SolverChoice::Clarabel => solve_coefficients(spec, &ctx, &ClarabelSolver::new(config.design.tolerance))?,
        }
    };
    log::info!("node {node} designed in {:.1?}", started.elapsed());
    let report = outcome.report(&spec.constraints);
    let file = PolicyFile {
        fingerprint: fingerprint(&inputs.weights, &inputs.model, &inputs.grid, spec.horizon),
        method: outcome.method,
        coefficients: outcome.coefficients,
        policy: outcome.policy,
    };
    Ok((file, report))
}

pub fn cmd_design(config: &RunConfig, out: &Path, fallback_dual: bool, nodes: Option<&[usize]>) -> Result<()> {
    let paths = Paths { root: out.to_path_buf() };
    let inputs = load_inputs(config, &paths)?;
    let spec = config.design_spec()?;
    let stats = StateStats::compute(&inputs.weights, inputs.model.sigma(), spec.horizon)?;
    let all: Vec<usize> = (0..inputs.graph.node_count()).collect();
    let selected = nodes.unwrap_or(&all);
    for &k in selected {
        stats.check_node(k)?;
    }
    fs::create_dir_all(paths.policies())?;
    fs::create_dir_all(paths.plots())?;
    let mut log_file = fs::File::create(paths.design_log())?;
    let mut failures = Vec::new();
    // Nodes run one after another; each design parallelizes internally and
    // holds its kernels in memory only while it runs.
    for &node in selected {
        match design_node(config, &spec, &inputs, &stats, node, fallback_dual) {
            Ok((file, r)) => {
                println!(
                    "node {node:3}: λ = [{:.4e}, {:.4e}] μ = [{:.4e}, {:.4e}]  α = [{:.3e}, {:.3e}]  β = [{:.4}, {:.4}]  ASN {:.3}",
                    r.coefficients.lambda[0],
                    r.coefficients.lambda[1],
                    r.coefficients.mu[0],
                    r.coefficients.mu[1],
                    r.evaluated.alpha[0],
                    r.evaluated.alpha[1],
                    r.evaluated.mse[0],
                    r.evaluated.mse[1],
                    r.evaluated.asn
                );
                writeln!(log_file, "{}", serde_json::to_string(&r)?)?;
                write(&paths.policy(node), &serde_json::to_string(&file)?)?;
                write(
                    &paths.plots().join(format!("policy_node_{node:03}.svg")),
                    &plot::policy_regions(&file.policy),
                )?;
            }
            Err(e) => {
                log::error!("node {node}: {e}");
                writeln!(log_file, "{}", serde_json::json!({ "node": node, "error": e.to_string() }))?;
                failures.push(node);
            }
        }
    }
    if failures.is_empty() {
        println!("wrote {} policies to {}", selected.len(), paths.policies().display());
        Ok(())
    } else {
        Err(Error::Solver(format!("design failed for nodes {failures:?}; see {}", paths.design_log().display())))
    }
}

fn load_policies(paths: &Paths, inputs: &Inputs, horizon: usize) -> Result<Vec<PolicyTable>> {
    let expected = fingerprint(&inputs.weights, &inputs.model, &inputs.grid, horizon);
    (0..inputs.graph.node_count())
        .map(|node| {
            let path = paths.policy(node);
            let file: PolicyFile = serde_json::from_str(&read(&path, "; run `seqjde design` first")?)?;
            if file.fingerprint != expected {
                return Err(Error::Mismatch(format!(
                    "{} was designed for a different network, model, grid or horizon",
                    path.display()
                )));
            }
            file.policy.validate()?;
            Ok(file.policy)
        })
        .collect()
}

fn constraint_lines(config: &RunConfig) -> [Option<f64>; 5] {
    let c = &config.constraints;
    [Some(c.alpha0), Some(c.alpha1), Some(c.beta0), Some(c.beta1), None]
}

pub fn cmd_simulate(config: &RunConfig, out: &Path, dump_trials: bool) -> Result<SimulationSummary> {
    let paths = Paths { root: out.to_path_buf() };
    let inputs = load_inputs(config, &paths)?;
    let policies = load_policies(&paths, &inputs, config.design.horizon)?;
    let s = &config.simulate;
    let started = Instant::now();
    let summary = monte_carlo(&policies, &inputs.weights, &inputs.model, s.runs, s.seed, s.workers)?;
    log::info!("{} runs in {:.1?}", s.runs, started.elapsed());
    write(&paths.results(), &summary.to_csv())?;
    write(&paths.summary(), &serde_json::to_string_pretty(&summary)?)?;
    write(
        &paths.plots().join("results.svg"),
        &plot::results_scatter(&summary, constraint_lines(config)),
    )?;
    if dump_trials || s.dump_trials {
        let records = simulate_trials(&policies, &inputs.weights, &inputs.model, 0..s.runs, s.seed)?;
        write(&paths.trials(), &records_to_csv(&records))?;
    }
    print_results(&summary);
    println!("wrote {}", paths.results().display());
    Ok(summary)
}

fn print_results(summary: &SimulationSummary) {
    println!("{:>8} {:>11} {:>11} {:>9} {:>9} {:>8}", "node", "alpha0", "alpha1", "mse0", "mse1", "asn");
    for s in summary.nodes.iter().chain([&summary.network]) {
        let label = s.node.map_or_else(|| "network".to_string(), |k| k.to_string());
        println!(
            "{label:>8} {:>11.3e} {:>11.3e} {:>9.4} {:>9.4} {:>8.3}",
            s.alpha[0], s.alpha[1], s.mse[0], s.mse[1], s.asn
        );
    }
}

pub fn cmd_report(config: &RunConfig, out: &Path) -> Result<()> {
    let paths = Paths { root: out.to_path_buf() };
    let log = read(&paths.design_log(), "; run `seqjde design` first")?;
    println!("design ({}):", paths.design_log().display());
    for line in log.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<DesignReport>(line) {
            Ok(r) => println!(
                "  node {:3} {:?}: λ = [{:.4e}, {:.4e}] μ = [{:.4e}, {:.4e}] objective {:.4}  evaluated α = [{:.3e}, {:.3e}] β = [{:.4}, {:.4}] ASN {:.3}",
                r.node,
                r.method,
                r.coefficients.lambda[0],
                r.coefficients.lambda[1],
                r.coefficients.mu[0],
                r.coefficients.mu[1],
                r.objective,
                r.evaluated.alpha[0],
                r.evaluated.alpha[1],
                r.evaluated.mse[0],
                r.evaluated.mse[1],
                r.evaluated.asn
            ),
            Err(_) => println!("  {line}"),
        }
    }
    for entry in fs::read_dir(paths.policies())? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let file: PolicyFile = serde_json::from_str(&read(&path, "")?)?;
            let node = file.policy.node;
            write(
                &paths.plots().join(format!("policy_node_{node:03}.svg")),
                &plot::policy_regions(&file.policy),
            )?;
        }
    }
    if paths.summary().exists() {
        let summary: SimulationSummary = serde_json::from_str(&read(&paths.summary(), "")?)?;
        println!("simulation ({} runs, seed {}):", summary.runs, summary.seed);
        print_results(&summary);
        write(
            &paths.plots().join("results.svg"),
            &plot::results_scatter(&summary, constraint_lines(config)),
        )?;
    } else {
        println!("no simulation results yet; run `seqjde simulate`");
    }
    println!("plots in {}", paths.plots().display());
    Ok(())
}

/// Loads the configuration and applies the global overrides.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    if let Some(w) = cli.workers {
        config.simulate.workers = w;
    }
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = effective_config(cli)?;
    if let Some(w) = cli.workers {
        // The global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    match &cli.command {
        Command::Generate => cmd_generate(&config, &cli.out),
        Command::Design { fallback_dual, nodes } => cmd_design(&config, &cli.out, *fallback_dual, nodes.as_deref()),
        Command::Simulate { runs, dump_trials } => {
            if let Some(r) = runs {
                config.simulate.runs = *r;
            }
            cmd_simulate(&config, &cli.out, *dump_trials).map(|_| ())
        }
        Command::Report => cmd_report(&config, &cli.out),
        Command::Config => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
