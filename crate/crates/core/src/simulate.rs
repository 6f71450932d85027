//! Monte Carlo validation of per-node policies running online on the whole
//! network.
//!
//! Every trial draws a hypothesis and a parameter shared by all sensors, runs
//! the consensus+innovations recursion to the horizon and lets each node stop
//! according to its own policy table. Stopped nodes keep relaying. Trials use
//! independent ChaCha streams keyed by trial id and are aggregated in fixed
//! chunks, so results do not depend on the number of workers.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HypothesisModel;
use crate::network::{consensus_step, WeightMatrix};
use crate::policy::PolicyTable;

/// Trials per aggregation chunk.
const CHUNK: u64 = 1024;

/// What one node did in one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeOutcome {
    /// `τ^k ∈ 1..=N`.
    pub stop_time: usize,
    pub decision: usize,
    pub estimate: f64,
    pub squared_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub hypothesis: usize,
    pub theta: f64,
    /// Node drawn for the network average.
    pub selected: usize,
    pub nodes: Vec<NodeOutcome>,
}

/// Per-trial generator: master seed, stream = trial id.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Checks that the policies belong together and to `W`.
pub fn check_policies(policies: &[PolicyTable], w: &WeightMatrix) -> Result<()> {
    let k = w.matrix().nrows();
    if policies.len() != k {
        return Err(Error::Mismatch(format!("{} policies for {k} nodes", policies.len())));
    }
    for (node, p) in policies.iter().enumerate() {
        if p.node != node {
            return Err(Error::Mismatch(format!("policy at position {node} belongs to node {}", p.node)));
        }
        if p.horizon != policies[0].horizon || p.grid != policies[0].grid {
            return Err(Error::Mismatch(format!("policy of node {node} uses a different horizon or grid")));
        }
        p.validate()?;
    }
    Ok(())
}

/// Runs one network-wide trial.
pub fn run_trial<R: Rng + ?Sized>(
    trial: u64,
    policies: &[PolicyTable],
    w: &WeightMatrix,
    model: &HypothesisModel,
    rng: &mut R,
) -> TrialRecord {
    let k = policies.len();
    let horizon = policies[0].horizon;
    let hypothesis = usize::from(rng.random::<f64>() < model.prior_prob(1));
    let z: f64 = rng.sample(StandardNormal);
    let theta = model.prior_mean(hypothesis) + model.prior_std(hypothesis) * z;
    let selected = rng.random_range(0..k);
    let sigma = model.sigma();

    let mut state = vec![0.0; k];
    let mut samples = vec![0.0; k];
    let mut scratch = Vec::with_capacity(k);
    let mut nodes: Vec<Option<NodeOutcome>> = vec![None; k];
    for n in 1..=horizon {
        for x in samples.iter_mut() {
            *x = theta + sigma * rng.sample::<f64, _>(StandardNormal);
        }
        consensus_step(w, n, &mut state, &samples, &mut scratch);
        for (node, slot) in nodes.iter_mut().enumerate() {
            if slot.is_some() {
                continue;
            }
            let (stop, decide, estimate) = policies[node].lookup(n, state[node]);
            if stop {
                *slot = Some(NodeOutcome {
                    stop_time: n,
                    decision: usize::from(decide),
                    estimate,
                    squared_error: (theta - estimate).powi(2),
                });
            }
        }
    }
    TrialRecord {
        trial,
        hypothesis,
        theta,
        selected,
        nodes: nodes
            .into_iter()
            .map(|o| o.expect("the stop mask at the horizon is all ones"))
            .collect(),
    }
}

/// Running sums for one node (or the network average).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Tally {
    count: [u64; 2],
    wrong: [u64; 2],
    /// Σ (θ - θ̂)² 1{δ = i} and its square, under `H_i`.
    sq: [f64; 2],
    sq2: [f64; 2],
    tau: f64,
    tau2: f64,
}

impl Tally {
    fn push(&mut self, hypothesis: usize, o: &NodeOutcome) {
        let i = hypothesis;
        self.count[i] += 1;
        if o.decision != i {
            self.wrong[i] += 1;
        } else {
            self.sq[i] += o.squared_error;
            self.sq2[i] += o.squared_error * o.squared_error;
        }
        let t = o.stop_time as f64;
        self.tau += t;
        self.tau2 += t * t;
    }

    fn merge(&mut self, other: &Tally) {
        for i in 0..2 {
            self.count[i] += other.count[i];
            self.wrong[i] += other.wrong[i];
            self.sq[i] += other.sq[i];
            self.sq2[i] += other.sq2[i];
        }
        self.tau += other.tau;
        self.tau2 += other.tau2;
    }

    fn summary(&self, node: Option<usize>) -> NodeSummary {
        let mut out = NodeSummary {
            node,
            ..Default::default()
        };
        for i in 0..2 {
            let c = self.count[i] as f64;
            if c == 0.0 {
                continue;
            }
            let a = self.wrong[i] as f64 / c;
            out.alpha[i] = a;
            out.alpha_se[i] = (a * (1.0 - a) / c).sqrt();
            let m = self.sq[i] / c;
            out.mse[i] = m;
            out.mse_se[i] = ((self.sq2[i] / c - m * m).max(0.0) / c).sqrt();
        }
        let total = (self.count[0] + self.count[1]) as f64;
        out.asn = self.tau / total;
        out.asn_se = ((self.tau2 / total - out.asn * out.asn).max(0.0) / total).sqrt();
        out
    }
}

/// Empirical metrics with their Monte Carlo standard errors. `node` is
/// `None` for the network average.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeSummary {
    pub node: Option<usize>,
    pub alpha: [f64; 2],
    /// `E[(θ - θ̂)² 1{δ = i} | H_i]`.
    pub mse: [f64; 2],
    pub asn: f64,
    pub alpha_se: [f64; 2],
    pub mse_se: [f64; 2],
    pub asn_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub nodes: Vec<NodeSummary>,
    pub network: NodeSummary,
    pub runs: u64,
    pub seed: u64,
    /// Trials drawn under `H_0` and `H_1`.
    pub hypothesis_counts: [u64; 2],
}

impl SimulationSummary {
    /// One row per node plus a `network` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,alpha0,alpha1,mse0,mse1,asn,runs,seed\n");
        for s in self.nodes.iter().chain(std::iter::once(&self.network)) {
            let label = s.node.map_or_else(|| "network".to_string(), |k| k.to_string());
            writeln!(
                out,
                "{label},{},{},{},{},{},{},{}",
                s.alpha[0], s.alpha[1], s.mse[0], s.mse[1], s.asn, self.runs, self.seed
            )
            .expect("writing to a String");
        }
        out
    }
}

fn tally_records(records: &[TrialRecord], k: usize) -> (Vec<Tally>, Tally) {
    let mut nodes = vec![Tally::default(); k];
    let mut network = Tally::default();
    for r in records {
        for (t, o) in nodes.iter_mut().zip(&r.nodes) {
            t.push(r.hypothesis, o);
        }
        network.push(r.hypothesis, &r.nodes[r.selected]);
    }
    (nodes, network)
}

/// Summarizes an explicit set of trial records.
///
/// Sums run over consecutive chunks in the order `monte_carlo` uses, so the
/// records of trials `0..runs` reproduce its summary bit for bit.
pub fn summarize(records: &[TrialRecord], seed: u64) -> SimulationSummary {
    let k = records.first().map_or(0, |r| r.nodes.len());
    let mut nodes = vec![Tally::default(); k];
    let mut network = Tally::default();
    for chunk in records.chunks(CHUNK as usize) {
        let (n, net) = tally_records(chunk, k);
        for (a, b) in nodes.iter_mut().zip(&n) {
            a.merge(b);
        }
        network.merge(&net);
    }
    finish(&nodes, &network, records.len() as u64, seed)
}

fn finish(nodes: &[Tally], network: &Tally, runs: u64, seed: u64) -> SimulationSummary {
    SimulationSummary {
        nodes: nodes.iter().enumerate().map(|(k, t)| t.summary(Some(k))).collect(),
        network: network.summary(None),
        runs,
        seed,
        hypothesis_counts: network.count,
    }
}

/// Trials `range` with their records, for dumps and inspection.
pub fn simulate_trials(
    policies: &[PolicyTable],
    w: &WeightMatrix,
    model: &HypothesisModel,
    range: std::ops::Range<u64>,
    seed: u64,
) -> Result<Vec<TrialRecord>> {
    check_policies(policies, w)?;
    Ok(range
        .map(|t| run_trial(t, policies, w, model, &mut trial_rng(seed, t)))
        .collect())
}

/// Runs `runs` trials on `workers` threads (0 = all cores).
pub fn monte_carlo(
    policies: &[PolicyTable],
    w: &WeightMatrix,
    model: &HypothesisModel,
    runs: u64,
    seed: u64,
    workers: usize,
) -> Result<SimulationSummary> {
    if runs == 0 {
        return Err(Error::InvalidParameter("runs must be at least 1".into()));
    }
    check_policies(policies, w)?;
    let k = policies.len();
    let chunks: Vec<u64> = (0..runs.div_ceil(CHUNK)).collect();
    let work = || {
        chunks
            .par_iter()
            .map(|&c| {
                let end = ((c + 1) * CHUNK).min(runs);
                let records: Vec<TrialRecord> = (c * CHUNK..end)
                    .map(|t| run_trial(t, policies, w, model, &mut trial_rng(seed, t)))
                    .collect();
                tally_records(&records, k)
            })
            .collect::<Vec<_>>()
    };
    let parts = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?
        .install(work);
    let mut nodes = vec![Tally::default(); k];
    let mut network = Tally::default();
    for (n, net) in &parts {
        for (a, b) in nodes.iter_mut().zip(n) {
            a.merge(b);
        }
        network.merge(net);
    }
    Ok(finish(&nodes, &network, runs, seed))
}

/// Raw trial dump, one row per (trial, node).
pub fn records_to_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from("trial,hypothesis,theta,selected,node,stop_time,decision,estimate,squared_error\n");
    for r in records {
        for (k, o) in r.nodes.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{k},{},{},{},{}",
                r.trial, r.hypothesis, r.theta, r.selected, o.stop_time, o.decision, o.estimate, o.squared_error
            )
            .expect("writing to a String");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetworkGraph, StateStats};
    use crate::policy::{
        backward_induction, CostCoefficients, PosteriorTable, StateGrid, TransitionOperator,
    };

    fn zero_policies(k: usize, horizon: usize) -> (Vec<PolicyTable>, WeightMatrix, HypothesisModel) {
        let model = HypothesisModel::reference();
        let edges: Vec<(usize, usize)> = (1..k).map(|i| (i - 1, i)).collect();
        let g = NetworkGraph::from_edges(k, &edges).unwrap();
        let w = WeightMatrix::equal(&g);
        let stats = StateStats::compute(&w, model.sigma(), horizon).unwrap();
        let grid = StateGrid::new(-9.0, 9.0, 61).unwrap();
        let policies = (0..k)
            .map(|node| {
                let t = TransitionOperator::build(&model, &stats, node, &grid, 20, 1).unwrap();
                let p = PosteriorTable::build(&model, &stats, node, &grid).unwrap();
                backward_induction(node, &grid, &CostCoefficients::zero(), &t, &p).unwrap()
            })
            .collect();
        (policies, w, model)
    }

    #[test]
    fn zero_policies_stop_at_first_sample() {
        let (policies, w, model) = zero_policies(3, 4);
        let s = monte_carlo(&policies, &w, &model, 500, 3, 1).unwrap();
        for n in s.nodes.iter().chain([&s.network]) {
            assert_eq!(n.asn, 1.0);
            assert_eq!(n.asn_se, 0.0);
        }
    }

    #[test]
    fn single_run_matches_its_record() {
        let (policies, w, model) = zero_policies(3, 4);
        let s = monte_carlo(&policies, &w, &model, 1, 9, 1).unwrap();
        let r = simulate_trials(&policies, &w, &model, 0..1, 9).unwrap().remove(0);
        let h = r.hypothesis;
        assert_eq!(s.hypothesis_counts[h], 1);
        for (k, o) in r.nodes.iter().enumerate() {
            let n = &s.nodes[k];
            assert_eq!(n.alpha[h], f64::from(u8::from(o.decision != h)));
            let sq = if o.decision == h { o.squared_error } else { 0.0 };
            assert_eq!(n.mse[h], sq);
            assert_eq!(n.asn, o.stop_time as f64);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (policies, w, model) = zero_policies(3, 4);
        let a = monte_carlo(&policies, &w, &model, 3000, 5, 1).unwrap();
        let b = monte_carlo(&policies, &w, &model, 3000, 5, 3).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_policies_are_rejected() {
        let (mut policies, w, _) = zero_policies(3, 4);
        policies.pop();
        assert!(check_policies(&policies, &w).is_err());
    }
}
