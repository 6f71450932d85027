use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use seqjde::network::{
    consensus_step, generate_geometric_network, state_covariance_direct, NetworkGraph, StateStats, WeightMatrix,
};

/// Random connected graph: a random spanning tree plus extra edges.
fn connected_graph() -> impl Strategy<Value = NetworkGraph> {
    (1usize..=12)
        .prop_flat_map(|k| {
            let parents: Vec<BoxedStrategy<usize>> = (1..k).map(|c| (0..c).boxed()).collect();
            let extra = prop::collection::vec((0..k, 0..k), 0..2 * k);
            (Just(k), parents, extra)
        })
        .prop_map(|(k, parents, extra)| {
            let mut edges: Vec<(usize, usize)> = parents.iter().enumerate().map(|(c, &p)| (p, c + 1)).collect();
            edges.extend(extra.into_iter().filter(|(a, b)| a != b));
            edges.sort_unstable_by_key(|&(a, b)| (a.min(b), a.max(b)));
            edges.dedup_by_key(|&mut (a, b)| (a.min(b), a.max(b)));
            NetworkGraph::from_edges(k, &edges).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_rows_sum_to_one(g in connected_graph(), c in 0.01f64..1.0) {
        prop_assert!(g.is_connected());
        for w in [WeightMatrix::equal(&g), WeightMatrix::laplacian(&g, c).unwrap()] {
            for s in w.row_sums() {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equal_weights_are_nonnegative_and_local(g in connected_graph()) {
        let w = WeightMatrix::equal(&g);
        prop_assert!(w.is_nonnegative());
        for a in 0..g.node_count() {
            for b in 0..g.node_count() {
                let linked = a == b || g.neighbors(a).contains(&b);
                prop_assert_eq!(w.get(a, b) > 0.0, linked);
            }
        }
    }

    #[test]
    fn incremental_covariance_matches_power_sum(g in connected_graph(), sigma in 0.5f64..6.0) {
        let w = WeightMatrix::equal(&g);
        let stats = StateStats::compute(&w, sigma, 30).unwrap();
        for n in [1, 2, 7, 30] {
            let direct = state_covariance_direct(&w, sigma, n);
            for k in 0..g.node_count() {
                let d = direct[(k, k)];
                prop_assert!((stats.state_var(k, n) - d).abs() <= 1e-10 * d.max(1.0));
            }
        }
    }

    #[test]
    fn edge_list_round_trip(g in connected_graph()) {
        let back = NetworkGraph::parse_edge_list(&g.to_edge_list()).unwrap();
        prop_assert_eq!(back.edges(), g.edges());
        prop_assert_eq!(back.node_count(), g.node_count());
    }

    #[test]
    fn weight_csv_round_trip(g in connected_graph()) {
        let w = WeightMatrix::equal(&g);
        let back = WeightMatrix::from_csv(&w.to_csv()).unwrap();
        prop_assert_eq!(back.matrix(), w.matrix());
    }
}

#[test]
fn incremental_covariance_matches_power_sum_at_reference_scale() {
    let g = generate_geometric_network(20, 0.3, 1).unwrap();
    let w = WeightMatrix::equal(&g);
    let stats = StateStats::compute(&w, 4.0, 50).unwrap();
    for n in 1..=50 {
        let direct = state_covariance_direct(&w, 4.0, n);
        for k in 0..20 {
            assert!((stats.state_var(k, n) - direct[(k, k)]).abs() < 1e-10, "n={n} k={k}");
        }
    }
}

#[test]
fn state_variance_does_not_increase_on_generated_graphs() {
    for seed in 0..10 {
        let g = generate_geometric_network(20, 0.3, seed).unwrap();
        let stats = StateStats::compute(&WeightMatrix::equal(&g), 4.0, 50).unwrap();
        for k in 0..20 {
            for n in 2..=50 {
                assert!(stats.state_var(k, n) <= stats.state_var(k, n - 1) * (1.0 + 1e-12), "seed {seed} k {k} n {n}");
            }
        }
    }
}

#[test]
fn empirical_state_moments_match() {
    let g = generate_geometric_network(5, 0.4, 3).unwrap();
    let w = WeightMatrix::equal(&g);
    let (sigma, theta, horizon, runs) = (4.0, 1.7, 12, 100_000);
    let stats = StateStats::compute(&w, sigma, horizon).unwrap();
    let noise = Normal::new(theta, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = g.node_count();
    let (mut sum, mut sum_sq) = (vec![vec![0.0; k]; horizon + 1], vec![vec![0.0; k]; horizon + 1]);
    let (mut state, mut samples, mut scratch) = (vec![0.0; k], vec![0.0; k], Vec::new());
    for _ in 0..runs {
        state.iter_mut().for_each(|s| *s = 0.0);
        for n in 1..=horizon {
            samples.iter_mut().for_each(|x| *x = noise.sample(&mut rng));
            consensus_step(&w, n, &mut state, &samples, &mut scratch);
            for a in 0..k {
                sum[n][a] += state[a];
                sum_sq[n][a] += state[a] * state[a];
            }
        }
    }
    let r = runs as f64;
    for n in [1, 4, horizon] {
        for a in 0..k {
            let mean = sum[n][a] / r;
            let var = sum_sq[n][a] / r - mean * mean;
            let expected = stats.state_var(a, n);
            assert!((mean - theta).abs() < 4.0 * (expected / r).sqrt(), "mean n={n} k={a}: {mean}");
            assert!((var / expected - 1.0).abs() < 0.05, "var n={n} k={a}: {var} vs {expected}");
        }
    }
}

#[test]
fn single_node_variance_is_exact() {
    let g = NetworkGraph::from_edges(1, &[]).unwrap();
    let stats = StateStats::compute(&WeightMatrix::equal(&g), 4.0, 50).unwrap();
    for n in 1..=50 {
        assert!((stats.state_var(0, n) - 16.0 / n as f64).abs() < 1e-12);
    }
}
