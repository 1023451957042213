mod common;

use cgp::graph::{generate_sbm, load_dataset, normalize_adjacency, write_dataset, SbmConfig};
use cgp::sparsify::{ceil_count, magnitude_prune, regrow, schedule_rate, PruneSchedule, PruneScope};
use cgp::tensor::{spmm, DenseMatrix, SparseMatrix};
use common::{prune_oracle, regrow_oracle};
use proptest::prelude::*;

fn scores_and_mask(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1..=max).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..5).prop_map(|v| v as f64 * 0.5), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prune_matches_oracle((scores, active) in scores_and_mask(64), target in 0.0..0.999f64) {
        let got = magnitude_prune(&scores, &active, target, PruneScope::Global, &[]).unwrap();
        prop_assert_eq!(&got, &prune_oracle(&scores, &active, target, &[0..scores.len()]));
        prop_assert_eq!(got.iter().filter(|&&a| !a).count(), ceil_count(target, scores.len()));
    }

    #[test]
    fn layerwise_prune_matches_oracle(
        (scores, active) in scores_and_mask(64),
        target in 0.0..0.999f64,
        cut in 0.0..1.0f64,
    ) {
        let n = scores.len();
        let c = (cut * n as f64) as usize;
        let got = magnitude_prune(&scores, &active, target, PruneScope::Layerwise, &[c, n - c]).unwrap();
        prop_assert_eq!(got, prune_oracle(&scores, &active, target, &[0..c, c..n]));
    }

    #[test]
    fn regrow_matches_oracle(
        (keep, active) in scores_and_mask(64),
        add_seed in prop::collection::vec(0u8..4, 64),
        rate in 0.0..0.999f64,
    ) {
        let add: Vec<f64> = add_seed[..keep.len()].iter().map(|&v| v as f64).collect();
        let got = regrow(&active, &keep, &add, rate).unwrap();
        prop_assert_eq!(&got, &regrow_oracle(&active, &keep, &add, rate));
        prop_assert_eq!(
            got.iter().filter(|&&a| a).count(),
            active.iter().filter(|&&a| a).count()
        );
    }

    #[test]
    fn schedule_is_monotone(p_f in 0.0..0.999f64, t0 in 0usize..10, dt in 1usize..10, n in 1usize..12) {
        let s = PruneSchedule { p_i: 0.0, p_f, t0, dt, n };
        let rates: Vec<f64> = s.events().map(|t| schedule_rate(&s, t).unwrap()).collect();
        prop_assert_eq!(rates.len(), n + 1);
        prop_assert!(rates.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*rates.last().unwrap(), p_f);
    }

    #[test]
    fn normalized_adjacency_invariants(seed in any::<u64>(), n in 3usize..40, p in 0.0..0.6f64) {
        let (g, _) = generate_sbm(&SbmConfig {
            n_nodes: n, n_classes: 2, d: 3, intra_p: p, inter_p: p / 2.0, feature_noise: 0.1, seed,
        }).unwrap();
        let na = normalize_adjacency(&g);
        let a = na.csr();
        prop_assert_eq!(a.nnz(), g.n_arcs() + n);
        prop_assert!(a.row_ptr().windows(2).all(|w| w[0] <= w[1]));
        for r in 0..n {
            let cols = &a.col_idx()[a.row_ptr()[r]..a.row_ptr()[r + 1]];
            prop_assert!(cols.windows(2).all(|w| w[0] < w[1]));
        }
        // Symmetric, and every arc maps to exactly one entry.
        let dense = a.to_dense();
        prop_assert_eq!(dense.max_abs_diff(&dense.transpose()), 0.0);
        let mut seen = vec![false; g.n_arcs()];
        for (e, arc) in na.entry_arc().iter().enumerate() {
            match arc {
                Some(k) => {
                    prop_assert!(!seen[*k]);
                    seen[*k] = true;
                    prop_assert_eq!(na.arc_entry()[*k], e);
                }
                None => prop_assert!(na.self_loop_positions().contains(&e)),
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        // Every row holds at least its self-loop.
        let ones = DenseMatrix::from_vec(n, 1, vec![1.0; n]).unwrap();
        let sums = spmm(a, &ones).unwrap();
        prop_assert!(sums.data().iter().all(|&s| s > 0.0 && s.is_finite()));
    }

    #[test]
    fn sparse_dense_round_trip(rows in 1usize..8, cols in 1usize..8, seed in prop::collection::vec(-2i8..3, 64)) {
        let data: Vec<f64> = seed.iter().take(rows * cols).map(|&v| v as f64).chain(std::iter::repeat(0.0)).take(rows * cols).collect();
        let d = DenseMatrix::from_vec(rows, cols, data).unwrap();
        let s = SparseMatrix::from_dense(&d);
        prop_assert_eq!(s.nnz(), d.data().iter().filter(|&&v| v != 0.0).count());
        prop_assert_eq!(s.to_dense(), d);
    }

    #[test]
    fn dataset_round_trip(seed in any::<u64>(), n in 4usize..30, d in 1usize..5) {
        let (g, splits) = generate_sbm(&SbmConfig {
            n_nodes: n, n_classes: 3.min(n), d, intra_p: 0.4, inter_p: 0.1, feature_noise: 0.7, seed,
        }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&g, &splits, dir.path()).unwrap();
        let (g2, s2) = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(g2.arcs(), g.arcs());
        prop_assert_eq!(g2.labels(), g.labels());
        prop_assert_eq!(g2.features(), g.features());
        prop_assert_eq!(s2, splits);
    }
}

#[test]
fn sbm_is_deterministic_per_seed() {
    let cfg = SbmConfig {
        n_nodes: 50,
        n_classes: 3,
        d: 4,
        intra_p: 0.3,
        inter_p: 0.05,
        feature_noise: 0.5,
        seed: 42,
    };
    let (a, sa) = generate_sbm(&cfg).unwrap();
    let (b, sb) = generate_sbm(&cfg).unwrap();
    assert_eq!(a.arcs(), b.arcs());
    assert_eq!(a.features(), b.features());
    assert_eq!(sa, sb);
    let (c, _) = generate_sbm(&SbmConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a.arcs(), c.arcs());
}
