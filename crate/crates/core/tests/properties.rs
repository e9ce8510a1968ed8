use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rankformer::baselines::lightgcn_layer;
use rankformer::data::{apply_k_core, RawInteractions};
use rankformer::eval::{ndcg_at_k, recall_at_k, top_k};
use rankformer::oracle::{naive_layer, naive_normalizers, naive_weights};
use rankformer::rankformer::{
    attention_step, compute_benchmarks, normalize_rows, normalizers_closed_form, Normalizer, RankformerConfig,
};
use rankformer::synthetic::{random_embeddings, random_graph};
use rankformer::{EmbeddingMatrix, InteractionGraph};

fn instance() -> impl Strategy<Value = (usize, usize, usize, f64, u64)> {
    (1usize..20, 2usize..20, 1usize..6, 0.05f64..0.9, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fast_layer_matches_pairwise_oracle(
        (n, m, d, density, seed) in instance(),
        tau in prop::sample::select(vec![0.1, 0.3, 0.5, 1.0]),
        alpha in prop::sample::select(vec![0.5, 1.0, 2.0, 3.5]),
        normalize in any::<bool>(),
        unit in any::<bool>(),
    ) {
        let g = random_graph(n, m, density, seed);
        let z = random_embeddings(&g, d, seed ^ 1);
        let cfg = RankformerConfig {
            tau,
            alpha,
            normalize_embeddings: normalize,
            normalizer: if unit { Normalizer::Unit } else { Normalizer::AbsWeightSum },
            ..Default::default()
        };
        let fast = attention_step(&g, &z, &cfg).unwrap();
        let slow = naive_layer(&g, &z, &cfg).unwrap();
        prop_assert!(fast.max_rel_row_diff(&slow) <= 1e-9, "diff {}", fast.max_rel_row_diff(&slow));
    }

    #[test]
    fn closed_form_normalizers_match_abs_sums(
        (n, m, d, density, seed) in instance(),
        alpha in 2.0f64..4.0,
    ) {
        let g = random_graph(n, m, density, seed);
        let z = normalize_rows(&random_embeddings(&g, d, seed ^ 2), 1e-12).matrix;
        let bench = compute_benchmarks(&g, &z);
        let (cu, ci) = normalizers_closed_form(&g, &z, &bench, alpha, 0.0);
        let (nu, ni) = naive_normalizers(&naive_weights(&g, &z, alpha), 0.0);
        for (a, b) in cu.iter().zip(&nu).chain(ci.iter().zip(&ni)) {
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{a} vs {b}");
        }
        // Each side of a user's row sums to the benchmark gap.
        let omega = naive_weights(&g, &z, alpha);
        for u in 0..n {
            let gap = bench.b_pos[u] - bench.b_neg[u] + alpha;
            let pos: f64 = g.user_items(u).iter().map(|&i| omega[[u, i]]).sum();
            let neg: f64 = (0..m).filter(|&i| !g.has_edge(u, i)).map(|i| -omega[[u, i]]).sum();
            prop_assert!((pos - gap).abs() <= 1e-8);
            prop_assert!((neg - gap).abs() <= 1e-8);
        }
    }

    #[test]
    fn weight_signs_follow_edges_on_unit_rows(
        (n, m, d, density, seed) in instance(),
        alpha in prop::sample::select(vec![2.0, 2.5, 4.0]),
    ) {
        let g = random_graph(n, m, density, seed);
        let z = normalize_rows(&random_embeddings(&g, d, seed ^ 3), 1e-12).matrix;
        let omega = naive_weights(&g, &z, alpha);
        // At α = 2 antipodal rows can give exact zeros; above 2 the signs are strict.
        let slack = if alpha > 2.0 { f64::MIN_POSITIVE } else { 0.0 };
        for u in 0..n {
            for i in 0..m {
                if g.has_edge(u, i) {
                    prop_assert!(omega[[u, i]] >= slack);
                } else {
                    prop_assert!(omega[[u, i]] <= -slack);
                }
            }
        }
    }

    #[test]
    fn graph_adjacency_is_symmetric((n, m, _d, density, seed) in instance()) {
        let g = random_graph(n, m, density, seed);
        let du: usize = g.user_degrees().iter().sum();
        let di: usize = g.item_degrees().iter().sum();
        prop_assert_eq!(du, g.n_edges());
        prop_assert_eq!(di, g.n_edges());
        for u in 0..n {
            for &i in g.user_items(u) {
                prop_assert!(g.item_users(i).contains(&u));
            }
            prop_assert!(g.user_items(u).windows(2).all(|w| w[0] < w[1]));
        }
        for i in 0..m {
            for &u in g.item_users(i) {
                prop_assert!(g.has_edge(u, i));
            }
        }
    }

    #[test]
    fn lightgcn_layer_matches_dense_propagation((n, m, d, density, seed) in instance()) {
        let g = random_graph(n, m, density, seed);
        let z = random_embeddings(&g, d, seed ^ 4);
        let mut a = Array2::<f64>::zeros((n + m, n + m));
        for (u, i) in g.edges() {
            let w = 1.0 / ((g.user_degree(u) * g.item_degree(i)) as f64).sqrt();
            a[[u, n + i]] = w;
            a[[n + i, u]] = w;
        }
        let dense = a.dot(z.data());
        let sparse = lightgcn_layer(&g, &z);
        let err = (&dense - sparse.data()).mapv(f64::abs).fold(0.0f64, |x, &y| x.max(y));
        prop_assert!(err <= 1e-12);
    }

    #[test]
    fn k_core_matches_brute_force(
        edges in prop::collection::btree_set((0usize..5, 0usize..5), 0..25),
        k in 1usize..4,
    ) {
        let raw = RawInteractions {
            pairs: edges.iter().map(|&(u, i)| (format!("u{u}"), format!("i{i}"))).collect(),
        };
        let expected = brute_force_core(&edges, k);
        match apply_k_core(&raw, k) {
            Ok(core) => {
                let got: BTreeSet<(usize, usize)> = core
                    .pairs
                    .iter()
                    .map(|(u, i)| (u[1..].parse().unwrap(), i[1..].parse().unwrap()))
                    .collect();
                prop_assert_eq!(got, expected);
            }
            Err(_) => prop_assert!(expected.is_empty()),
        }
    }
}

/// Largest vertex subset whose induced edges give every kept vertex degree ≥ k.
/// Valid subsets are closed under union, so the largest one is the k-core.
fn brute_force_core(edges: &BTreeSet<(usize, usize)>, k: usize) -> BTreeSet<(usize, usize)> {
    let mut best = BTreeSet::new();
    for mask in 0u32..1 << 10 {
        let keep_u = |u: usize| mask >> u & 1 == 1;
        let keep_i = |i: usize| mask >> (5 + i) & 1 == 1;
        let induced: BTreeSet<_> = edges.iter().copied().filter(|&(u, i)| keep_u(u) && keep_i(i)).collect();
        let valid = (0..5).all(|u| !keep_u(u) || induced.iter().filter(|e| e.0 == u).count() >= k)
            && (0..5).all(|i| !keep_i(i) || induced.iter().filter(|e| e.1 == i).count() >= k);
        if valid && induced.len() > best.len() {
            best = induced;
        }
    }
    best
}

/// Sort-based reference ranking: score descending, then index ascending.
fn argsort_top_k(scores: &[f64], masked: &BTreeSet<usize>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|i| !masked.contains(i)).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[test]
fn ranking_metrics_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..10_000 {
        let m = rng.random_range(1..40);
        // Coarse scores so that ties are common.
        let scores: Vec<f64> = (0..m).map(|_| rng.random_range(0..8) as f64 / 4.0).collect();
        let masked: BTreeSet<usize> = (0..m).filter(|_| rng.random_bool(0.2)).collect();
        let relevant: Vec<usize> = (0..m).filter(|i| !masked.contains(i) && rng.random_bool(0.3)).collect();
        let k = rng.random_range(1..25);
        let mask_vec: Vec<usize> = masked.iter().copied().collect();

        let ranking = top_k(Array1::from(scores.clone()).view(), &mask_vec, k);
        let reference = argsort_top_k(&scores, &masked, k);
        assert_eq!(ranking.items, reference, "case {case}");
        assert_eq!(ranking.truncated, m - masked.len() < k);
        assert!(ranking.items.iter().all(|i| !masked.contains(i)));

        let recall = recall_at_k(&ranking.items, &relevant, k);
        let ndcg = ndcg_at_k(&ranking.items, &relevant, k);
        assert!((0.0..=1.0).contains(&recall), "case {case}: recall {recall}");
        assert!((0.0..=1.0 + 1e-12).contains(&ndcg), "case {case}: ndcg {ndcg}");
        if relevant.is_empty() {
            continue;
        }
        // Larger K never lowers recall.
        let wider = top_k(Array1::from(scores.clone()).view(), &mask_vec, k + 1);
        assert!(recall_at_k(&wider.items, &relevant, k + 1) >= recall);
        // Moving a relevant item ahead of an irrelevant one never lowers NDCG.
        let list = &ranking.items;
        if let Some(a) = list.iter().position(|i| relevant.binary_search(i).is_err()) {
            if let Some(b) = list[a + 1..].iter().position(|i| relevant.binary_search(i).is_ok()) {
                let mut swapped = list.clone();
                swapped.swap(a, a + 1 + b);
                assert!(ndcg_at_k(&swapped, &relevant, k) > ndcg - 1e-12, "case {case}");
            }
        }
        // Putting every relevant item first is ideal.
        let mut ideal = relevant.clone();
        ideal.extend((0..m).filter(|i| relevant.binary_search(i).is_err()));
        assert!((ndcg_at_k(&ideal, &relevant, k) - 1.0).abs() < 1e-12);
        assert!(ndcg <= ndcg_at_k(&ideal, &relevant, k) + 1e-12);
    }
}

#[test]
fn lightgcn_of_zero_embeddings_is_zero() {
    let g = InteractionGraph::from_index_pairs(3, 4, &[(0, 1), (2, 3)]);
    let z = EmbeddingMatrix::zeros(g.n_users(), g.n_items(), 2);
    assert_eq!(z.data().nrows(), 7);
    assert_eq!(lightgcn_layer(&g, &z).data(), z.data());
}
