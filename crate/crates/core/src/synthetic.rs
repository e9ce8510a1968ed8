//! Generated graphs and embeddings for tests, verification and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::RawInteractions;
use crate::embedding::EmbeddingMatrix;
use crate::graph::InteractionGraph;

/// Bernoulli(`density`) bipartite graph where every user keeps between 1 and
/// `m - 1` items, so both sides of the attention are non-empty. Needs `m >= 2`.
pub fn random_graph(n: usize, m: usize, density: f64, seed: u64) -> InteractionGraph {
    assert!(m >= 2, "random_graph needs at least two items");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        let mut row: Vec<usize> = (0..m).filter(|_| rng.random::<f64>() < density).collect();
        if row.is_empty() {
            row.push(rng.random_range(0..m));
        }
        if row.len() == m {
            let drop = rng.random_range(0..m);
            row.remove(drop);
        }
        edges.extend(row.into_iter().map(|i| (u, i)));
    }
    InteractionGraph::from_index_pairs(n, m, &edges)
}

/// Graph with exactly `e` distinct edges drawn uniformly (rejection sampling).
pub fn random_graph_with_edges(n: usize, m: usize, e: usize, seed: u64) -> InteractionGraph {
    assert!(e <= n * m, "more edges than pairs");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::with_capacity(e);
    let mut edges = Vec::with_capacity(e);
    while edges.len() < e {
        let pair = (rng.random_range(0..n), rng.random_range(0..m));
        if seen.insert(pair) {
            edges.push(pair);
        }
    }
    InteractionGraph::from_index_pairs(n, m, &edges)
}

pub fn random_embeddings(g: &InteractionGraph, d: usize, seed: u64) -> EmbeddingMatrix {
    EmbeddingMatrix::gaussian(g.n_users(), g.n_items(), d, 1.0, seed)
}

/// Two disjoint dense blocks: the first half of users interacts with every item
/// of the first half, the second half with the rest.
pub fn two_clique_raw(users: usize, items: usize) -> RawInteractions {
    let (hu, hi) = (users / 2, items / 2);
    let mut pairs = Vec::with_capacity(hu * hi * 2);
    for u in 0..users {
        let block = if u < hu { 0..hi } else { hi..items };
        for i in block {
            pairs.push((format!("u{u}"), format!("i{i}")));
        }
    }
    RawInteractions { pairs }
}
