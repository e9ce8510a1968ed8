//! BPR triple sampling.

use rand::Rng;

use crate::graph::InteractionGraph;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BprBatch {
    pub users: Vec<usize>,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
    /// Positives dropped because their user has no negative items.
    pub skipped: usize,
}

impl BprBatch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Draws `batch_size` positives uniformly from the edges (or takes every edge
/// once when `batch_size == 0`) and pairs each with `negatives` items drawn
/// uniformly from the user's non-positives by rejection.
pub fn sample_bpr_batch<R: Rng + ?Sized>(
    g: &InteractionGraph,
    batch_size: usize,
    negatives: usize,
    rng: &mut R,
) -> BprBatch {
    let m = g.n_items();
    let edges: Vec<(usize, usize)> = g.edges().collect();
    let mut batch = BprBatch::default();
    if edges.is_empty() {
        return batch;
    }
    let push = |u: usize, i: usize, rng: &mut R, batch: &mut BprBatch| {
        if g.user_degree(u) >= m {
            batch.skipped += 1;
            return;
        }
        for _ in 0..negatives {
            let j = loop {
                let j = rng.random_range(0..m);
                if !g.has_edge(u, j) {
                    break j;
                }
            };
            batch.users.push(u);
            batch.pos.push(i);
            batch.neg.push(j);
        }
    };
    if batch_size == 0 {
        for &(u, i) in &edges {
            push(u, i, rng, &mut batch);
        }
    } else {
        for _ in 0..batch_size {
            let (u, i) = edges[rng.random_range(0..edges.len())];
            push(u, i, rng, &mut batch);
        }
    }
    batch
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forced_negative() {
        let g = InteractionGraph::from_index_pairs(1, 2, &[(0, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = sample_bpr_batch(&g, 50, 1, &mut rng);
        assert!(b.neg.iter().all(|&j| j == 0));
        assert_eq!(b.len(), 50);
    }

    #[test]
    fn deterministic_per_seed() {
        let g = InteractionGraph::from_index_pairs(3, 5, &[(0, 1), (1, 2), (1, 4), (2, 0)]);
        let draw = |s| sample_bpr_batch(&g, 30, 2, &mut ChaCha8Rng::seed_from_u64(s));
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn saturated_users_are_skipped() {
        let g = InteractionGraph::from_index_pairs(2, 2, &[(0, 0), (0, 1), (1, 0)]);
        let b = sample_bpr_batch(&g, 0, 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(b.skipped, 2);
        assert_eq!((b.users.as_slice(), b.neg.as_slice()), ([1].as_slice(), [1].as_slice()));
    }

    #[test]
    fn negatives_uniform_chi_square() {
        // User 0 owns items 0..3 out of 10, leaving 7 negatives.
        let g = InteractionGraph::from_index_pairs(1, 10, &[(0, 0), (0, 1), (0, 2)]);
        let draws = 100_000;
        let b = sample_bpr_batch(&g, draws, 1, &mut ChaCha8Rng::seed_from_u64(42));
        let mut counts = [0usize; 10];
        b.neg.iter().for_each(|&j| counts[j] += 1);
        assert!(counts[..3].iter().all(|&c| c == 0));
        let expected = draws as f64 / 7.0;
        let chi2: f64 = counts[3..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 6 degrees of freedom, 99.9th percentile.
        assert!(chi2 < 22.46, "chi2 = {chi2}");
    }
}
