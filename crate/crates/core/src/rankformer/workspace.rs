//! Per-layer aggregates: benchmarks, normalizers and the global moment sums
//! that let negative-side aggregation run without touching every user–item pair.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

use super::config::{Normalizer, RankformerConfig};
use crate::embedding::EmbeddingMatrix;
use crate::graph::InteractionGraph;

/// Result of row normalization.
#[derive(Debug, Clone)]
pub struct NormalizedRows {
    pub matrix: EmbeddingMatrix,
    /// Rows whose norm was at most `epsilon`; these are returned unchanged.
    pub degenerate: Vec<usize>,
}

/// Divides every row by its L2 norm. Rows with norm `<= epsilon` are left as-is and flagged.
pub fn normalize_rows(z: &EmbeddingMatrix, epsilon: f64) -> NormalizedRows {
    let mut out = z.clone();
    let mut degenerate = Vec::new();
    for (r, mut row) in out.data_mut().axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm > epsilon {
            row.mapv_inplace(|x| x / norm);
        } else {
            degenerate.push(r);
        }
    }
    NormalizedRows {
        matrix: out,
        degenerate,
    }
}

/// Weight of a positive pair, `(z_u·z_i − b⁻_u + α) / d_u`.
pub fn attention_weight_pos(
    z_u: ArrayView1<f64>,
    z_i: ArrayView1<f64>,
    b_neg_u: f64,
    alpha: f64,
    user_degree: usize,
) -> f64 {
    assert!(user_degree > 0, "positive weight needs d_u >= 1");
    (z_u.dot(&z_i) - b_neg_u + alpha) / user_degree as f64
}

/// Weight of a negative pair, `(z_u·z_i − b⁺_u − α) / (m − d_u)`.
pub fn attention_weight_neg(
    z_u: ArrayView1<f64>,
    z_i: ArrayView1<f64>,
    b_pos_u: f64,
    alpha: f64,
    negative_count: usize,
) -> f64 {
    assert!(negative_count > 0, "negative weight needs m - d_u >= 1");
    (z_u.dot(&z_i) - b_pos_u - alpha) / negative_count as f64
}

/// Benchmark terms and the positive-neighbour sums they are built from.
#[derive(Debug, Clone)]
pub struct Benchmarks {
    /// `b⁺_u`: mean similarity to positive items (0 when `d_u = 0`).
    pub b_pos: Array1<f64>,
    /// `b⁻_u`: mean similarity to negative items (0 when `d_u = m`).
    pub b_neg: Array1<f64>,
    /// `Σ_{i∈N⁺_u} z_i`, one row per user.
    pub user_pos_sum: Array2<f64>,
    /// `Σ_{i∈I} z_i`.
    pub item_sum: Array1<f64>,
    /// Users with no positive items.
    pub positive_free: Vec<usize>,
    /// Users whose positives cover every item.
    pub negative_free: Vec<usize>,
}

pub fn compute_benchmarks(g: &InteractionGraph, z: &EmbeddingMatrix) -> Benchmarks {
    let (n, m, d) = (g.n_users(), g.n_items(), z.dim());
    let items = z.items();
    let item_sum = items.sum_axis(Axis(0));
    let mut user_pos_sum = Array2::zeros((n, d));
    Zip::indexed(user_pos_sum.rows_mut()).par_for_each(|u, mut acc| {
        for &i in g.user_items(u) {
            acc += &items.row(i);
        }
    });
    let mut b_pos = Array1::zeros(n);
    let mut b_neg = Array1::zeros(n);
    let mut positive_free = Vec::new();
    let mut negative_free = Vec::new();
    for u in 0..n {
        let du = g.user_degree(u);
        let zu = z.user(u);
        let p = user_pos_sum.row(u);
        if du > 0 {
            b_pos[u] = zu.dot(&p) / du as f64;
        } else {
            positive_free.push(u);
        }
        if du < m {
            b_neg[u] = (zu.dot(&item_sum) - zu.dot(&p)) / (m - du) as f64;
        } else {
            negative_free.push(u);
        }
    }
    Benchmarks {
        b_pos,
        b_neg,
        user_pos_sum,
        item_sum,
        positive_free,
        negative_free,
    }
}

/// `1 / (m − d_u)` for users with at least one negative item, else 0.
pub(crate) fn negative_scale(g: &InteractionGraph) -> Array1<f64> {
    let m = g.n_items();
    Array1::from_iter((0..g.n_users()).map(|u| {
        let du = g.user_degree(u);
        if du < m {
            1.0 / (m - du) as f64
        } else {
            0.0
        }
    }))
}

/// Global sums needed by the item side of the normalizers and aggregation.
#[derive(Debug, Clone)]
pub struct UserScaledSums {
    /// `w_u = 1 / (m − d_u)` (0 for negative-free users).
    pub scale: Array1<f64>,
    /// `Σ_u w_u z_u`.
    pub emb: Array1<f64>,
    /// `Σ_u w_u b⁺_u`.
    pub b_pos: f64,
    /// `Σ_u w_u`.
    pub count: f64,
}

impl UserScaledSums {
    fn compute(g: &InteractionGraph, z: &EmbeddingMatrix, bench: &Benchmarks) -> Self {
        let scale = negative_scale(g);
        let users = z.users();
        let mut emb = Array1::zeros(z.dim());
        for (u, row) in users.axis_iter(Axis(0)).enumerate() {
            emb.scaled_add(scale[u], &row);
        }
        Self {
            b_pos: scale.dot(&bench.b_pos),
            count: scale.sum(),
            emb,
            scale,
        }
    }
}

/// Normalizers from the closed forms that hold when every positive weight is
/// positive and every negative weight negative. They are the signed sums
/// `Σ Ω⁺ − Σ Ω⁻`, clamped below by `epsilon`.
pub fn normalizers_closed_form(
    g: &InteractionGraph,
    z: &EmbeddingMatrix,
    bench: &Benchmarks,
    alpha: f64,
    epsilon: f64,
) -> (Array1<f64>, Array1<f64>) {
    let sums = UserScaledSums::compute(g, z, bench);
    normalizers_from_sums(g, z, bench, &sums, alpha, epsilon)
}

fn normalizers_from_sums(
    g: &InteractionGraph,
    z: &EmbeddingMatrix,
    bench: &Benchmarks,
    sums: &UserScaledSums,
    alpha: f64,
    epsilon: f64,
) -> (Array1<f64>, Array1<f64>) {
    let m = g.n_items();
    let c_user = Array1::from_iter((0..g.n_users()).map(|u| {
        let du = g.user_degree(u);
        let gap = bench.b_pos[u] - bench.b_neg[u] + alpha;
        let sides = (du > 0) as u8 + (du < m) as u8;
        (sides as f64 * gap).max(epsilon)
    }));
    let users = z.users();
    let mut c_item = Array1::zeros(m);
    Zip::indexed(&mut c_item).par_for_each(|i, c| {
        let zi = z.item(i);
        let mut pos = 0.0;
        let mut neg_emb = sums.emb.clone();
        let mut neg_b = sums.b_pos;
        let mut neg_count = sums.count;
        for &u in g.item_users(i) {
            let zu = users.row(u);
            let w = sums.scale[u];
            pos += (zu.dot(&zi) - bench.b_neg[u] + alpha) / g.user_degree(u) as f64;
            neg_emb.scaled_add(-w, &zu);
            neg_b -= w * bench.b_pos[u];
            neg_count -= w;
        }
        let neg = -zi.dot(&neg_emb) + neg_b + alpha * neg_count;
        *c = (pos + neg).max(epsilon);
    });
    (c_user, c_item)
}

/// Normalizers by direct summation of `|Ω|`: positives by edge scan, negatives
/// by scanning every non-adjacent pair. Costs `O(n·m·d)`.
pub fn normalizers_exact(
    g: &InteractionGraph,
    z: &EmbeddingMatrix,
    bench: &Benchmarks,
    alpha: f64,
    epsilon: f64,
) -> (Array1<f64>, Array1<f64>) {
    let (n, m) = (g.n_users(), g.n_items());
    let mut c_user = Array1::<f64>::zeros(n);
    let mut c_item = Array1::<f64>::zeros(m);
    for u in 0..n {
        let du = g.user_degree(u);
        let zu = z.user(u);
        let pos = g.user_items(u);
        let mut next = 0;
        for i in 0..m {
            let zi = z.item(i);
            let w = if next < pos.len() && pos[next] == i {
                next += 1;
                attention_weight_pos(zu, zi, bench.b_neg[u], alpha, du)
            } else {
                attention_weight_neg(zu, zi, bench.b_pos[u], alpha, m - du)
            };
            c_user[u] += w.abs();
            c_item[i] += w.abs();
        }
    }
    c_user.mapv_inplace(|c| c.max(epsilon));
    c_item.mapv_inplace(|c| c.max(epsilon));
    (c_user, c_item)
}

/// Picks the closed form inside the sign-guaranteed regime and the exact scan outside it.
pub fn compute_normalizers(
    g: &InteractionGraph,
    z: &EmbeddingMatrix,
    bench: &Benchmarks,
    cfg: &RankformerConfig,
) -> (Array1<f64>, Array1<f64>) {
    match cfg.normalizer {
        Normalizer::Unit => (Array1::ones(g.n_users()), Array1::ones(g.n_items())),
        Normalizer::AbsWeightSum if cfg.signs_guaranteed() => {
            normalizers_closed_form(g, z, bench, cfg.alpha, cfg.epsilon_div)
        }
        Normalizer::AbsWeightSum => normalizers_exact(g, z, bench, cfg.alpha, cfg.epsilon_div),
    }
}

/// Everything a fast Rankformer layer reads, computed once from the layer input.
#[derive(Debug, Clone)]
pub struct LayerWorkspace {
    pub bench: Benchmarks,
    pub c_user: Array1<f64>,
    pub c_item: Array1<f64>,
    /// `Σ_i z_i z_iᵀ`.
    pub item_moment: Array2<f64>,
    /// `Σ_u w_u z_u z_uᵀ` with `w_u = 1/(m − d_u)`.
    pub user_moment_scaled: Array2<f64>,
    pub user_sums: UserScaledSums,
    /// `Σ_u w_u (b⁺_u + α) z_u`.
    pub user_offset_sum: Array1<f64>,
}

impl LayerWorkspace {
    /// `z` must already be row-normalized if the config asks for it.
    pub fn compute(g: &InteractionGraph, z: &EmbeddingMatrix, cfg: &RankformerConfig) -> Self {
        let bench = compute_benchmarks(g, z);
        let user_sums = UserScaledSums::compute(g, z, &bench);
        let (c_user, c_item) = match cfg.normalizer {
            Normalizer::AbsWeightSum if cfg.signs_guaranteed() => {
                normalizers_from_sums(g, z, &bench, &user_sums, cfg.alpha, cfg.epsilon_div)
            }
            _ => compute_normalizers(g, z, &bench, cfg),
        };
        let items = z.items();
        let users = z.users();
        let item_moment = items.t().dot(&items);
        let scaled_users = &users * &user_sums.scale.view().insert_axis(Axis(1));
        let user_moment_scaled = scaled_users.t().dot(&users);
        let offset = &user_sums.scale * &(&bench.b_pos + cfg.alpha);
        let user_offset_sum = users.t().dot(&offset);
        Self {
            bench,
            c_user,
            c_item,
            item_moment,
            user_moment_scaled,
            user_sums,
            user_offset_sum,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn normalize_three_four_five() {
        let z = EmbeddingMatrix::new(array![[3.0, 4.0], [0.0, 0.0]], 1);
        let out = normalize_rows(&z, 1e-12);
        assert!(approx(out.matrix.data()[[0, 0]], 0.6));
        assert!(approx(out.matrix.data()[[0, 1]], 0.8));
        assert_eq!(out.matrix.data().row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(out.degenerate, vec![1]);
    }

    #[test]
    fn random_rows_become_unit() {
        let z = EmbeddingMatrix::gaussian(4, 6, 4, 1.0, 3);
        let out = normalize_rows(&z, 1e-12);
        for row in out.matrix.data().rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn orthogonal_benchmarks() {
        // one user, item 0 positive, item 1 negative
        let g = InteractionGraph::from_index_pairs(1, 2, &[(0, 0)]);
        let z = EmbeddingMatrix::new(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 1);
        let b = compute_benchmarks(&g, &z);
        assert!(approx(b.b_pos[0], 1.0) && approx(b.b_neg[0], 0.0));
        let (cu, _) = normalizers_closed_form(&g, &z, &b, 2.0, 1e-12);
        assert!(approx(cu[0], 6.0));
        let (cu_exact, _) = normalizers_exact(&g, &z, &b, 2.0, 1e-12);
        assert!(approx(cu_exact[0], 6.0));
    }

    #[test]
    fn constant_items_give_equal_benchmarks() {
        let g = InteractionGraph::from_index_pairs(2, 3, &[(0, 0), (1, 1), (1, 2)]);
        let mut z = EmbeddingMatrix::zeros(2, 3, 2);
        z.items_mut().fill(0.5);
        z.users_mut().row_mut(0).assign(&array![0.6, 0.8]);
        z.users_mut().row_mut(1).assign(&array![1.0, 0.0]);
        let b = compute_benchmarks(&g, &z);
        for u in 0..2 {
            assert!(approx(b.b_pos[u], b.b_neg[u]));
        }
        assert!(approx(b.b_pos[0], 0.7));
    }

    #[test]
    fn identical_unit_vectors_give_two_alpha() {
        let g = InteractionGraph::from_index_pairs(2, 3, &[(0, 0), (1, 1), (1, 2)]);
        let mut z = EmbeddingMatrix::zeros(2, 3, 2);
        z.data_mut().column_mut(0).fill(1.0);
        let b = compute_benchmarks(&g, &z);
        let (cu, _) = normalizers_closed_form(&g, &z, &b, 2.0, 1e-12);
        assert!(cu.iter().all(|&c| approx(c, 4.0)));
    }

    #[test]
    fn degenerate_degrees_are_flagged() {
        // user 0 has every item, user 1 none
        let g = InteractionGraph::from_index_pairs(2, 2, &[(0, 0), (0, 1)]);
        let z = EmbeddingMatrix::gaussian(2, 2, 3, 1.0, 1);
        let b = compute_benchmarks(&g, &z);
        assert_eq!(b.negative_free, vec![0]);
        assert_eq!(b.positive_free, vec![1]);
        assert_eq!(b.b_neg[0], 0.0);
        assert_eq!(b.b_pos[1], 0.0);
    }

    #[test]
    fn moments_are_symmetric_psd() {
        let g = InteractionGraph::from_index_pairs(3, 4, &[(0, 0), (1, 1), (2, 3), (2, 2)]);
        let z = normalize_rows(&EmbeddingMatrix::gaussian(3, 4, 3, 1.0, 5), 1e-12).matrix;
        let ws = LayerWorkspace::compute(&g, &z, &RankformerConfig::default());
        for mom in [&ws.item_moment, &ws.user_moment_scaled] {
            assert!((mom - &mom.t()).iter().all(|x| x.abs() < 1e-12));
            // x^T M x >= 0 for a few probe directions
            for probe in [array![1.0, 0.0, 0.0], array![0.3, -0.7, 0.2], array![-1.0, 2.0, 0.5]] {
                assert!(probe.dot(&mom.dot(&probe)) >= -1e-12);
            }
        }
        assert!(ws.c_user.iter().chain(ws.c_item.iter()).all(|&c| c > 0.0));
    }
}
