//! Comparison encoders: plain matrix factorization and LightGCN propagation.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::embedding::EmbeddingMatrix;
use crate::graph::InteractionGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Identity encoder.
    Mf,
    LightGcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LayerCombine {
    Last,
    /// Mean over the input and every layer output.
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub layers: usize,
    pub combine: LayerCombine,
}

impl BaselineConfig {
    pub fn mf() -> Self {
        Self {
            kind: BaselineKind::Mf,
            layers: 0,
            combine: LayerCombine::Last,
        }
    }

    pub fn lightgcn(layers: usize) -> Self {
        Self {
            kind: BaselineKind::LightGcn,
            layers,
            combine: LayerCombine::Mean,
        }
    }
}

/// Symmetric-normalized neighbour sum `Σ 1/√(d_u d_i) z`. Isolated nodes map to zero.
pub fn lightgcn_layer(g: &InteractionGraph, z: &EmbeddingMatrix) -> EmbeddingMatrix {
    let (n, m, d) = (g.n_users(), g.n_items(), z.dim());
    let users = z.users();
    let items = z.items();
    let mut out_users = Array2::<f64>::zeros((n, d));
    Zip::indexed(out_users.rows_mut()).par_for_each(|u, mut out| {
        let du = g.user_degree(u) as f64;
        for &i in g.user_items(u) {
            let w = 1.0 / (du * g.item_degree(i) as f64).sqrt();
            out.scaled_add(w, &items.row(i));
        }
    });
    let mut out_items = Array2::<f64>::zeros((m, d));
    Zip::indexed(out_items.rows_mut()).par_for_each(|i, mut out| {
        let di = g.item_degree(i) as f64;
        for &u in g.item_users(i) {
            let w = 1.0 / (di * g.user_degree(u) as f64).sqrt();
            out.scaled_add(w, &users.row(u));
        }
    });
    let mut data = out_users;
    data.append(Axis(0), out_items.view()).expect("matching widths");
    EmbeddingMatrix::new(data, n)
}

pub fn baseline_forward(g: &InteractionGraph, z0: &EmbeddingMatrix, cfg: &BaselineConfig) -> EmbeddingMatrix {
    match cfg.kind {
        BaselineKind::Mf => z0.clone(),
        BaselineKind::LightGcn => {
            let mut z = z0.clone();
            let mut total = z0.data().clone();
            for _ in 0..cfg.layers {
                z = lightgcn_layer(g, &z);
                total += z.data();
            }
            match cfg.combine {
                LayerCombine::Last => z,
                LayerCombine::Mean => EmbeddingMatrix::new(total / (cfg.layers + 1) as f64, z0.n_users()),
            }
        }
    }
}

/// Row-wise mean of positive partners (the uniform-weight propagation that the
/// warm-up layer reduces to at `τ = 1`). Isolated nodes map to zero.
pub fn mean_aggregation(g: &InteractionGraph, z: &EmbeddingMatrix) -> EmbeddingMatrix {
    let mut out = EmbeddingMatrix::zeros(g.n_users(), g.n_items(), z.dim());
    for u in 0..g.n_users() {
        let nbrs = g.user_items(u);
        if !nbrs.is_empty() {
            let mut acc = Array1::<f64>::zeros(z.dim());
            nbrs.iter().for_each(|&i| acc += &z.item(i));
            out.users_mut().row_mut(u).assign(&(acc / nbrs.len() as f64));
        }
    }
    for i in 0..g.n_items() {
        let nbrs = g.item_users(i);
        if !nbrs.is_empty() {
            let mut acc = Array1::<f64>::zeros(z.dim());
            nbrs.iter().for_each(|&u| acc += &z.user(u));
            out.items_mut().row_mut(i).assign(&(acc / nbrs.len() as f64));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_edge_swaps() {
        let g = InteractionGraph::from_index_pairs(1, 1, &[(0, 0)]);
        let z = EmbeddingMatrix::new(array![[1.0, 2.0], [3.0, 4.0]], 1);
        let out = lightgcn_layer(&g, &z);
        assert_eq!(out.data(), &array![[3.0, 4.0], [1.0, 2.0]]);
    }

    #[test]
    fn two_unit_degree_items() {
        let g = InteractionGraph::from_index_pairs(1, 2, &[(0, 0), (0, 1)]);
        let z = EmbeddingMatrix::new(array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 1);
        let out = lightgcn_layer(&g, &z);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out.user(0)[0] - h).abs() < 1e-15 && (out.user(0)[1] - h).abs() < 1e-15);
    }

    #[test]
    fn isolated_nodes_map_to_zero() {
        let g = InteractionGraph::from_index_pairs(2, 2, &[(0, 0)]);
        let z = EmbeddingMatrix::gaussian(2, 2, 3, 1.0, 1);
        let out = lightgcn_layer(&g, &z);
        assert!(out.user(1).iter().all(|&x| x == 0.0));
        assert!(out.item(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_degenerate_configs() {
        let g = InteractionGraph::from_index_pairs(2, 2, &[(0, 0), (1, 1)]);
        let z = EmbeddingMatrix::gaussian(2, 2, 3, 1.0, 1);
        assert_eq!(baseline_forward(&g, &z, &BaselineConfig::mf()), z);
        assert_eq!(baseline_forward(&g, &z, &BaselineConfig::lightgcn(0)), z);
    }

    #[test]
    fn mean_combination_by_recomposition() {
        let g = InteractionGraph::from_index_pairs(3, 3, &[(0, 0), (0, 1), (1, 1), (2, 2), (2, 0)]);
        let z0 = EmbeddingMatrix::gaussian(3, 3, 2, 1.0, 6);
        let z1 = lightgcn_layer(&g, &z0);
        let z2 = lightgcn_layer(&g, &z1);
        let expected = (z0.data() + z1.data() + z2.data()) / 3.0;
        let out = baseline_forward(&g, &z0, &BaselineConfig::lightgcn(2));
        assert!((out.data() - &expected).iter().all(|x| x.abs() < 1e-14));
        let last = baseline_forward(
            &g,
            &z0,
            &BaselineConfig {
                combine: LayerCombine::Last,
                ..BaselineConfig::lightgcn(2)
            },
        );
        assert_eq!(last, z2);
    }
}
