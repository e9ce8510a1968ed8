use ndarray::{Array1, Array2, Axis, Zip};

use super::config::RankformerConfig;
use super::workspace::{normalize_rows, LayerWorkspace};
use crate::embedding::EmbeddingMatrix;
use crate::error::LayerError;
use crate::graph::InteractionGraph;

pub(crate) fn check_shape(g: &InteractionGraph, z: &EmbeddingMatrix) -> Result<(), LayerError> {
    let expected = g.n_users() + g.n_items();
    if z.n_users() != g.n_users() || z.data().nrows() != expected {
        return Err(LayerError::ShapeMismatch {
            expected,
            got: z.data().nrows(),
        });
    }
    Ok(())
}

fn check_finite(z: &EmbeddingMatrix, layer: usize) -> Result<(), LayerError> {
    match z.first_non_finite_row() {
        Some(row) => Err(LayerError::NonFinite { layer, row }),
        None => Ok(()),
    }
}

/// One attention layer computed in `O((n+m)d² + Ed)`.
///
/// `z` is the layer input exactly as used for both weights and aggregation, so
/// callers that normalize must pass the normalized matrix and a workspace built
/// from it. Negative-side sums are obtained as "everything minus positives"
/// using the cached moment matrices.
pub fn rankformer_layer(
    g: &InteractionGraph,
    z: &EmbeddingMatrix,
    cfg: &RankformerConfig,
    ws: &LayerWorkspace,
) -> Result<EmbeddingMatrix, LayerError> {
    check_shape(g, z)?;
    let (n, m, d) = (g.n_users(), g.n_items(), z.dim());
    let keep = 1.0 - cfg.tau * cfg.lambda_reg;
    let tau = cfg.tau;
    let alpha = cfg.alpha;
    let users = z.users();
    let items = z.items();
    let bench = &ws.bench;

    // z_uᵀ Σ_i z_i z_iᵀ and z_iᵀ Σ_u w_u z_u z_uᵀ for every row at once.
    let user_proj = users.dot(&ws.item_moment);
    let item_proj = items.dot(&ws.user_moment_scaled);

    let mut out_users = Array2::<f64>::zeros((n, d));
    Zip::indexed(out_users.rows_mut()).par_for_each(|u, mut out| {
        let zu = users.row(u);
        let du = g.user_degree(u);
        let pos_sum = bench.user_pos_sum.row(u);
        // Σ_{i∈N⁺_u} (z_u·z_i) z_i
        let mut sim_weighted = Array1::<f64>::zeros(d);
        for &i in g.user_items(u) {
            let zi = items.row(i);
            sim_weighted.scaled_add(zu.dot(&zi), &zi);
        }
        let mut agg = Array1::<f64>::zeros(d);
        if du > 0 {
            let inv = 1.0 / du as f64;
            agg.scaled_add(inv, &sim_weighted);
            agg.scaled_add(-(bench.b_neg[u] - alpha) * inv, &pos_sum);
        }
        if du < m {
            let inv = 1.0 / (m - du) as f64;
            agg.scaled_add(inv, &user_proj.row(u));
            agg.scaled_add(-inv, &sim_weighted);
            let coef = -(bench.b_pos[u] + alpha) * inv;
            agg.scaled_add(coef, &bench.item_sum);
            agg.scaled_add(-coef, &pos_sum);
        }
        out.assign(&zu);
        out *= keep;
        out.scaled_add(tau / ws.c_user[u], &agg);
    });

    let scale = &ws.user_sums.scale;
    let mut out_items = Array2::<f64>::zeros((m, d));
    Zip::indexed(out_items.rows_mut()).par_for_each(|i, mut out| {
        let zi = items.row(i);
        let mut agg = Array1::<f64>::zeros(d);
        // Negative side starts from the all-user sums and removes positive users.
        agg += &item_proj.row(i);
        agg -= &ws.user_offset_sum;
        for &u in g.item_users(i) {
            let zu = users.row(u);
            let s = zu.dot(&zi);
            let du = g.user_degree(u) as f64;
            let w = scale[u];
            let pos_coef = (s - bench.b_neg[u] + alpha) / du;
            let neg_coef = -w * s + w * (bench.b_pos[u] + alpha);
            agg.scaled_add(pos_coef + neg_coef, &zu);
        }
        out.assign(&zi);
        out *= keep;
        out.scaled_add(tau / ws.c_item[i], &agg);
    });

    let mut data = out_users;
    data.append(Axis(0), out_items.view()).expect("matching widths");
    let out = EmbeddingMatrix::new(data, n);
    check_finite(&out, 0)?;
    Ok(out)
}

/// Uniform positive-only aggregation: `z' = (1−τ) z + τ · mean(positive partners)`.
/// Nodes without positive partners are left unchanged.
pub fn warmup_layer(g: &InteractionGraph, z: &EmbeddingMatrix, tau: f64) -> EmbeddingMatrix {
    let (n, m, d) = (g.n_users(), g.n_items(), z.dim());
    let users = z.users();
    let items = z.items();
    let mut out_users = Array2::<f64>::zeros((n, d));
    Zip::indexed(out_users.rows_mut()).par_for_each(|u, mut out| {
        let nbrs = g.user_items(u);
        out.assign(&users.row(u));
        if nbrs.is_empty() {
            return;
        }
        let mut mean = Array1::<f64>::zeros(d);
        for &i in nbrs {
            mean += &items.row(i);
        }
        mean /= nbrs.len() as f64;
        out *= 1.0 - tau;
        out.scaled_add(tau, &mean);
    });
    let mut out_items = Array2::<f64>::zeros((m, d));
    Zip::indexed(out_items.rows_mut()).par_for_each(|i, mut out| {
        let nbrs = g.item_users(i);
        out.assign(&items.row(i));
        if nbrs.is_empty() {
            return;
        }
        let mut mean = Array1::<f64>::zeros(d);
        for &u in nbrs {
            mean += &users.row(u);
        }
        mean /= nbrs.len() as f64;
        out *= 1.0 - tau;
        out.scaled_add(tau, &mean);
    });
    let mut data = out_users;
    data.append(Axis(0), out_items.view()).expect("matching widths");
    EmbeddingMatrix::new(data, n)
}

/// One full attention layer including the optional row normalization.
pub fn attention_step(
    g: &InteractionGraph,
    z: &EmbeddingMatrix,
    cfg: &RankformerConfig,
) -> Result<EmbeddingMatrix, LayerError> {
    let input = if cfg.normalize_embeddings {
        let normalized = normalize_rows(z, cfg.epsilon_div);
        if !normalized.degenerate.is_empty() {
            log::debug!("{} near-zero rows left unnormalized", normalized.degenerate.len());
        }
        normalized.matrix
    } else {
        z.clone()
    };
    let ws = LayerWorkspace::compute(g, &input, cfg);
    rankformer_layer(g, &input, cfg, &ws)
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub embeddings: EmbeddingMatrix,
    /// Output of every layer, in order, when requested.
    pub snapshots: Vec<EmbeddingMatrix>,
}

/// Stacks `cfg.layers` layers: an optional warm-up layer, then attention layers.
pub fn forward(
    g: &InteractionGraph,
    z0: &EmbeddingMatrix,
    cfg: &RankformerConfig,
    keep_snapshots: bool,
) -> Result<ForwardOutput, LayerError> {
    cfg.validate()?;
    check_shape(g, z0)?;
    let mut z = z0.clone();
    let mut snapshots = Vec::new();
    for layer in 0..cfg.layers {
        z = if layer == 0 && cfg.warmup_first_layer {
            let out = warmup_layer(g, &z, cfg.tau);
            check_finite(&out, layer + 1)?;
            out
        } else {
            attention_step(g, &z, cfg).map_err(|e| match e {
                LayerError::NonFinite { row, .. } => LayerError::NonFinite {
                    layer: layer + 1,
                    row,
                },
                other => other,
            })?
        };
        if keep_snapshots {
            snapshots.push(z.clone());
        }
    }
    Ok(ForwardOutput {
        embeddings: z,
        snapshots,
    })
}
