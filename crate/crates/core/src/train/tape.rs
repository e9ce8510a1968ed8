//! Encoder forward passes recorded on an autodiff tape.
//!
//! Each pass computes the same values as the plain forward in
//! [`crate::rankformer`] and [`crate::baselines`], but as whole-matrix tape
//! operations so the BPR loss can be differentiated back to the base embeddings.

use std::rc::Rc;

use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::baselines::{BaselineConfig, BaselineKind, LayerCombine};
use crate::embedding::EmbeddingMatrix;
use crate::encoder::Encoder;
use crate::graph::InteractionGraph;
use crate::rankformer::{compute_benchmarks, normalizers_exact, Normalizer, RankformerConfig};

/// How gradients treat the attention weights `Ω` and normalizers `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradMode {
    /// Differentiate through weights, benchmarks and normalizers.
    #[default]
    ThroughLayers,
    /// Weights and normalizers are constants; only aggregated values carry gradient.
    DetachedWeights,
}

impl GradMode {
    pub fn label(self) -> &'static str {
        match self {
            GradMode::ThroughLayers => "through_layers",
            GradMode::DetachedWeights => "detached_weights",
        }
    }
}

impl std::str::FromStr for GradMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "through_layers" => Ok(GradMode::ThroughLayers),
            "detached_weights" => Ok(GradMode::DetachedWeights),
            other => Err(format!("unknown grad mode {other:?}")),
        }
    }
}

/// Where the weight side of each attention layer comes from.
#[derive(Debug, Clone, Copy)]
pub enum WeightSource<'a> {
    Live(GradMode),
    /// Constant weight-side inputs, one per attention layer (already normalized
    /// if the config normalizes). Used to check detached gradients numerically.
    Frozen(&'a [Array2<f64>]),
}

/// Graph-derived constants shared by every tape forward on one graph.
#[derive(Debug, Clone)]
pub struct GraphIndex {
    n: usize,
    m: usize,
    /// Edge endpoints in user-major order.
    eu: Rc<[usize]>,
    ei: Rc<[usize]>,
    inv_du: Array2<f64>,
    inv_di: Array2<f64>,
    /// `1/(m − d_u)`, 0 for users without negatives.
    neg_scale: Array2<f64>,
    /// Number of non-empty sides (positive, negative) per user.
    sides: Array2<f64>,
    isolated_users: Array2<f64>,
    isolated_items: Array2<f64>,
    inv_du_e: Array2<f64>,
    neg_scale_e: Array2<f64>,
    lightgcn_e: Array2<f64>,
    /// `Σ_{u∉N_i} w_u` per item.
    neg_weight_mass: Array2<f64>,
}

fn column(values: impl IntoIterator<Item = f64>) -> Array2<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    let r = v.len();
    Array2::from_shape_vec((r, 1), v).expect("column shape")
}

fn inv(x: usize) -> f64 {
    if x == 0 {
        0.0
    } else {
        1.0 / x as f64
    }
}

impl GraphIndex {
    pub fn new(g: &InteractionGraph) -> Self {
        let (n, m) = (g.n_users(), g.n_items());
        let (eu, ei): (Vec<usize>, Vec<usize>) = g.edges().unzip();
        let w: Vec<f64> = (0..n).map(|u| inv(m - g.user_degree(u))).collect();
        let total_w: f64 = w.iter().sum();
        let neg_weight_mass = column((0..m).map(|i| total_w - g.item_users(i).iter().map(|&u| w[u]).sum::<f64>()));
        Self {
            n,
            m,
            inv_du: column((0..n).map(|u| inv(g.user_degree(u)))),
            inv_di: column((0..m).map(|i| inv(g.item_degree(i)))),
            sides: column((0..n).map(|u| {
                let du = g.user_degree(u);
                ((du > 0) as u8 + (du < m) as u8) as f64
            })),
            isolated_users: column((0..n).map(|u| (g.user_degree(u) == 0) as u8 as f64)),
            isolated_items: column((0..m).map(|i| (g.item_degree(i) == 0) as u8 as f64)),
            inv_du_e: column(eu.iter().map(|&u| inv(g.user_degree(u)))),
            neg_scale_e: column(eu.iter().map(|&u| w[u])),
            lightgcn_e: column(
                eu.iter()
                    .zip(&ei)
                    .map(|(&u, &i)| 1.0 / ((g.user_degree(u) * g.item_degree(i)) as f64).sqrt()),
            ),
            neg_scale: column(w),
            neg_weight_mass,
            eu: eu.into(),
            ei: ei.into(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.n
    }

    pub fn n_items(&self) -> usize {
        self.m
    }
}

fn split(t: &mut Tape, gi: &GraphIndex, z: Var) -> (Var, Var) {
    (t.slice_rows(z, 0, gi.n), t.slice_rows(z, gi.n, gi.m))
}

fn warmup(t: &mut Tape, gi: &GraphIndex, z: Var, tau: f64) -> Var {
    let (u, i) = split(t, gi, z);
    let inv_du = t.leaf(gi.inv_du.clone());
    let inv_di = t.leaf(gi.inv_di.clone());
    let iso_u = t.leaf(gi.isolated_users.clone());
    let iso_i = t.leaf(gi.isolated_items.clone());
    let ie = t.gather(i, gi.ei.clone());
    let ue = t.gather(u, gi.eu.clone());

    let su = t.scatter_add(ie, gi.eu.clone(), gi.n);
    let mu = t.scale_rows(su, inv_du);
    let keep_u = t.scale_rows(u, iso_u);
    let mean_u = t.add(mu, keep_u);

    let si = t.scatter_add(ue, gi.ei.clone(), gi.m);
    let mi = t.scale_rows(si, inv_di);
    let keep_i = t.scale_rows(i, iso_i);
    let mean_i = t.add(mi, keep_i);

    let mean = t.concat_rows(mean_u, mean_i);
    let a = t.scale(z, 1.0 - tau);
    let b = t.scale(mean, tau);
    t.add(a, b)
}

/// One attention layer. Mirrors the fast layer term by term.
fn attention(
    t: &mut Tape,
    g: &InteractionGraph,
    gi: &GraphIndex,
    z: Var,
    cfg: &RankformerConfig,
    weights: Option<&Array2<f64>>,
    detach: bool,
) -> Var {
    let (n, m, alpha) = (gi.n, gi.m, cfg.alpha);
    let zin = if cfg.normalize_embeddings {
        t.normalize_rows(z, cfg.epsilon_div)
    } else {
        z
    };
    let (u, i) = split(t, gi, zin);
    let (uw, iw) = match weights {
        Some(frozen) => {
            let c = t.leaf(frozen.clone());
            split(t, gi, c)
        }
        None if detach => (t.detach(u), t.detach(i)),
        None => (u, i),
    };
    let separate = weights.is_some() || detach;

    let inv_du = t.leaf(gi.inv_du.clone());
    let w = t.leaf(gi.neg_scale.clone());
    let inv_du_e = t.leaf(gi.inv_du_e.clone());
    let w_e = t.leaf(gi.neg_scale_e.clone());

    let ie = t.gather(i, gi.ei.clone());
    let ue = t.gather(u, gi.eu.clone());
    let (iwe, uwe) = if separate {
        (t.gather(iw, gi.ei.clone()), t.gather(uw, gi.eu.clone()))
    } else {
        (ie, ue)
    };
    let s_e = t.row_dot(uwe, iwe);

    // Benchmarks.
    let p = t.scatter_add(ie, gi.eu.clone(), n);
    let pw = if separate {
        t.scatter_add(iwe, gi.eu.clone(), n)
    } else {
        p
    };
    let dot_pos = t.row_dot(uw, pw);
    let b_pos = t.mul(dot_pos, inv_du);
    let sum_iw = t.sum_rows(iw);
    let sum_iw_b = t.broadcast_rows(sum_iw, n);
    let negw = t.sub(sum_iw_b, pw);
    let dot_neg = t.row_dot(uw, negw);
    let b_neg = t.mul(dot_neg, w);

    // User side.
    let s_ie = t.scale_rows(ie, s_e);
    let sim = t.scatter_add(s_ie, gi.eu.clone(), n);
    let pos_a = t.scale_rows(sim, inv_du);
    let bn_off = t.add_scalar(b_neg, -alpha);
    let pos_coef = t.mul(bn_off, inv_du);
    let pos_b = t.scale_rows(p, pos_coef);
    let pos_u = t.sub(pos_a, pos_b);

    let item_moment = t.matmul_tn(iw, i);
    let proj_u = t.matmul(uw, item_moment);
    let proj_minus = t.sub(proj_u, sim);
    let neg_a = t.scale_rows(proj_minus, w);
    let sum_i = t.sum_rows(i);
    let sum_i_b = t.broadcast_rows(sum_i, n);
    let comp = t.sub(sum_i_b, p);
    let bp_off = t.add_scalar(b_pos, alpha);
    let neg_coef = t.mul(bp_off, w);
    let neg_b = t.scale_rows(comp, neg_coef);
    let neg_u = t.sub(neg_a, neg_b);
    let agg_u = t.add(pos_u, neg_u);

    // Item side.
    let b_neg_e = t.gather(b_neg, gi.eu.clone());
    let b_pos_e = t.gather(b_pos, gi.eu.clone());
    let s_minus = t.sub(s_e, b_neg_e);
    let s_off = t.add_scalar(s_minus, alpha);
    let coef_pos_e = t.mul(s_off, inv_du_e);
    let ue_pos = t.scale_rows(ue, coef_pos_e);
    let pos_i = t.scatter_add(ue_pos, gi.ei.clone(), m);

    let uw_scaled = t.scale_rows(uw, w);
    let user_moment = t.matmul_tn(uw_scaled, u);
    let proj_i = t.matmul(iw, user_moment);
    let offset_w = t.mul(bp_off, w);
    let u_off = t.scale_rows(u, offset_w);
    let offset_sum = t.sum_rows(u_off);
    let offset_b = t.broadcast_rows(offset_sum, m);
    let bp_e_off = t.add_scalar(b_pos_e, alpha);
    let gap_e = t.sub(bp_e_off, s_e);
    let coef_neg_e = t.mul(gap_e, w_e);
    let ue_neg = t.scale_rows(ue, coef_neg_e);
    let neg_edges = t.scatter_add(ue_neg, gi.ei.clone(), m);
    let neg_i0 = t.sub(proj_i, offset_b);
    let neg_i = t.add(neg_i0, neg_edges);
    let agg_i = t.add(pos_i, neg_i);

    // Normalizers.
    let (c_u, c_i) = match cfg.normalizer {
        Normalizer::Unit => (t.leaf(Array2::ones((n, 1))), t.leaf(Array2::ones((m, 1)))),
        Normalizer::AbsWeightSum if cfg.signs_guaranteed() => {
            let sides = t.leaf(gi.sides.clone());
            let gap = t.sub(b_pos, b_neg);
            let gap = t.add_scalar(gap, alpha);
            let cu = t.mul(gap, sides);
            let cu = t.clamp_min(cu, cfg.epsilon_div);

            let pos_c = t.scatter_add(coef_pos_e, gi.ei.clone(), m);
            let all_wu = t.sum_rows(uw_scaled);
            let all_wu_b = t.broadcast_rows(all_wu, m);
            let uwe_scaled = t.scale_rows(uwe, w_e);
            let part = t.scatter_add(uwe_scaled, gi.ei.clone(), m);
            let neg_emb = t.sub(all_wu_b, part);
            let t1 = t.row_dot(iw, neg_emb);
            let wb = t.mul(b_pos, w);
            let all_wb = t.sum_rows(wb);
            let all_wb_b = t.broadcast_rows(all_wb, m);
            let wb_e = t.mul(b_pos_e, w_e);
            let part_b = t.scatter_add(wb_e, gi.ei.clone(), m);
            let t2 = t.sub(all_wb_b, part_b);
            let mass = t.leaf(&gi.neg_weight_mass * alpha);
            let negc = t.sub(t2, t1);
            let negc = t.add(negc, mass);
            let ci = t.add(pos_c, negc);
            (cu, t.clamp_min(ci, cfg.epsilon_div))
        }
        Normalizer::AbsWeightSum => {
            // Outside the sign regime the normalizers are computed exactly and
            // enter the tape as constants.
            let zw = t.concat_rows(uw, iw);
            let snapshot = EmbeddingMatrix::new(t.value(zw).clone(), n);
            let bench = compute_benchmarks(g, &snapshot);
            let (cu, ci) = normalizers_exact(g, &snapshot, &bench, alpha, cfg.epsilon_div);
            (
                t.leaf(cu.insert_axis(ndarray::Axis(1))),
                t.leaf(ci.insert_axis(ndarray::Axis(1))),
            )
        }
    };

    let keep = 1.0 - cfg.tau * cfg.lambda_reg;
    let inv_cu = t.recip(c_u);
    let inv_ci = t.recip(c_i);
    let step_u = t.scale_rows(agg_u, inv_cu);
    let step_i = t.scale_rows(agg_i, inv_ci);
    let step = t.concat_rows(step_u, step_i);
    let kept = t.scale(zin, keep);
    let moved = t.scale(step, cfg.tau);
    t.add(kept, moved)
}

fn lightgcn(t: &mut Tape, gi: &GraphIndex, z0: Var, cfg: &BaselineConfig) -> Var {
    let coef = t.leaf(gi.lightgcn_e.clone());
    let mut z = z0;
    let mut total = z0;
    for _ in 0..cfg.layers {
        let (u, i) = split(t, gi, z);
        let ie = t.gather(i, gi.ei.clone());
        let ue = t.gather(u, gi.eu.clone());
        let ie_c = t.scale_rows(ie, coef);
        let ue_c = t.scale_rows(ue, coef);
        let out_u = t.scatter_add(ie_c, gi.eu.clone(), gi.n);
        let out_i = t.scatter_add(ue_c, gi.ei.clone(), gi.m);
        z = t.concat_rows(out_u, out_i);
        total = t.add(total, z);
    }
    match cfg.combine {
        LayerCombine::Last => z,
        LayerCombine::Mean => t.scale(total, 1.0 / (cfg.layers + 1) as f64),
    }
}

/// Records the encoder forward from `z0` and returns the output embeddings.
/// With [`WeightSource::Frozen`] the slice needs one matrix per attention layer.
pub fn encoder_forward(
    t: &mut Tape,
    g: &InteractionGraph,
    gi: &GraphIndex,
    z0: Var,
    encoder: &Encoder,
    weights: WeightSource<'_>,
) -> Var {
    match encoder {
        Encoder::Baseline(cfg) => match cfg.kind {
            BaselineKind::Mf => z0,
            BaselineKind::LightGcn => lightgcn(t, gi, z0, cfg),
        },
        Encoder::Rankformer(cfg) => {
            let mut z = z0;
            let mut attn_index = 0;
            for layer in 0..cfg.layers {
                if layer == 0 && cfg.warmup_first_layer {
                    z = warmup(t, gi, z, cfg.tau);
                    continue;
                }
                z = match weights {
                    WeightSource::Live(mode) => attention(t, g, gi, z, cfg, None, mode == GradMode::DetachedWeights),
                    WeightSource::Frozen(list) => attention(t, g, gi, z, cfg, Some(&list[attn_index]), false),
                };
                attn_index += 1;
            }
            z
        }
    }
}

/// The weight-side inputs every attention layer sees in a plain forward from
/// `z0`, for use with [`WeightSource::Frozen`].
pub fn attention_inputs(g: &InteractionGraph, z0: &EmbeddingMatrix, cfg: &RankformerConfig) -> Vec<Array2<f64>> {
    let gi = GraphIndex::new(g);
    let mut t = Tape::new();
    let mut z = t.leaf(z0.data().clone());
    let mut out = Vec::new();
    for layer in 0..cfg.layers {
        if layer == 0 && cfg.warmup_first_layer {
            z = warmup(&mut t, &gi, z, cfg.tau);
            continue;
        }
        let input = if cfg.normalize_embeddings {
            t.normalize_rows(z, cfg.epsilon_div)
        } else {
            z
        };
        out.push(t.value(input).clone());
        z = attention(&mut t, g, &gi, z, cfg, None, true);
    }
    out
}
