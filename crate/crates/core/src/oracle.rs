//! Slow, literal implementations used as test oracles.
//!
//! Everything here loops over user–item pairs (or triples) directly and runs in
//! 64-bit. Nothing in this module reuses the cached sums of the fast path.

use ndarray::{Array1, Array2};

use crate::embedding::EmbeddingMatrix;
use crate::error::LayerError;
use crate::graph::InteractionGraph;
use crate::rankformer::{attention_weight_neg, attention_weight_pos, Normalizer, RankformerConfig};

/// Largest `n · m` the pairwise oracles accept.
pub const MAX_PAIRS: usize = 1_000_000;

fn unit_rows(z: &EmbeddingMatrix, eps: f64) -> EmbeddingMatrix {
    let mut out = z.clone();
    for mut row in out.data_mut().rows_mut() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > eps {
            row.mapv_inplace(|x| x / norm);
        }
    }
    out
}

/// `(b⁺, b⁻)` by summing similarities over every item.
pub fn naive_benchmarks(g: &InteractionGraph, z: &EmbeddingMatrix) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = (g.n_users(), g.n_items());
    let mut b_pos = vec![0.0; n];
    let mut b_neg = vec![0.0; n];
    for u in 0..n {
        let (mut sp, mut cp, mut sn, mut cn) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..m {
            let s = z.user(u).dot(&z.item(i));
            if g.has_edge(u, i) {
                sp += s;
                cp += 1;
            } else {
                sn += s;
                cn += 1;
            }
        }
        if cp > 0 {
            b_pos[u] = sp / cp as f64;
        }
        if cn > 0 {
            b_neg[u] = sn / cn as f64;
        }
    }
    (b_pos, b_neg)
}

/// Dense `n × m` matrix of attention weights: `Ω⁺` on edges, `Ω⁻` elsewhere.
pub fn naive_weights(g: &InteractionGraph, z: &EmbeddingMatrix, alpha: f64) -> Array2<f64> {
    let (n, m) = (g.n_users(), g.n_items());
    let (b_pos, b_neg) = naive_benchmarks(g, z);
    let mut omega = Array2::zeros((n, m));
    for u in 0..n {
        let du = g.user_degree(u);
        for i in 0..m {
            omega[[u, i]] = if g.has_edge(u, i) {
                attention_weight_pos(z.user(u), z.item(i), b_neg[u], alpha, du)
            } else {
                attention_weight_neg(z.user(u), z.item(i), b_pos[u], alpha, m - du)
            };
        }
    }
    omega
}

/// Normalizers `Σ|Ω|` per user and per item.
pub fn naive_normalizers(omega: &Array2<f64>, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let c_user = omega
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|w| w.abs()).sum::<f64>().max(eps))
        .collect();
    let c_item = omega
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|w| w.abs()).sum::<f64>().max(eps))
        .collect();
    (c_user, c_item)
}

/// One attention layer evaluated pair by pair in `O(n·m·d)`.
pub fn naive_layer(
    g: &InteractionGraph,
    z: &EmbeddingMatrix,
    cfg: &RankformerConfig,
) -> Result<EmbeddingMatrix, LayerError> {
    let (n, m, d) = (g.n_users(), g.n_items(), z.dim());
    if n * m > MAX_PAIRS {
        return Err(LayerError::TooLarge(n * m));
    }
    let z = if cfg.normalize_embeddings {
        unit_rows(z, cfg.epsilon_div)
    } else {
        z.clone()
    };
    let omega = naive_weights(g, &z, cfg.alpha);
    let (c_user, c_item) = match cfg.normalizer {
        Normalizer::AbsWeightSum => naive_normalizers(&omega, cfg.epsilon_div),
        Normalizer::Unit => (vec![1.0; n], vec![1.0; m]),
    };
    let keep = 1.0 - cfg.tau * cfg.lambda_reg;
    let mut out = EmbeddingMatrix::zeros(n, m, d);
    for u in 0..n {
        let mut agg = Array1::<f64>::zeros(d);
        for i in 0..m {
            agg.scaled_add(omega[[u, i]], &z.item(i));
        }
        let row = &z.user(u) * keep + &agg * (cfg.tau / c_user[u]);
        out.users_mut().row_mut(u).assign(&row);
    }
    for i in 0..m {
        let mut agg = Array1::<f64>::zeros(d);
        for u in 0..n {
            agg.scaled_add(omega[[u, i]], &z.user(u));
        }
        let row = &z.item(i) * keep + &agg * (cfg.tau / c_item[i]);
        out.items_mut().row_mut(i).assign(&row);
    }
    Ok(out)
}

/// Warm-up layer by direct summation over positive edges.
pub fn naive_warmup_layer(g: &InteractionGraph, z: &EmbeddingMatrix, tau: f64) -> EmbeddingMatrix {
    let (n, m, d) = (g.n_users(), g.n_items(), z.dim());
    let mut out = z.clone();
    for u in 0..n {
        let mut sum = Array1::<f64>::zeros(d);
        let mut count = 0.0;
        for i in 0..m {
            if g.has_edge(u, i) {
                sum += &z.item(i);
                count += 1.0;
            }
        }
        if count > 0.0 {
            let row = &z.user(u) * (1.0 - tau) + &sum * (tau / count);
            out.users_mut().row_mut(u).assign(&row);
        }
    }
    for i in 0..m {
        let mut sum = Array1::<f64>::zeros(d);
        let mut count = 0.0;
        for u in 0..n {
            if g.has_edge(u, i) {
                sum += &z.user(u);
                count += 1.0;
            }
        }
        if count > 0.0 {
            let row = &z.item(i) * (1.0 - tau) + &sum * (tau / count);
            out.items_mut().row_mut(i).assign(&row);
        }
    }
    out
}

/// Value and gradients of the quadratic ranking surrogate
/// `−Σ_u Σ_{i∈N⁺} Σ_{j∈N⁻} ω_uij (s_ui − s_uj) / (d_u (m − d_u)) + reg · ‖Z‖²`
/// with `ω_uij = s_ui − s_uj + α`.
#[derive(Debug, Clone)]
pub struct SurrogateLossReport {
    pub value: f64,
    /// Exact gradient, differentiating through `ω`.
    pub grad: Array2<f64>,
    /// Gradient with every `ω_uij` held at its current value.
    pub frozen_grad: Array2<f64>,
    pub omega_min: f64,
    pub omega_max: f64,
    /// Users with `d_u ∈ {0, m}`, excluded from the pairwise sum.
    pub skipped_users: Vec<usize>,
}

/// Surrogate with regularizer weight 1.
pub fn surrogate_loss(g: &InteractionGraph, z: &EmbeddingMatrix, alpha: f64) -> SurrogateLossReport {
    surrogate_loss_with(g, z, alpha, 1.0)
}

pub fn surrogate_loss_with(
    g: &InteractionGraph,
    z: &EmbeddingMatrix,
    alpha: f64,
    reg: f64,
) -> SurrogateLossReport {
    let (n, m) = (g.n_users(), g.n_items());
    let data = z.data();
    let mut value = 0.0;
    let mut grad = data * (2.0 * reg);
    let mut frozen_grad = grad.clone();
    let (mut omega_min, mut omega_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut skipped_users = Vec::new();
    for u in 0..n {
        let du = g.user_degree(u);
        if du == 0 || du == m {
            skipped_users.push(u);
            continue;
        }
        let norm = 1.0 / (du * (m - du)) as f64;
        let zu = z.user(u);
        for i in 0..m {
            if !g.has_edge(u, i) {
                continue;
            }
            let zi = z.item(i);
            for j in 0..m {
                if g.has_edge(u, j) {
                    continue;
                }
                let zj = z.item(j);
                let delta = zu.dot(&zi) - zu.dot(&zj);
                let omega = delta + alpha;
                omega_min = omega_min.min(omega);
                omega_max = omega_max.max(omega);
                value -= omega * delta * norm;
                for (target, coef) in [(&mut grad, (2.0 * delta + alpha) * norm), (&mut frozen_grad, omega * norm)] {
                    let diff = &zi - &zj;
                    target.row_mut(u).scaled_add(-coef, &diff);
                    target.row_mut(n + i).scaled_add(-coef, &zu);
                    target.row_mut(n + j).scaled_add(coef, &zu);
                }
            }
        }
    }
    value += reg * data.iter().map(|x| x * x).sum::<f64>();
    SurrogateLossReport {
        value,
        grad,
        frozen_grad,
        omega_min,
        omega_max,
        skipped_users,
    }
}

/// Surrogate value at `z` with every `ω_uij` taken from `anchor` instead of `z`.
pub fn frozen_surrogate_value(
    g: &InteractionGraph,
    z: &EmbeddingMatrix,
    anchor: &EmbeddingMatrix,
    alpha: f64,
    reg: f64,
) -> f64 {
    let m = g.n_items();
    let mut value = 0.0;
    for u in 0..g.n_users() {
        let du = g.user_degree(u);
        if du == 0 || du == m {
            continue;
        }
        let norm = 1.0 / (du * (m - du)) as f64;
        for i in 0..m {
            if !g.has_edge(u, i) {
                continue;
            }
            for j in 0..m {
                if g.has_edge(u, j) {
                    continue;
                }
                let omega = anchor.user(u).dot(&anchor.item(i)) - anchor.user(u).dot(&anchor.item(j)) + alpha;
                let delta = z.user(u).dot(&z.item(i)) - z.user(u).dot(&z.item(j));
                value -= omega * delta * norm;
            }
        }
    }
    value + reg * z.data().iter().map(|x| x * x).sum::<f64>()
}

/// Central differences with per-coordinate step `rel_step · (1 + |θ_k|)`.
pub fn central_difference_gradient<F>(f: F, theta: &[f64], rel_step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            let h = rel_step * (1.0 + theta[k].abs());
            probe[k] = theta[k] + h;
            let up = f(&probe);
            probe[k] = theta[k] - h;
            let down = f(&probe);
            probe[k] = theta[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn with_data(template: &EmbeddingMatrix, theta: &[f64]) -> EmbeddingMatrix {
    let data = Array2::from_shape_vec(template.data().raw_dim(), theta.to_vec()).expect("same size");
    EmbeddingMatrix::new(data, template.n_users())
}

fn flat(z: &EmbeddingMatrix) -> Vec<f64> {
    z.data().iter().copied().collect()
}

#[derive(Debug, Clone)]
pub struct GradientStepReport {
    /// `max |(Z − τ∇) − naive layer|` with the analytic frozen-coefficient gradient.
    pub analytic_max_err: f64,
    /// Same with the gradient taken by central differences.
    pub finite_difference_max_err: f64,
    /// `max |∇_fd − ∇| / (1 + |∇|)`.
    pub gradient_scaled_err: f64,
}

/// Layer configuration under which one attention layer is a plain gradient step.
pub fn gradient_step_config(tau: f64, alpha: f64) -> RankformerConfig {
    RankformerConfig {
        tau,
        alpha,
        layers: 1,
        lambda_reg: 1.0,
        warmup_first_layer: false,
        normalize_embeddings: false,
        normalizer: Normalizer::Unit,
        ..Default::default()
    }
}

/// Compares one naive layer (unit normalizers, no warm-up, no row normalization)
/// against `Z − τ ∇L̃`.
///
/// The layer's self term is `(1 − τλ) Z`, which is the step on a surrogate whose
/// regularizer is `(λ/2)‖Z‖²`, and the attention weights are the step's
/// coefficients with `ω` held fixed. The comparison uses exactly that surrogate.
pub fn gradient_step_equivalence(
    g: &InteractionGraph,
    z: &EmbeddingMatrix,
    tau: f64,
    alpha: f64,
) -> Result<GradientStepReport, LayerError> {
    let cfg = gradient_step_config(tau, alpha);
    let layer = naive_layer(g, z, &cfg)?;
    let reg = cfg.lambda_reg / 2.0;
    let report = surrogate_loss_with(g, z, alpha, reg);
    let step = z.data() - &(&report.frozen_grad * tau);
    let analytic_max_err = max_abs(&step, layer.data());

    let fd = central_difference_gradient(
        |theta| frozen_surrogate_value(g, &with_data(z, theta), z, alpha, reg),
        &flat(z),
        1e-4,
    );
    let fd = Array2::from_shape_vec(z.data().raw_dim(), fd).expect("same size");
    let fd_step = z.data() - &(&fd * tau);
    let finite_difference_max_err = max_abs(&fd_step, layer.data());
    let gradient_scaled_err = fd
        .iter()
        .zip(report.frozen_grad.iter())
        .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
        .fold(0.0, f64::max);
    Ok(GradientStepReport {
        analytic_max_err,
        finite_difference_max_err,
        gradient_scaled_err,
    })
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A twice-differentiable scalar objective over a flat parameter vector.
pub trait SmoothObjective {
    fn value(&self, theta: &[f64]) -> f64;
    fn gradient(&self, theta: &[f64]) -> Vec<f64>;
}

/// The ranking surrogate viewed as a function of the flattened embeddings.
pub struct SurrogateObjective<'a> {
    pub graph: &'a InteractionGraph,
    pub template: EmbeddingMatrix,
    pub alpha: f64,
    pub reg: f64,
}

impl SmoothObjective for SurrogateObjective<'_> {
    fn value(&self, theta: &[f64]) -> f64 {
        surrogate_loss_with(self.graph, &with_data(&self.template, theta), self.alpha, self.reg).value
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let r = surrogate_loss_with(self.graph, &with_data(&self.template, theta), self.alpha, self.reg);
        r.grad.iter().copied().collect()
    }
}

/// `½ θᵀAθ − bᵀθ` with symmetric `A`.
pub struct QuadraticObjective {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
}

impl SmoothObjective for QuadraticObjective {
    fn value(&self, theta: &[f64]) -> f64 {
        let t = Array1::from(theta.to_vec());
        0.5 * t.dot(&self.a.dot(&t)) - self.b.dot(&t)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let t = Array1::from(theta.to_vec());
        (self.a.dot(&t) - &self.b).to_vec()
    }
}

/// Hessian by central differences of the analytic gradient, symmetrized.
pub fn finite_difference_hessian(obj: &dyn SmoothObjective, theta: &[f64], rel_step: f64) -> Array2<f64> {
    let p = theta.len();
    let mut h = Array2::zeros((p, p));
    let mut probe = theta.to_vec();
    for k in 0..p {
        let step = rel_step * (1.0 + theta[k].abs());
        probe[k] = theta[k] + step;
        let up = obj.gradient(&probe);
        probe[k] = theta[k] - step;
        let down = obj.gradient(&probe);
        probe[k] = theta[k];
        for r in 0..p {
            h[[r, k]] = (up[r] - down[r]) / (2.0 * step);
        }
    }
    (&h + &h.t()) / 2.0
}

#[derive(Debug, Clone)]
pub struct ResidualRow {
    pub tau: f64,
    pub residual: f64,
    pub residual_over_tau_sq: f64,
}

#[derive(Debug, Clone)]
pub struct ResidualRatio {
    pub tau: f64,
    /// `r(2τ) / r(τ)`.
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ResidualTable {
    pub hessian_coefficient: f64,
    pub rows: Vec<ResidualRow>,
    pub ratios: Vec<ResidualRatio>,
    pub noise_floor: f64,
}

impl ResidualTable {
    /// At least two valid halvings, each with ratio in `[lo, hi]`.
    pub fn scales_quadratically(&self, lo: f64, hi: f64) -> bool {
        self.ratios.len() >= 2 && self.ratios.iter().all(|r| (lo..=hi).contains(&r.ratio))
    }
}

/// Smallest step size whose residual is trusted.
pub const TAU_NOISE_FLOOR: f64 = 1e-3;

/// Residual of the look-ahead gradient against a first-order Hessian correction:
/// `r(τ) = ‖∇L_R(θ) − (I − cτH)∇L(θ)‖` with `L_R(θ) = L(θ − τ∇L(θ))`.
///
/// `∇L_R` and `H` come from central differences. Ratios `r(2τ)/r(τ)` are
/// reported for every pair of consecutive list entries that differ by a factor
/// of two, skipping pairs below the noise floor.
pub fn lookahead_residual_scaling(
    obj: &dyn SmoothObjective,
    theta: &[f64],
    taus: &[f64],
    hessian_coefficient: f64,
) -> ResidualTable {
    let grad = obj.gradient(theta);
    let grad_norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
    let hessian = finite_difference_hessian(obj, theta, 1e-5);
    let h_grad = hessian.dot(&Array1::from(grad.clone()));
    let noise_floor = 1e-9 * (1.0 + grad_norm);

    let rows: Vec<ResidualRow> = taus
        .iter()
        .map(|&tau| {
            let lookahead = |t: &[f64]| {
                let g = obj.gradient(t);
                let shifted: Vec<f64> = t.iter().zip(&g).map(|(x, gx)| x - tau * gx).collect();
                obj.value(&shifted)
            };
            let lr_grad = central_difference_gradient(lookahead, theta, 1e-4);
            let residual = lr_grad
                .iter()
                .zip(&grad)
                .zip(h_grad.iter())
                .map(|((a, g), hg)| {
                    let predicted = g - hessian_coefficient * tau * hg;
                    (a - predicted).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            ResidualRow {
                tau,
                residual,
                residual_over_tau_sq: residual / (tau * tau),
            }
        })
        .collect();

    let mut ratios = Vec::new();
    for pair in rows.windows(2) {
        let (big, small) = (&pair[0], &pair[1]);
        let halving = (big.tau - 2.0 * small.tau).abs() <= 1e-12 * big.tau;
        if !halving || small.tau < TAU_NOISE_FLOOR {
            continue;
        }
        if big.residual <= noise_floor || small.residual <= noise_floor {
            continue;
        }
        ratios.push(ResidualRatio {
            tau: small.tau,
            ratio: big.residual / small.residual,
        });
    }
    ResidualTable {
        hessian_coefficient,
        rows,
        ratios,
        noise_floor,
    }
}

/// Convenience wrapper over the ranking surrogate at embeddings `z`.
pub fn surrogate_residual_scaling(
    g: &InteractionGraph,
    z: &EmbeddingMatrix,
    alpha: f64,
    taus: &[f64],
    hessian_coefficient: f64,
) -> ResidualTable {
    let obj = SurrogateObjective {
        graph: g,
        template: z.clone(),
        alpha,
        reg: 1.0,
    };
    lookahead_residual_scaling(&obj, &flat(z), taus, hessian_coefficient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn worked() -> (InteractionGraph, EmbeddingMatrix) {
        (
            InteractionGraph::from_index_pairs(1, 2, &[(0, 0)]),
            EmbeddingMatrix::new(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 1),
        )
    }

    #[test]
    fn zero_embeddings_have_zero_loss() {
        let g = InteractionGraph::from_index_pairs(2, 3, &[(0, 0), (1, 1), (1, 2)]);
        let r = surrogate_loss(&g, &EmbeddingMatrix::zeros(2, 3, 2), 2.0);
        assert_eq!(r.value, 0.0);
        assert!(r.grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_triple_by_hand() {
        let (g, z) = worked();
        let r = surrogate_loss(&g, &z, 2.0);
        assert!((r.value - 0.0).abs() < 1e-15);
        assert_eq!((r.omega_min, r.omega_max), (3.0, 3.0));
    }

    #[test]
    fn naive_layer_hand_value() {
        let (g, z) = worked();
        let cfg = RankformerConfig {
            tau: 1.0,
            warmup_first_layer: false,
            ..Default::default()
        };
        let out = naive_layer(&g, &z, &cfg).unwrap();
        let expected = array![[0.5, -0.5], [1.0, 0.0], [-1.0, 0.0]];
        assert!((out.data() - &expected).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn naive_layer_tau_zero_identity() {
        let g = InteractionGraph::from_index_pairs(2, 3, &[(0, 0), (1, 1)]);
        let z = EmbeddingMatrix::gaussian(2, 3, 2, 1.0, 3);
        let cfg = RankformerConfig {
            tau: 0.0,
            normalize_embeddings: false,
            ..Default::default()
        };
        assert_eq!(naive_layer(&g, &z, &cfg).unwrap(), z);
    }

    #[test]
    fn naive_layer_refuses_large_instances() {
        let g = InteractionGraph::from_index_pairs(1001, 1000, &[(0, 0)]);
        let z = EmbeddingMatrix::zeros(1001, 1000, 1);
        assert!(matches!(
            naive_layer(&g, &z, &RankformerConfig::default()),
            Err(LayerError::TooLarge(_))
        ));
    }

    #[test]
    fn gradient_step_worked_instance() {
        let (g, z) = worked();
        let r = gradient_step_equivalence(&g, &z, 0.7, 2.0).unwrap();
        assert!(r.analytic_max_err <= 1e-12, "{r:?}");
        let r0 = gradient_step_equivalence(&g, &z, 0.0, 2.0).unwrap();
        assert_eq!(r0.analytic_max_err, 0.0);
    }

    #[test]
    fn surrogate_gradients_match_central_differences() {
        let g = InteractionGraph::from_index_pairs(3, 4, &[(0, 0), (0, 1), (1, 2), (2, 3), (2, 0)]);
        let z = EmbeddingMatrix::gaussian(3, 4, 2, 3.0, 11);
        let r = surrogate_loss(&g, &z, 2.0);
        let theta = flat(&z);
        // The loss is quadratic along every single coordinate, so central
        // differences have no truncation term and only rounding is left: it
        // scales like eps/h instead of shrinking with h.
        for h in [1e-3, 1e-4] {
            let fd = central_difference_gradient(|t| surrogate_loss(&g, &with_data(&z, t), 2.0).value, &theta, h);
            let err = fd.iter().zip(r.grad.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = r.grad.iter().fold(1.0_f64, |a, b| a.max(b.abs()));
            assert!(err <= 1e-5, "h={h}: {err}");
            assert!(err <= 1e-12 * scale / h, "h={h}: {err} above rounding level");
        }
    }

    #[test]
    fn quadratic_toy_residual_with_exact_expansion() {
        let a = array![[2.0, 0.3, 0.0], [0.3, 1.0, -0.2], [0.0, -0.2, 1.5]];
        let obj = QuadraticObjective { a, b: array![0.1, -0.4, 0.2] };
        let theta = [0.5, -0.3, 0.8];
        let table = lookahead_residual_scaling(&obj, &theta, &[0.2, 0.1, 0.05], 2.0);
        assert_eq!(table.ratios.len(), 2);
        for r in &table.ratios {
            assert!((r.ratio - 4.0).abs() <= 0.5, "{table:?}");
        }
    }

    #[test]
    fn stationary_point_has_zero_residual() {
        let g = InteractionGraph::from_index_pairs(2, 3, &[(0, 0), (1, 1), (1, 2)]);
        let z = EmbeddingMatrix::zeros(2, 3, 2);
        let table = surrogate_residual_scaling(&g, &z, 2.0, &[0.2, 0.1, 0.05], 3.0);
        assert!(table.rows.iter().all(|r| r.residual == 0.0), "{table:?}");
        assert!(table.ratios.is_empty());
    }
}
