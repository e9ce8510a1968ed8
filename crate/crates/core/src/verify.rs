//! Property suites run by `rankformer verify`: the fast layer against the
//! definitional oracle, the gradient-step identity, normalizer closed forms,
//! weight signs and the look-ahead residual scaling.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingMatrix;
use crate::error::LayerError;
use crate::graph::InteractionGraph;
use crate::oracle::{gradient_step_config, gradient_step_equivalence, naive_layer, naive_weights, surrogate_residual_scaling};
use crate::rankformer::{attention_step, compute_benchmarks, normalize_rows, normalizers_closed_form, RankformerConfig};
use crate::seed::derive_seed;
use crate::synthetic::random_graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyLevel {
    Fast,
    Full,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Added to every entry of the fast layer output before comparison.
    /// Only for checking that the suite can fail.
    pub perturb_fast: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Informational checks never fail the suite.
    pub gating: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().filter(|c| c.gating).all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = match (c.passed, c.gating) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "INFO",
            };
            writeln!(f, "{status} {:<28} {} ({:.2}s)", c.name, c.detail, c.seconds)?;
        }
        write!(f, "{}", if self.passed() { "all gating checks passed" } else { "verification FAILED" })
    }
}

fn timed(name: &str, gating: bool, body: impl FnOnce() -> Result<(bool, String), LayerError>) -> Check {
    let start = Instant::now();
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    Check {
        name: name.into(),
        passed,
        gating,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Random instance with `n, m ≤ max_side` and `d ≤ max_dim`.
pub fn random_instance(rng: &mut ChaCha8Rng, max_side: usize, max_dim: usize) -> (InteractionGraph, EmbeddingMatrix) {
    let n = rng.random_range(1..=max_side);
    let m = rng.random_range(2..=max_side);
    let d = rng.random_range(1..=max_dim);
    let density = rng.random_range(0.05..0.6);
    let g = random_graph(n, m, density, rng.random());
    let z = EmbeddingMatrix::gaussian(n, m, d, 1.0, rng.random());
    (g, z)
}

/// Fast layer against the pairwise oracle on `cases` instances with
/// `n, m ≤ 50`, `d ≤ 8`, `α = 2` and `τ` alternating between 0.3 and 1.0.
/// Returns the worst relative row difference.
pub fn fast_naive_max_error(cases: usize, seed: u64, perturb: f64) -> Result<f64, LayerError> {
    let mut worst = 0.0_f64;
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("equivalence-{case}")));
        let (g, z) = random_instance(&mut rng, 50, 8);
        let cfg = RankformerConfig {
            tau: if case % 2 == 0 { 0.3 } else { 1.0 },
            alpha: 2.0,
            layers: 1,
            warmup_first_layer: false,
            ..Default::default()
        };
        let mut fast = attention_step(&g, &z, &cfg)?;
        if perturb != 0.0 {
            fast.data_mut().mapv_inplace(|x| x + perturb);
        }
        let slow = naive_layer(&g, &z, &cfg)?;
        worst = worst.max(fast.max_rel_row_diff(&slow));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradientStepSummary {
    pub naive_analytic: f64,
    pub fast_analytic: f64,
    pub finite_difference: f64,
    pub gradient_scaled: f64,
}

/// Gradient-step identity on `cases` tiny instances (`n, m ≤ 6`, `d ≤ 3`).
pub fn gradient_step_max_errors(cases: usize, seed: u64, perturb: f64) -> Result<GradientStepSummary, LayerError> {
    let mut s = GradientStepSummary::default();
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("gradient-step-{case}")));
        let (g, z) = random_instance(&mut rng, 6, 3);
        let tau = rng.random_range(0.05..1.0);
        let alpha = 2.0;
        let r = gradient_step_equivalence(&g, &z, tau, alpha)?;
        let cfg = gradient_step_config(tau, alpha);
        let mut fast = attention_step(&g, &z, &cfg)?;
        if perturb != 0.0 {
            fast.data_mut().mapv_inplace(|x| x + perturb);
        }
        let slow = naive_layer(&g, &z, &cfg)?;
        s.naive_analytic = s.naive_analytic.max(r.analytic_max_err);
        s.fast_analytic = s.fast_analytic.max(r.analytic_max_err + fast.max_abs_diff(&slow));
        s.finite_difference = s.finite_difference.max(r.finite_difference_max_err);
        s.gradient_scaled = s.gradient_scaled.max(r.gradient_scaled_err);
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SignScan {
    pub instances: usize,
    pub pairs: usize,
    /// Positive-edge weights below zero or negative-pair weights above zero.
    pub sign_violations: usize,
    pub zero_weights: usize,
    /// Worst `|Σ|Ω⁺| − (b⁺ − b⁻ + α)|` and the negative-side analogue.
    pub user_identity_err: f64,
    /// Worst relative difference between the closed-form and summed normalizers.
    pub normalizer_rel_err: f64,
}

/// Exhaustive sign and closed-form scan on unit-row instances with `α = 2`.
pub fn sign_and_identity_scan(cases: usize, seed: u64, alpha: f64) -> SignScan {
    let mut scan = SignScan::default();
    for case in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("signs-{case}")));
        let (g, z) = random_instance(&mut rng, 12, 4);
        let z = normalize_rows(&z, 1e-12).matrix;
        let omega = naive_weights(&g, &z, alpha);
        let bench = compute_benchmarks(&g, &z);
        let (c_user, c_item) = normalizers_closed_form(&g, &z, &bench, alpha, 1e-12);
        scan.instances += 1;
        for u in 0..g.n_users() {
            let (mut pos, mut neg) = (0.0, 0.0);
            for i in 0..g.n_items() {
                let w = omega[[u, i]];
                scan.pairs += 1;
                // Reachable at α = 2 when rows are antipodal (e.g. d = 1).
                scan.zero_weights += (w == 0.0) as usize;
                if g.has_edge(u, i) {
                    pos += w.abs();
                    scan.sign_violations += (w < 0.0) as usize;
                } else {
                    neg += w.abs();
                    scan.sign_violations += (w > 0.0) as usize;
                }
            }
            let gap = bench.b_pos[u] - bench.b_neg[u] + alpha;
            let du = g.user_degree(u);
            if du > 0 {
                scan.user_identity_err = scan.user_identity_err.max((pos - gap).abs());
            }
            if du < g.n_items() {
                scan.user_identity_err = scan.user_identity_err.max((neg - gap).abs());
            }
            let summed = f64::max(pos + neg, 1e-12);
            scan.normalizer_rel_err = scan.normalizer_rel_err.max((c_user[u] - summed).abs() / summed);
        }
        for i in 0..g.n_items() {
            let summed = f64::max(omega.column(i).iter().map(|w| w.abs()).sum(), 1e-12);
            scan.normalizer_rel_err = scan.normalizer_rel_err.max((c_item[i] - summed).abs() / summed);
        }
    }
    scan
}

/// Ratios `r(2τ)/r(τ)` of the look-ahead residual on `instances` tiny surrogate
/// problems. Returns, per instance, the valid ratios.
pub fn lookahead_ratios(instances: usize, seed: u64, taus: &[f64], coefficient: f64) -> Vec<Vec<f64>> {
    (0..instances)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("lookahead-{k}")));
            let n = rng.random_range(2..=4);
            let m = rng.random_range(3..=5);
            let g = random_graph(n, m, 0.4, rng.random());
            let z = EmbeddingMatrix::gaussian(n, m, 3, 0.5, rng.random());
            surrogate_residual_scaling(&g, &z, 2.0, taus, coefficient)
                .ratios
                .iter()
                .map(|r| r.ratio)
                .collect()
        })
        .collect()
}

/// Every instance has at least two ratios and all of them fall in `[lo, hi]`.
pub fn ratios_in_band(ratios: &[Vec<f64>], lo: f64, hi: f64) -> bool {
    !ratios.is_empty() && ratios.iter().all(|r| r.len() >= 2 && r.iter().all(|x| (lo..=hi).contains(x)))
}

fn fmt_ratios(ratios: &[Vec<f64>]) -> String {
    ratios
        .iter()
        .map(|r| r.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Step sizes for the exact second-order expansion check.
pub const LOOKAHEAD_TAUS_EXACT: [f64; 3] = [0.05, 0.025, 0.0125];
/// Step sizes used with the `3τH` correction.
pub const LOOKAHEAD_TAUS_STATED: [f64; 3] = [0.2, 0.1, 0.05];

pub fn run(level: VerifyLevel, opts: &VerifyOptions) -> VerifyReport {
    let seed = opts.seed;
    let mut report = VerifyReport::default();
    report.checks.push(timed("fast_naive_equivalence", true, || {
        let err = fast_naive_max_error(100, seed, opts.perturb_fast)?;
        Ok((err <= 1e-6, format!("100 instances, max rel row diff {err:.3e} (tol 1e-6)")))
    }));
    report.checks.push(timed("gradient_step_identity", true, || {
        let s = gradient_step_max_errors(50, seed, opts.perturb_fast)?;
        let ok = s.naive_analytic <= 1e-8 && s.fast_analytic <= 1e-8 && s.finite_difference <= 1e-4 && s.gradient_scaled <= 1e-4;
        Ok((
            ok,
            format!(
                "50 instances, analytic {:.3e} (fast {:.3e}, tol 1e-8), finite-diff step {:.3e} grad {:.3e} (tol 1e-4)",
                s.naive_analytic, s.fast_analytic, s.finite_difference, s.gradient_scaled
            ),
        ))
    }));
    if level == VerifyLevel::Full {
        report.checks.push(timed("sign_structure", true, || {
            let s = sign_and_identity_scan(50, seed, 2.0);
            Ok((
                s.sign_violations == 0,
                format!(
                    "{} pairs over {} instances, {} violations, {} exact zeros",
                    s.pairs, s.instances, s.sign_violations, s.zero_weights
                ),
            ))
        }));
        report.checks.push(timed("normalizer_closed_forms", true, || {
            let s = sign_and_identity_scan(50, seed, 2.0);
            Ok((
                s.user_identity_err <= 1e-8 && s.normalizer_rel_err <= 1e-8,
                format!(
                    "per-side identity err {:.3e}, normalizer rel err {:.3e} (tol 1e-8)",
                    s.user_identity_err, s.normalizer_rel_err
                ),
            ))
        }));
        report.checks.push(timed("lookahead_residual_2tauH", true, || {
            let r = lookahead_ratios(3, seed, &LOOKAHEAD_TAUS_EXACT, 2.0);
            Ok((ratios_in_band(&r, 3.0, 5.0), format!("ratios {} (band [3,5])", fmt_ratios(&r))))
        }));
        report.checks.push(timed("lookahead_residual_3tauH", false, || {
            let r = lookahead_ratios(3, seed, &LOOKAHEAD_TAUS_STATED, 3.0);
            Ok((
                ratios_in_band(&r, 3.0, 5.0),
                format!("ratios {} (band [3,5]; first-order residual expected near 2)", fmt_ratios(&r)),
            ))
        }));
    }
    report
}
