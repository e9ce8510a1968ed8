//! Full-ranking top-K evaluation and the untrained layer sweep.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use ndarray::ArrayView1;
use rayon::prelude::*;

use crate::baselines::BaselineConfig;
use crate::data::DatasetSplit;
use crate::embedding::EmbeddingMatrix;
use crate::encoder::Encoder;
use crate::error::LayerError;
use crate::graph::InteractionGraph;
use crate::rankformer::RankformerConfig;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub mask_train: bool,
    pub mask_val_at_test: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![20],
            mask_train: true,
            mask_val_at_test: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(format!("ks must be nonempty and each >= 1, got {:?}", self.ks));
        }
        Ok(())
    }

    fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub items: Vec<usize>,
    /// Fewer unmasked items than requested.
    pub truncated: bool,
}

fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top `k` of `scores` in descending order, ties by ascending index.
/// `masked` must be sorted ascending; those items are never returned.
pub fn top_k(scores: ArrayView1<'_, f64>, masked: &[usize], k: usize) -> Ranking {
    let mut cands: Vec<(usize, f64)> = Vec::with_capacity(scores.len());
    let mut mask = masked.iter().peekable();
    for (i, &s) in scores.iter().enumerate() {
        while mask.next_if(|&&mi| mi < i).is_some() {}
        if mask.next_if_eq(&&i).is_some() {
            continue;
        }
        cands.push((i, s));
    }
    let truncated = cands.len() < k;
    if k > 0 && k < cands.len() {
        cands.select_nth_unstable_by(k - 1, rank_order);
        cands.truncate(k);
    }
    if k == 0 {
        cands.clear();
    }
    cands.sort_unstable_by(rank_order);
    Ranking {
        items: cands.into_iter().map(|(i, _)| i).collect(),
        truncated,
    }
}

/// Scores every item for user `u` by inner product and returns the top `k`.
pub fn score_and_rank(z: &EmbeddingMatrix, u: usize, masked: &[usize], k: usize) -> Ranking {
    let scores = z.items().dot(&z.user(u));
    top_k(scores.view(), masked, k)
}

/// `relevant` is sorted and deduplicated.
pub fn recall_at_k(topk: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = topk.iter().take(k).filter(|i| relevant.binary_search(i).is_ok()).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-relevance NDCG with the ideal DCG truncated at `min(k, |relevant|)`.
pub fn ndcg_at_k(topk: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let discount = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let dcg: f64 = topk
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(r, _)| discount(r))
        .sum();
    let idcg: f64 = (0..k.min(relevant.len())).map(discount).sum();
    dcg / idcg
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub relevant: usize,
    /// Indexed like `EvalResult::ks`.
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users_evaluated: usize,
    pub per_user: Vec<UserMetrics>,
}

impl EvalResult {
    fn position(&self, k: usize) -> usize {
        self.ks
            .iter()
            .position(|&x| x == k)
            .unwrap_or_else(|| panic!("K={k} was not evaluated"))
    }

    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall[self.position(k)]
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg[self.position(k)]
    }
}

fn group_by_user(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n];
    for &(u, i) in edges {
        out[u].push(i);
    }
    for v in &mut out {
        v.sort_unstable();
        v.dedup();
    }
    out
}

/// Evaluates `heldout` positives. Train positives of `g` are masked when
/// `cfg.mask_train`; `extra_mask` edges are always masked.
pub fn evaluate(
    g: &InteractionGraph,
    heldout: &[(usize, usize)],
    extra_mask: &[(usize, usize)],
    z: &EmbeddingMatrix,
    cfg: &EvalConfig,
) -> EvalResult {
    let n = g.n_users();
    let relevant = group_by_user(n, heldout);
    let extra = group_by_user(n, extra_mask);
    let kmax = cfg.max_k();
    let per_user: Vec<UserMetrics> = (0..n)
        .into_par_iter()
        .filter(|&u| !relevant[u].is_empty())
        .map(|u| {
            let mut masked: Vec<usize> = extra[u].clone();
            if cfg.mask_train {
                masked.extend_from_slice(g.user_items(u));
                masked.sort_unstable();
                masked.dedup();
            }
            let ranking = score_and_rank(z, u, &masked, kmax);
            let rel = &relevant[u];
            UserMetrics {
                user: u,
                relevant: rel.len(),
                recall: cfg.ks.iter().map(|&k| recall_at_k(&ranking.items, rel, k)).collect(),
                ndcg: cfg.ks.iter().map(|&k| ndcg_at_k(&ranking.items, rel, k)).collect(),
            }
        })
        .collect();
    let count = per_user.len();
    let mean = |pick: &dyn Fn(&UserMetrics) -> f64| {
        if count == 0 {
            0.0
        } else {
            per_user.iter().map(pick).sum::<f64>() / count as f64
        }
    };
    let recall = (0..cfg.ks.len()).map(|j| mean(&|m| m.recall[j])).collect();
    let ndcg = (0..cfg.ks.len()).map(|j| mean(&|m| m.ndcg[j])).collect();
    EvalResult {
        ks: cfg.ks.clone(),
        recall,
        ndcg,
        users_evaluated: count,
        per_user,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeldOut {
    Val,
    Test,
}

impl HeldOut {
    pub fn label(self) -> &'static str {
        match self {
            HeldOut::Val => "val",
            HeldOut::Test => "test",
        }
    }
}

/// Evaluates one held-out part of a split; validation positives are masked on
/// the test part when `cfg.mask_val_at_test` is set.
pub fn evaluate_split(split: &DatasetSplit, z: &EmbeddingMatrix, part: HeldOut, cfg: &EvalConfig) -> EvalResult {
    match part {
        HeldOut::Val => evaluate(&split.graph, &split.val, &[], z, cfg),
        HeldOut::Test => {
            let extra: &[(usize, usize)] = if cfg.mask_val_at_test { &split.val } else { &[] };
            evaluate(&split.graph, &split.test, extra, z, cfg)
        }
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[(HeldOut, &EvalResult)]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "split,K,recall,ndcg,users")?;
    for (part, r) in rows {
        for (j, k) in r.ks.iter().enumerate() {
            writeln!(f, "{},{},{:.6},{:.6},{}", part.label(), k, r.recall[j], r.ndcg[j], r.users_evaluated)?;
        }
    }
    f.flush()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepEncoder {
    Rankformer { tau: f64, alpha: f64 },
    LightGcn,
}

impl SweepEncoder {
    pub fn label(&self) -> String {
        match self {
            SweepEncoder::Rankformer { tau, .. } => format!("rankformer_tau{tau}"),
            SweepEncoder::LightGcn => "lightgcn".to_owned(),
        }
    }

    pub fn at_depth(&self, layers: usize) -> Encoder {
        match *self {
            SweepEncoder::Rankformer { tau, alpha } => Encoder::Rankformer(RankformerConfig {
                tau,
                alpha,
                layers,
                ..RankformerConfig::default()
            }),
            SweepEncoder::LightGcn => Encoder::Baseline(BaselineConfig::lightgcn(layers)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub encoder: String,
    pub layers: usize,
    pub ndcg20: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Best NDCG@20 among rows whose encoder label starts with `prefix` and
    /// whose depth lies in `depths`.
    pub fn best(&self, prefix: &str, depths: std::ops::RangeInclusive<usize>) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter(|r| r.encoder.starts_with(prefix) && depths.contains(&r.layers))
            .max_by(|a, b| a.ndcg20.total_cmp(&b.ndcg20))
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "encoder,L,ndcg@20")?;
        for r in &self.rows {
            writeln!(f, "{},{},{:.6}", r.encoder, r.layers, r.ndcg20)?;
        }
        f.flush()
    }
}

/// Initial embeddings for the sweep: standard Gaussian scaled by `1/√d`.
pub fn sweep_init(g: &InteractionGraph, dim: usize, seed: u64) -> EmbeddingMatrix {
    EmbeddingMatrix::gaussian(
        g.n_users(),
        g.n_items(),
        dim,
        1.0 / (dim as f64).sqrt(),
        derive_seed(seed, "sweep-init"),
    )
}

/// Test NDCG@20 of untrained encoders for every depth `0..=max_layers`, all
/// starting from the same initialization.
pub fn layer_sweep(
    split: &DatasetSplit,
    encoders: &[SweepEncoder],
    max_layers: usize,
    dim: usize,
    seed: u64,
) -> Result<SweepTable, LayerError> {
    let z0 = sweep_init(&split.graph, dim, seed);
    let cfg = EvalConfig::default();
    let mut table = SweepTable::default();
    for enc in encoders {
        for layers in 0..=max_layers {
            let z = enc.at_depth(layers).forward(&split.graph, &z0)?;
            let r = evaluate_split(split, &z, HeldOut::Test, &cfg);
            table.rows.push(SweepRow {
                encoder: enc.label(),
                layers,
                ndcg20: r.ndcg_at(20),
            });
        }
    }
    Ok(table)
}
