//! BPR training of base embeddings through an encoder.

mod optim;
mod sampler;
pub mod tape;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::DatasetSplit;
use crate::embedding::EmbeddingMatrix;
use crate::encoder::Encoder;
use crate::error::TrainError;
use crate::eval::{evaluate_split, EvalConfig, HeldOut};
use crate::graph::InteractionGraph;
use crate::seed::derive_seed;

pub use optim::Adam;
pub use sampler::{sample_bpr_batch, BprBatch};
pub use tape::{GradMode, GraphIndex, WeightSource};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Positives per step; 0 uses every train edge once per epoch in one step.
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub patience: usize,
    pub seed: u64,
    pub grad_mode: GradMode,
    pub dim: usize,
    /// Standard deviation of the Gaussian initialization.
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 0,
            negatives_per_positive: 1,
            patience: 20,
            seed: 0,
            grad_mode: GradMode::ThroughLayers,
            dim: 64,
            init_std: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be >= 1".into());
        }
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std must be > 0, got {}", self.init_std));
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean of `−ln σ(pos − neg)`.
pub fn bpr_loss(scores_pos: &[f64], scores_neg: &[f64]) -> f64 {
    assert_eq!(scores_pos.len(), scores_neg.len(), "score vectors differ in length");
    if scores_pos.is_empty() {
        return 0.0;
    }
    let total: f64 = scores_pos.iter().zip(scores_neg).map(|(p, n)| softplus(n - p)).sum();
    total / scores_pos.len() as f64
}

/// Batch BPR loss through the encoder and its gradient with respect to `z0`.
/// Weight decay is not included; the optimizer applies it.
pub fn loss_and_gradient(
    g: &InteractionGraph,
    gi: &GraphIndex,
    z0: &EmbeddingMatrix,
    encoder: &Encoder,
    batch: &BprBatch,
    weights: WeightSource<'_>,
) -> (f64, Array2<f64>) {
    let n = g.n_users();
    let mut t = Tape::new();
    let z = t.leaf(z0.data().clone());
    if batch.is_empty() {
        return (0.0, Array2::zeros(z0.data().raw_dim()));
    }
    let out = tape::encoder_forward(&mut t, g, gi, z, encoder, weights);
    let zu = t.gather(out, batch.users.clone().into());
    let zi = t.gather(out, batch.pos.iter().map(|i| i + n).collect::<Vec<_>>().into());
    let zj = t.gather(out, batch.neg.iter().map(|j| j + n).collect::<Vec<_>>().into());
    let diff = t.sub(zi, zj);
    let delta = t.row_dot(zu, diff);
    let neg_delta = t.scale(delta, -1.0);
    let sp = t.softplus(neg_delta);
    let loss = t.mean(sp);
    let value = t.value(loss)[[0, 0]];
    let mut grads = t.backward(loss);
    let grad = grads.take(z).unwrap_or_else(|| Array2::zeros(z0.data().raw_dim()));
    (value, grad)
}

/// Loss value only, for the same batch and weight source.
pub fn batch_loss(
    g: &InteractionGraph,
    z0: &EmbeddingMatrix,
    encoder: &Encoder,
    batch: &BprBatch,
    weights: WeightSource<'_>,
) -> f64 {
    let gi = GraphIndex::new(g);
    let mut t = Tape::new();
    let z = t.leaf(z0.data().clone());
    let out = tape::encoder_forward(&mut t, g, &gi, z, encoder, weights);
    let v = t.value(out);
    let n = g.n_users();
    let score = |u: usize, i: usize| v.row(u).dot(&v.row(n + i));
    let pos: Vec<f64> = batch.users.iter().zip(&batch.pos).map(|(&u, &i)| score(u, i)).collect();
    let neg: Vec<f64> = batch.users.iter().zip(&batch.neg).map(|(&u, &j)| score(u, j)).collect();
    bpr_loss(&pos, &neg)
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub base_embeddings: EmbeddingMatrix,
    pub optimizer: Adam,
    pub epoch: usize,
    pub best_val_metric: f64,
    pub epochs_since_best: usize,
}

impl TrainState {
    pub fn new(z0: EmbeddingMatrix) -> Self {
        let shape = z0.data().dim();
        Self {
            base_embeddings: z0,
            optimizer: Adam::new(shape),
            epoch: 0,
            best_val_metric: f64::NEG_INFINITY,
            epochs_since_best: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: f64,
    pub recall20: f64,
    pub ndcg20: f64,
    pub seconds: f64,
}

pub fn write_history_csv(path: &Path, rows: &[HistoryRow]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,loss,recall@20,ndcg@20,seconds")?;
    for r in rows {
        writeln!(f, "{},{:.8},{:.6},{:.6},{:.3}", r.epoch, r.loss, r.recall20, r.ndcg20, r.seconds)?;
    }
    f.flush()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Base embeddings at the best validation epoch (the initialization when no epoch ran).
    pub best: EmbeddingMatrix,
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
    pub history: Vec<HistoryRow>,
    pub stopped_early: bool,
    /// Positives dropped by the sampler because their user had no negatives.
    pub skipped_positives: usize,
}

pub fn init_embeddings(g: &InteractionGraph, cfg: &TrainConfig) -> EmbeddingMatrix {
    EmbeddingMatrix::gaussian(
        g.n_users(),
        g.n_items(),
        cfg.dim,
        cfg.init_std,
        derive_seed(cfg.seed, "init"),
    )
}

fn val_metrics(split: &DatasetSplit, encoder: &Encoder, base: &EmbeddingMatrix) -> Result<(f64, f64), TrainError> {
    let z = encoder.forward(&split.graph, base)?;
    let r = evaluate_split(split, &z, HeldOut::Val, &EvalConfig::default());
    Ok((r.recall_at(20), r.ndcg_at(20)))
}

/// Trains from the seeded initialization.
pub fn train(split: &DatasetSplit, encoder: &Encoder, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let z0 = init_embeddings(&split.graph, cfg);
    train_from(split, encoder, cfg, z0)
}

/// Runs epochs from `z0`, keeping the embeddings with the best validation
/// NDCG@20 and stopping after `patience` epochs without improvement.
pub fn train_from(
    split: &DatasetSplit,
    encoder: &Encoder,
    cfg: &TrainConfig,
    z0: EmbeddingMatrix,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if split.val.is_empty() {
        return Err(TrainError::InvalidConfig("validation split is empty".into()));
    }
    let g = &split.graph;
    let gi = GraphIndex::new(g);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "sampler"));
    let mut state = TrainState::new(z0);
    let mut best = state.base_embeddings.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut skipped = 0;
    let mut stopped_early = false;
    let steps_per_epoch = if cfg.batch_size == 0 {
        1
    } else {
        g.n_edges().div_ceil(cfg.batch_size).max(1)
    };
    let last_good = |best_epoch: usize| (best_epoch > 0).then_some(best_epoch);

    while state.epoch < cfg.epochs {
        state.epoch += 1;
        let epoch = state.epoch;
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for _ in 0..steps_per_epoch {
            let batch = sample_bpr_batch(g, cfg.batch_size, cfg.negatives_per_positive, &mut rng);
            skipped += batch.skipped;
            if batch.is_empty() {
                continue;
            }
            let (loss, grad) = loss_and_gradient(
                g,
                &gi,
                &state.base_embeddings,
                encoder,
                &batch,
                WeightSource::Live(cfg.grad_mode),
            );
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    last_good: last_good(best_epoch),
                });
            }
            if let Some(row) = grad.rows().into_iter().position(|r| r.iter().any(|x| !x.is_finite())) {
                return Err(TrainError::NonFiniteGradient {
                    epoch,
                    row,
                    last_good: last_good(best_epoch),
                });
            }
            state
                .optimizer
                .step(state.base_embeddings.data_mut(), &grad, cfg.lr, cfg.weight_decay);
            loss_sum += loss * batch.len() as f64;
            loss_count += batch.len();
        }
        let loss = if loss_count == 0 { 0.0 } else { loss_sum / loss_count as f64 };
        if !state.base_embeddings.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                last_good: last_good(best_epoch),
            });
        }
        let (recall20, ndcg20) = val_metrics(split, encoder, &state.base_embeddings)?;
        history.push(HistoryRow {
            epoch,
            loss,
            recall20,
            ndcg20,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: loss {loss:.5} val recall@20 {recall20:.4} ndcg@20 {ndcg20:.4}");
        if ndcg20 > state.best_val_metric {
            state.best_val_metric = ndcg20;
            state.epochs_since_best = 0;
            best = state.base_embeddings.clone();
            best_epoch = epoch;
        } else {
            state.epochs_since_best += 1;
            if state.epochs_since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let best_val_ndcg = if best_epoch == 0 {
        val_metrics(split, encoder, &best)?.1
    } else {
        state.best_val_metric
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_ndcg,
        history,
        stopped_early,
        skipped_positives: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::BaselineConfig;

    #[test]
    fn bpr_loss_examples() {
        assert!((bpr_loss(&[0.0, 1.0], &[0.0, 1.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bpr_loss(&[800.0], &[0.0]) < 1e-300);
        assert!((bpr_loss(&[1.0], &[0.0]) - 0.3133).abs() < 1e-4);
        assert!((bpr_loss(&[1.0], &[0.0]) - (-1f64).exp().ln_1p()).abs() < 1e-15);
    }

    #[test]
    fn mf_gradient_closed_form() {
        let g = InteractionGraph::from_index_pairs(2, 3, &[(0, 0), (1, 2)]);
        let z = EmbeddingMatrix::gaussian(2, 3, 4, 0.7, 8);
        let batch = BprBatch {
            users: vec![0],
            pos: vec![0],
            neg: vec![1],
            skipped: 0,
        };
        let gi = GraphIndex::new(&g);
        let enc = Encoder::Baseline(BaselineConfig::mf());
        let (_, grad) = loss_and_gradient(&g, &gi, &z, &enc, &batch, WeightSource::Live(GradMode::ThroughLayers));
        let diff = &z.item(0) - &z.item(1);
        let delta = z.user(0).dot(&diff);
        let sigma = 1.0 / (1.0 + (-delta).exp());
        let expected = &diff * (sigma - 1.0);
        assert!((&grad.row(0) - &expected).iter().all(|x| x.abs() < 1e-14));
        assert!(grad.row(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn saturated_batch_has_tiny_gradient() {
        let g = InteractionGraph::from_index_pairs(1, 2, &[(0, 0)]);
        let z = EmbeddingMatrix::new(ndarray::array![[30.0], [30.0], [-30.0]], 1);
        let batch = BprBatch {
            users: vec![0],
            pos: vec![0],
            neg: vec![1],
            skipped: 0,
        };
        let (loss, grad) = loss_and_gradient(
            &g,
            &GraphIndex::new(&g),
            &z,
            &Encoder::Baseline(BaselineConfig::mf()),
            &batch,
            WeightSource::Live(GradMode::ThroughLayers),
        );
        assert!(loss < 1e-300);
        assert!(grad.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..Default::default() }.validate().is_err());
    }
}
