use crate::error::LayerError;

/// How the per-node normalizers `C_u`, `C_i` are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalizer {
    /// Sum of absolute attention weights over all positive and negative partners.
    #[default]
    AbsWeightSum,
    /// `C ≡ 1`: the layer is then exactly a plain gradient step.
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankformerConfig {
    /// Step size of the embedded gradient step, in `[0, 1]`.
    pub tau: f64,
    /// Offset separating positive from negative attention.
    pub alpha: f64,
    pub layers: usize,
    /// Self-decay coefficient; the layer keeps `(1 - tau * lambda_reg) z`.
    pub lambda_reg: f64,
    /// First layer uses uniform positive-only weights.
    pub warmup_first_layer: bool,
    /// Rows are L2-normalized at the top of every attention layer.
    pub normalize_embeddings: bool,
    pub epsilon_div: f64,
    pub normalizer: Normalizer,
}

impl Default for RankformerConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            alpha: 2.0,
            layers: 2,
            lambda_reg: 1.0,
            warmup_first_layer: true,
            normalize_embeddings: true,
            epsilon_div: 1e-12,
            normalizer: Normalizer::AbsWeightSum,
        }
    }
}

impl RankformerConfig {
    pub fn validate(&self) -> Result<(), LayerError> {
        let bad = |msg: String| Err(LayerError::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !self.lambda_reg.is_finite() {
            return bad("lambda_reg must be finite".into());
        }
        if self.epsilon_div.is_nan() || self.epsilon_div <= 0.0 {
            return bad(format!("epsilon_div must be > 0, got {}", self.epsilon_div));
        }
        Ok(())
    }

    /// Positive weights are provably positive and negative weights negative,
    /// so the normalizers have closed forms.
    pub fn signs_guaranteed(&self) -> bool {
        self.alpha >= 2.0 && self.normalize_embeddings
    }

    /// Number of full attention layers after the optional warm-up layer.
    pub fn attention_layers(&self) -> usize {
        if self.warmup_first_layer {
            self.layers.saturating_sub(1)
        } else {
            self.layers
        }
    }
}
