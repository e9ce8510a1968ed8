//! The encoders that turn base embeddings into scoring embeddings.

use crate::baselines::{baseline_forward, BaselineConfig, BaselineKind};
use crate::embedding::EmbeddingMatrix;
use crate::error::LayerError;
use crate::graph::InteractionGraph;
use crate::rankformer::{check_shape, forward, RankformerConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Rankformer(RankformerConfig),
    Baseline(BaselineConfig),
}

impl Encoder {
    pub fn layers(&self) -> usize {
        match self {
            Encoder::Rankformer(c) => c.layers,
            Encoder::Baseline(c) => c.layers,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Encoder::Rankformer(_) => "rankformer",
            Encoder::Baseline(c) => match c.kind {
                BaselineKind::Mf => "mf",
                BaselineKind::LightGcn => "lightgcn",
            },
        }
    }

    pub fn forward(&self, g: &InteractionGraph, z0: &EmbeddingMatrix) -> Result<EmbeddingMatrix, LayerError> {
        match self {
            Encoder::Rankformer(c) => Ok(forward(g, z0, c, false)?.embeddings),
            Encoder::Baseline(c) => {
                check_shape(g, z0)?;
                Ok(baseline_forward(g, z0, c))
            }
        }
    }
}
