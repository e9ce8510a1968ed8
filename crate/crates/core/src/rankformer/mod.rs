//! The Rankformer encoder: ranking-gradient attention over positive and
//! negative user–item relations, evaluated in linear time in the edge count.

mod config;
mod layer;
mod workspace;

pub use config::{Normalizer, RankformerConfig};
pub use layer::{attention_step, forward, rankformer_layer, warmup_layer, ForwardOutput};
pub use workspace::{
    attention_weight_neg, attention_weight_pos, compute_benchmarks, compute_normalizers,
    normalize_rows, normalizers_closed_form, normalizers_exact, Benchmarks, LayerWorkspace,
    NormalizedRows, UserScaledSums,
};
pub(crate) use layer::check_shape;
