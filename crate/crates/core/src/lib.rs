//! Ranking-derived graph transformer for implicit-feedback recommendation.
//!
//! The crate is organised around the pipeline: [`data`] and [`graph`] turn an
//! interaction log into a train graph plus held-out edges, [`rankformer`] and
//! [`baselines`] encode embeddings, [`train`] fits base embeddings with BPR,
//! and [`eval`] scores full rankings. [`oracle`] holds slow definitional
//! implementations used by tests and the `verify` command.

pub mod autodiff;
pub mod baselines;
pub mod bench;
pub mod config;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod oracle;
pub mod rankformer;
pub mod seed;
pub mod synthetic;
pub mod train;
pub mod verify;

pub use embedding::EmbeddingMatrix;
pub use graph::InteractionGraph;
