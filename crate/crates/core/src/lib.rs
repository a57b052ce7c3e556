//! Multimodal graph recommendation.
//!
//! Users and items share one vertex set (users first). Each modality is
//! encoded and propagated over the normalized interaction graph with its own
//! hop count, the results are summed, and a transformer over a few uniformly
//! sampled vertices produces the final representation used for dot-product
//! ranking.

pub mod encoding;
pub mod error;
pub mod eval;
pub mod graph;
pub mod grid;
pub mod io;
pub mod mgdn;
pub mod model;
pub mod objective;
pub mod params;
pub mod rng;
pub mod sgt;
pub mod train;

#[cfg(test)]
mod testing;

pub use encoding::{FeatureStore, ModalityId};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalSplit, MetricReport};
pub use graph::{InteractionSet, NormalizedAdjacency, SparseMatrix};
pub use grid::{grid_search, GridSpec, GridTable};
pub use mgdn::PropagationConfig;
pub use model::{BatchPlan, Model};
pub use objective::{LossBreakdown, TrainingTriple};
pub use train::{train, TrainConfig, TrainData, TrainOutcome};
