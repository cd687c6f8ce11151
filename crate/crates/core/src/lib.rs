//! Continual-learning laboratory around incremental concept formation.
//!
//! * [`stats`]: incremental Gaussian sufficiency statistics and entropies.
//! * [`tree`]: the Cobweb/4V hierarchy with adaptive and fixed structure.
//! * [`predict`]: best-first multi-concept prediction.
//! * [`nn`]: CobwebNN, its hand-derived gradients, and the MLP replay baseline.
//! * [`data`]: dataset loaders and synthetic data.
//! * [`protocol`]: the ten-split forgetting schedule, experiments and metrics.

pub mod data;
pub mod error;
pub mod exec;
pub mod nn;
pub mod numeric;
pub mod predict;
pub mod protocol;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};
pub use exec::Execution;
pub use predict::{PredictConfig, PredictMode, Predictor, WeightSign};
pub use stats::{AttributeModel, AttributeWeights, GaussianStats, Instance, LabelCounts};
pub use tree::{CobwebTree, NodeId, StructureMode, TreeConfig};
