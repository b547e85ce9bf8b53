//! Channel-splitting transforms for convolutional networks, with cost
//! models, a small training engine, equivalence oracles and a greedy split
//! search.

pub mod arch;
pub mod cost;
pub mod data;
pub mod graph;
pub mod oracle;
pub mod search;
pub mod tensor;
pub mod transform;

pub use arch::{Architecture, Block, Branch, ClassifierSpec, ConvSpec, Layer, PoolSpec, Shape};
pub use cost::{CostReport, Schedule};
pub use data::Dataset;
pub use oracle::{EmbeddingReport, EquivalenceReport, GradientReport};
pub use search::{Evaluator, SearchConfig, SearchTrace};
pub use tensor::{TensorBuffer, TrainConfig, WeightStore};
pub use transform::{SplitMode, SplitPlan};
