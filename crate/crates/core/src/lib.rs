//! Complete perceptron layers: an all-to-all neuron layer evolved for a fixed
//! number of iterations with clamped inputs, trained with pruning, and scored
//! by how close its weights come to a feed-forward (triangular) ordering.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod layer;
pub mod numerics;
pub mod orderedness;
pub mod pruning;
pub mod render;
pub mod svg;
pub mod training;

pub use error::{Error, Result};
pub use experiments::{AggregateRow, SweepKind, SweepOutput, SweepSpec};
pub use layer::{Init, LayerParams, LayerShape};
pub use numerics::{Matrix, SeededRng};
pub use orderedness::{MassScope, OrderednessResult, Solver};
pub use pruning::{Progress, PruneSpec};
pub use training::{RunRecord, Task, TrainConfig};
