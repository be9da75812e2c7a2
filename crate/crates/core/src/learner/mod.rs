//! Desk-scale learners: datasets, softmax models, local optimisers and the
//! Dirichlet non-i.i.d. split.

mod data;
mod model;
mod optim;
mod partition;

pub use data::Dataset;
pub use model::{Activation, MiniBatch, ModelSpec};
pub use optim::{run_local_iterations, sample_batch, LocalOptimizerConfig, OptimizerKind};
pub use partition::{dirichlet_partition, sample_dirichlet};
