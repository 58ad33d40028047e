//! Neural scorer: tensors, reverse-mode autodiff, the model, optimizers,
//! checkpoints, external sentence features and gradient checking.

pub mod checkpoint;
pub mod features;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use features::ExternalFeatures;
pub use model::{init_params, DocInput, ModelConfig, Scorer};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{Tape, Var};
pub use tensor::{Gradients, ParameterStore, Real, Tensor};
