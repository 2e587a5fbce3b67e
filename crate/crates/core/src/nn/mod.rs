//! The shared MLP feature extractor: forward/backward passes, spectral
//! normalization, optimizers and the training loop.

mod checkpoint;
mod mlp;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use mlp::{
    apply_spectral_norm, Activation, DenseLayer, ForwardTrace, GradientSet, MlpModel, MlpSpec, Mode, ParamMut,
    SpectralNormOutcome, SpectralState,
};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub(crate) use train::check_labels;
pub use train::{train_epoch, EpochStats, HeadLoss, SoftmaxCrossEntropy, TrainableHead};
