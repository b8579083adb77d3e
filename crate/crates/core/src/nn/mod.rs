//! From-scratch residual classifier with exact reverse-mode gradients.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod net;
pub mod params;
pub mod tensor;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, SeedLineage};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use layers::BnMode;
pub use loss::{cross_entropy, positive_probability, softmax};
pub use net::{NetCache, NetConfig, NetParams, FINAL_LAYER_PREFIX};
pub use params::{max_abs_diff, ParamSet};
pub use tensor::Tensor;
pub use train::{fit, train_classifier, BatchSource, LabelledBatch, TrainConfig, TrainOutcome, Trained};
