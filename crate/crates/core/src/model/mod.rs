//! Temporal-attention 3D CNN in double precision with manual backpropagation.

mod checkpoint;
mod layers;
mod net;
mod optim;
mod tam;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use layers::Param;
pub use net::{batch_from_clips, build_model, mse, Model, ModelConfig, ParamCount};
pub use optim::Adam;
pub use tam::{apply_attention, AttentionMap, Tam, TamCache};
pub use tensor::Tensor;
