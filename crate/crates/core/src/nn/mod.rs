//! A small reverse-mode autodiff engine with the layers, losses, optimizer
//! and learning-rate schedule the classifiers need. All arithmetic is `f64`.

mod gemm;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod tape;
pub mod tensor;


pub use layers::{BatchNorm1d, Conv1d, LayerNorm, Linear};
pub use loss::{FocalLossParams, LossKind};
pub use optim::{clip_gradients, AdamW, AdamWParams};
pub use params::{BufferId, ParamId, ParamStore};
pub use schedule::CosineRestartSchedule;
pub use tape::{softmax_rows, Grads, Tape, Var};
pub use tensor::NTensor;
