//! Dense layers, softmax cross-entropy and SGD.

pub mod checkpoint;
mod layer;
mod loss;
mod mlp;
mod sgd;
mod tensor;

pub use layer::{backward_with, forward_with, Activation, ForwardCache, Layer, LayerGrads, Params};
pub use loss::{argmax, correct, softmax_ce};
pub use mlp::Mlp;
pub use sgd::{apply_update, quantize, quantize_params, sgd_step, LrSchedule, SgdConfig, SgdState, PARAM_LIMIT, PARAM_QUANTUM};
pub use tensor::Tensor;
