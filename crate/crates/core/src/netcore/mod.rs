//! Tensors, convolution kernels with hand-written backward passes, and the
//! conditional re-enhancement network built from them.

pub mod model;
pub mod ops;
pub mod real;
pub mod tensor;
pub mod weights_io;

pub use model::{
    architecture_audit, Backprop, CreNetGrads, CreNetWeights, ForwardTrace, LayerShapes, LayerSpec, LAYERS,
};
pub use ops::{Conv2d, ConvGrads, Sampling};
pub use real::Real;
pub use tensor::Tensor;
pub use weights_io::{decode_weights, encode_weights, load_weights, save_weights};
