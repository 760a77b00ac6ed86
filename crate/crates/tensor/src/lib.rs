//! Dense CPU tensors with tape-based reverse-mode differentiation.
//!
//! Everything the super-resolution network needs and nothing more:
//! grouped 2-D convolution, sub-pixel shuffles, channel layer norm,
//! pointwise activations, global pooling and a few reductions. Gradients of
//! every operation are checked against central finite differences in the
//! test suite.

pub mod element;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod serialize;
pub mod tape;
pub mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use gradcheck::{check_gradient, finite_difference_grad, relative_error, GradCheck};
pub use ops::conv::{conv2d_tensor, Conv2dOptions};
pub use ops::shuffle::{pixel_shuffle_tensor, pixel_unshuffle_tensor};
pub use serialize::{parse_tensors, read_tensors, write_tensors, StoredTensor};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
