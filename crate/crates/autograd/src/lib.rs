//! Minimal reverse-mode automatic differentiation for small convolutional
//! networks.
//!
//! Everything runs single-threaded in a fixed order, so repeated runs are
//! bit-for-bit reproducible. Ops are generic over [`Scalar`]; instantiating
//! the tape with [`Dual`] numbers propagates a tangent through a full
//! backward pass, which gives exact mixed second derivatives without a
//! second-order tape.

pub mod conv;
mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use optim::{Adam, AdamConfig};
pub use params::{Bound, ParamStore};
pub use scalar::{Dual, Scalar};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
