//! Multimodal fusion operators for visual question answering, together with
//! the machinery needed to study their accuracy/complexity trade-off:
//! a small dense tensor engine with FFT, eight interchangeable fusion
//! strategies behind a common [`fusion::Fusion`] trait, a two-stage
//! co-attention module, synthetic feature profiles, parameter and FLOP
//! accounting, and the VQA evaluation metrics.

pub mod assembly;
pub mod attention;
pub mod complexity;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod metrics;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{ComplexTensor, DType, Tensor};
