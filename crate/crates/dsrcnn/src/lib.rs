//! Deeply-supervised recurrent convolutional network for saliency detection.
//!
//! The crate bundles a small double-precision tensor engine with reverse-mode
//! differentiation, the recurrent convolutional layer it exists to train, the
//! five-block deeply-supervised network with weighted fusion, class-balanced
//! cross-entropy training, and the standard saliency evaluation protocol
//! (PR curves, adaptive F-measure via Otsu thresholds, MAE, weighted
//! F-measure). See the `examples/` directory for runnable entry points and
//! the `dsrcnn` binary for the train / infer / eval / selftest pipeline.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod init;
pub mod map;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rcl;
pub mod report;
pub mod selftest;
pub mod synthetic;
pub mod tensor;
pub mod training;
pub mod weights;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use graph::{Graph, TensorId};
pub use map::{GroundTruthMask, SaliencyMap};
pub use model::{build_model, ForwardResult, Model, ModelConfig};
pub use ops::{ConvParams, Mode};
pub use tensor::{Shape, Tensor};

/// The crate's deterministic RNG. A fixed seed reproduces initialization,
/// dropout masks, and shuffling bit-for-bit.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Seed a deterministic RNG stream.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
