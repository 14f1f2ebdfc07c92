//! Key-frame guided thyroid-nodule recognition from ultrasound video.
//!
//! The pipeline has two stages. A key-frame localizer (per-detection
//! descriptors fed through an LSTM, trained against similarity-derived score
//! labels) picks the most diagnostic frame; a lightweight 3-D CNN with spatial
//! pyramid pooling and a motion-attention branch then classifies a clip
//! centred on that frame. All layers run on the in-crate [`tensor::Tensor`]
//! with hand-written backward passes.

pub mod classifier;
pub mod data;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod localizer;
pub mod params;
pub mod rng;
pub mod similarity;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
