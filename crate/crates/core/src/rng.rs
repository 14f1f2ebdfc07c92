//! Named, per-purpose random streams derived from a single experiment seed.
//!
//! Every consumer of randomness (data generation, weight init, dropout, fold
//! assignment, ...) draws from its own stream so that toggling one feature
//! never shifts the numbers another feature sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub const DATA: &str = "data";
pub const INIT: &str = "init";
pub const INIT_CLASSIFIER: &str = "init.classifier";
pub const DROPOUT: &str = "dropout";
pub const FOLDS: &str = "folds";
pub const SHUFFLE: &str = "shuffle";
pub const AUGMENT: &str = "augment";
pub const SPLIT: &str = "split";

/// Stream `index` of the generator named `purpose` under `seed`.
pub fn stream(seed: u64, purpose: &str, index: u64) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
