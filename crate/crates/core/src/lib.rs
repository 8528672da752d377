//! Gaussian process binary classification with a built-in test-time attack
//! toolkit: evasion, lengthscale extraction, training-data recovery and
//! membership inference, plus the rho-ball secure classifier.
//!
//! Every model is immutable once fitted and every randomized routine takes an
//! explicit seed, so whole experiments are reproducible bit for bit.

pub mod data;
pub mod error;
pub mod evasion;
pub mod extraction;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod membership;
pub mod par;
pub mod secure;

pub use data::{Dataset, NormStats};
pub use error::{Error, Result};
pub use gp::{Decision, FitMode, Prediction, RejectionPolicy, TrainedGP};
pub use kernel::{KernelFamily, KernelSpec, Lengthscale};

/// Seeded RNG used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub(crate) fn rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and a stream index.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
