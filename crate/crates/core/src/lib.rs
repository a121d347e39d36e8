//! Core engine for Bayesian multidimensional computerized adaptive testing.
//!
//! The crate is organised bottom-up:
//!
//! - [`normal`]: standard normal CDF/tail routines accurate far into the tails,
//!   plus a small-dimension multivariate normal CDF used for density checks.
//! - [`mirt`]: item banks under the two-parameter probit MIRT model, response
//!   simulation and synthetic bank generation.
//! - [`tmvn`]: truncated multivariate normal sampling by minimax exponential
//!   tilting, with a Gibbs fallback for hopeless acceptance rates.
//! - [`posterior`]: the exact unified skew-normal (SUN) latent-trait posterior,
//!   its direct sampler and posterior summaries.
//! - [`selection`]: Bayesian item-selection criteria (KL-EAP, Max Pos, mutual
//!   information with importance reweighting, Max Var, random) and their
//!   fully Bayesian ensemble variants.

pub mod error;
pub mod mirt;
pub mod normal;
pub mod posterior;
pub mod selection;
pub mod tmvn;

pub use error::{CatError, Result};
pub use mirt::{BankGenConfig, ExamineeProfile, ItemBank, Response};
pub use posterior::{PosteriorSamples, PredictionQuantiles, SunParams, SunPosterior};
pub use selection::{Criterion, ParamEnsemble, SelectionContext};

/// Seedable RNG used throughout the engine. ChaCha8 keeps streams portable
/// across platforms so that fixed seeds reproduce bit-for-bit.
pub type EngineRng = rand_chacha::ChaCha8Rng;

/// Build an [`EngineRng`] from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> EngineRng {
    use rand::SeedableRng;
    EngineRng::seed_from_u64(seed)
}

/// Derive a child seed from a parent seed and a stream label.
///
/// SplitMix64 finaliser over the combined words; used to give every examinee,
/// session step and ensemble member its own independent stream.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    let mut z = parent
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
