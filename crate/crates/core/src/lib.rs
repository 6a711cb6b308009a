//! Haar shift operators over non-homogeneous measures on finite dyadic trees.
//!
//! The crate builds μ-adapted Haar bases on a complete binary tree of
//! intervals, applies cancellative Haar shifts of arbitrary complexity,
//! evaluates the martingale function-space norms (L^p, weak L¹, BMO, H¹,
//! Lipschitz `Λ_q(α)`, atomic blocks) exactly on step functions, and runs
//! seeded operator-norm experiments on families of balanced and unbalanced
//! measures.

pub mod cli;
pub mod dyadic;
pub mod error;
pub mod experiments;
pub mod io;
pub mod martingale;
pub mod measure;
pub mod norms;
pub mod shift;
pub mod verify;

pub use dyadic::{DyadicTree, NodeId};
pub use error::{Error, Result};
pub use martingale::{HaarSpectrum, StepFunction};
pub use measure::{BalanceReport, Generator, MeasureTree};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`; distinct streams never
/// share output, so per-trial randomness can be derived from a trial index.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
