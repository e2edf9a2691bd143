//! Keyed random streams.
//!
//! Every random draw in a simulation comes from a stream keyed by
//! `(seed, round, device, step, role)`, so results do not depend on the order
//! in which devices are processed or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for inside one local step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    /// Batch for the inner adaptation gradient.
    Inner = 1,
    /// Batch for the outer gradient at the adapted point.
    Outer = 2,
    /// Batch for the Hessian (or Hessian-free difference quotient).
    Curvature = 3,
    /// Server-side uniform device selection.
    Selection = 4,
    /// Baseline resource decisions (random RBs, random powers and frequencies).
    Baseline = 5,
    /// Environment sampling.
    Environment = 6,
    /// Population generation.
    Population = 7,
    /// Bound-evaluation resampling.
    Resample = 8,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit key.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn keyed_rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Random stream handed to a device's local update for one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub round: u64,
    pub device: u64,
    /// Index of the first local step; lets a run be resumed step by step.
    pub first_step: u64,
}

impl RngStream {
    pub fn new(seed: u64, round: u64, device: u64) -> Self {
        Self {
            seed,
            round,
            device,
            first_step: 0,
        }
    }

    pub fn starting_at(self, first_step: u64) -> Self {
        Self { first_step, ..self }
    }

    /// Generator for local step `step` (relative to `first_step`) and `role`.
    pub fn rng(&self, step: u64, role: Role) -> ChaCha8Rng {
        keyed_rng(&[
            self.seed,
            self.round,
            self.device,
            self.first_step + step,
            role as u64,
        ])
    }
}
