//! Worst-case downside risk over moment uncertainty sets.
//!
//! The crate computes sharp upper bounds on the expected regret
//! `E[(X - t)_+]` and the target semi-variance `E[(X - t)_+^2]` of a loss
//! `X` when only its mean and standard deviation are known, optionally
//! combined with symmetry, non-negativity, or a cap on the expected excess
//! profit `E[(X - t)_-] <= lambda`. The closed forms are cross-checked by a
//! brute-force search over finite discrete distributions ([`oracle`]) and
//! are then used to solve and backtest robust portfolio-selection models.
//!
//! Module map:
//!
//! - [`worst_case`]: closed-form evaluators and the complement/reflection bounds.
//! - [`oracle`]: discrete distributions, witness constructions, brute-force search.
//! - [`verify`]: grid runner comparing the two, with CSV output.
//! - [`frontier`]: mean-variance frontier algebra and the short-selling solvers.
//! - [`simplex`]: long-only solvers for the excess-profit constrained models.
//! - [`market_data`]: price ingestion, losses, rolling moment estimation.
//! - [`backtest`]: rolling-window daily rebalancing engine and summaries.

pub mod backtest;
pub mod frontier;
pub mod market_data;
pub mod oracle;
pub mod simplex;
pub mod verify;
pub mod worst_case;

pub use frontier::{FrontierParams, MarketModel, Portfolio};
pub use oracle::DiscreteDistribution;
pub use worst_case::{DistributionFamily, MomentProfile, RegretBudget, WorstCaseValue};

/// `max(x, 0)`.
#[inline]
pub fn pos(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `max(-x, 0)`.
#[inline]
pub fn neg(x: f64) -> f64 {
    if x < 0.0 {
        -x
    } else {
        0.0
    }
}

/// Deterministic sub-seed for stream `stream` of a run seeded with `seed`.
///
/// SplitMix64 finalizer over both words, so neighbouring streams get
/// unrelated generators regardless of thread scheduling.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(stream.wrapping_add(1)))
}
