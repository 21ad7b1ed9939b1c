//! Double-indexed permutation statistics (DIPS).
//!
//! A DIPS is a random variable of the form `sum_{i,j} xi(i,j,pi(i),pi(j))`
//! for a 4-index kernel `xi` and a uniform random permutation `pi`. This
//! crate provides:
//!
//! * [`kernel`] — conversion of an arbitrary kernel into the normalized
//!   `W = sum_i a(i,pi(i)) + sum_{i!=j} b(i,j,pi(i),pi(j))` form with
//!   vanishing marginals, plus boundedness audits;
//! * [`stats`] — O(n)/O(n log n) closed-form evaluators and kernel builders
//!   for descents, inversions, the Mann-Whitney-Wilcoxon statistic and the
//!   Chatterjee rank correlation (oscillation) statistic;
//! * [`pair`] — the exchangeable pair `(pi, pi')` obtained by transposing
//!   two uniformly chosen positions, with exact conditional-mean identities;
//! * [`transform`] — permutation transformations that realize conditional
//!   permutation laws, verifiable by exact enumeration;
//! * [`stein`] — standard-normal primitives, the Stein equation solution and
//!   the computable moderate-deviation / MGF bound envelopes;
//! * [`sim`] — deterministic parallel Monte Carlo estimation of tail ratios
//!   `P(W > z) / (1 - Phi(z))` together with exact small-n oracles.
//!
//! Kernel algebra is generic over the scalar type through the [`Real`]
//! trait; `f64` aliases for the main types live at the crate root.

pub mod bounds;
pub mod error;
pub mod io;
pub mod kernel;
pub mod pair;
pub mod perm;
pub mod sim;
pub mod stats;
pub mod stein;
pub mod transform;

use std::fmt;

use num_traits::{Float, FromPrimitive};

/// Scalar type for kernel algebra: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + std::ops::AddAssign + std::iter::Sum + fmt::Debug + fmt::Display + 'static
{
    /// Lossless-enough conversion from a usize index count.
    fn from_count(c: usize) -> Self {
        Self::from_usize(c).expect("count representable")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + std::ops::AddAssign
        + std::iter::Sum
        + fmt::Debug
        + fmt::Display
        + 'static
{
}

pub use error::Error;
pub use perm::Permutation;

/// `f64` aliases for the generic core types.
pub type Kernel4 = kernel::Kernel4<f64>;
pub type CenteredKernel = kernel::CenteredKernel<f64>;
pub type EtaPair = kernel::EtaPair<f64>;
pub type NormalizedDips = kernel::NormalizedDips<f64>;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
