//! Affine diffusion models, their exponential-affine pricing kernels, and
//! the risk-neutral and long-term factorizations of those kernels.
//!
//! The long-term factorization hinges on the limit `v` of the Riccati flow
//! `Psi(t)`. When it exists the kernel splits into a long bond
//! `B_inf_t = exp(lambda t) pi(X_t) / pi(X_0)` with `pi(x) = exp((u - v)^T x)`
//! and a martingale that defines the long forward measure.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod factorization;
pub mod model;
pub mod ode;
pub mod oracles;
pub mod riccati;
pub mod simulate;

pub use factorization::{
    eigen_check, find_fixed_point, long_term_factorize, risk_neutral_factorize, state_volatilities,
    FactorError, FixedPointOptions, FixedPointOutcome, LongTermFactorization,
    RiskNeutralFactorization,
};
pub use model::{AffineModel, ModelError, PricingKernel, TimeUnit, VolStructure};
pub use riccati::{bond_price, integrate, RiccatiError, RiccatiSolution, Tolerances};
