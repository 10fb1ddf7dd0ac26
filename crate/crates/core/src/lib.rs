//! Finite-state continuous-time Markov chains and their dissipation calculus.
//!
//! The crate builds, validates and evolves irreducible chains (forward and
//! backward Kolmogorov equations via uniformization), and on top of that the
//! functional-analytic layer used to quantify convergence to equilibrium:
//!
//! * [`chain`] — generators, invariant distributions, detailed balance,
//!   adjoint rates, transition semigroup, marginal and likelihood curves;
//! * [`calculus`] — discrete gradient/divergence, conductances, Dirichlet
//!   forms, the L²/H¹/H⁻¹ norm hierarchy and its Θ-weighted refinements;
//! * [`entropy`] — convex-entropy functionals (variance, KL, Rényi, generic
//!   Φ), Fisher informations, de Bruijn balance reports, Poincaré and
//!   modified log-Sobolev constants;
//! * [`trajectory`] — exact path sampling, time reversal, and Monte Carlo
//!   verification of the reversed-likelihood martingale and Doob–Meyer
//!   compensators;
//! * [`transport`] — the discrete transport geometry: Riemannian metric,
//!   gradient-flow identity, energy-dissipation inequality, Benamou–Brenier
//!   geodesics, Ricci lower-bound estimation and the HWI inequality.
//!
//! All numerics are generic over the scalar type through [`Scalar`]
//! (`f32` or `f64`); the `*64` aliases at the crate root fix the default
//! double-precision instantiation used by the CLI and the test-suite.

pub mod calculus;
pub mod chain;
pub mod entropy;
pub mod error;
pub mod linalg;
pub(crate) mod opt;
pub mod scalar;
pub mod testkit;
pub mod trajectory;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default tolerance constants, in the working precision.
///
/// Structural checks (row sums, probability mass) use `structural`;
/// analytic/ODE residuals use `analytic`; the uniformization series is
/// truncated at cumulative Poisson mass `1 - poisson_truncation`.
pub mod tol {
    use crate::scalar::Scalar;

    /// 1e-12 in f64; widened to a few ulps for narrower scalar types.
    pub fn structural<T: Scalar>() -> T {
        T::of(1e-12).max(T::epsilon() * T::of(8.0))
    }

    /// 1e-9 in f64; widened for narrower scalar types.
    pub fn analytic<T: Scalar>() -> T {
        T::of(1e-9).max(T::epsilon() * T::of(64.0))
    }

    /// 1e-15 in f64.
    pub fn poisson_truncation<T: Scalar>() -> T {
        T::of(1e-15).max(T::epsilon() * T::of(0.25))
    }
}

pub type Generator64 = chain::Generator<f64>;
pub type ProbabilityVector64 = chain::ProbabilityVector<f64>;
pub type LikelihoodVector64 = chain::LikelihoodVector<f64>;
pub type MarginalCurve64 = chain::MarginalCurve<f64>;
pub type EdgeSet64 = calculus::EdgeSet;
pub type EdgeFunction64 = calculus::EdgeFunction<f64>;
pub type EdgeMeasure64 = calculus::EdgeMeasure<f64>;
pub type Path64 = trajectory::Path<f64>;
