//! Exact arithmetic for quantum deformations of dispersive integrable
//! hierarchies: differential polynomials over ℚ(i)[ε, ħ], the normal-ordering
//! commutator, and the recursion that builds commuting Hamiltonian densities.

pub mod bracket;
pub mod error;
pub mod hierarchy;
pub mod jets;
pub mod powersums;
pub mod scalars;
pub mod seeds;
pub mod text;

pub use bracket::Metric;
pub use error::{Error, Result};
pub use jets::{JetMonomial, LocalFunctional, QDiffPoly, TermKey, TruncationSpec, Var};
pub use scalars::{GaussianRational, Param, ParamMono, ParamSet, Rational};
