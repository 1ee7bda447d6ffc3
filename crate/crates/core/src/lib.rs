//! Numerical weighted Bergman kernels on planar domains.
//!
//! Kernels are computed in a truncated monomial basis from Gram matrices
//! assembled on tensor Gauss rules, and checked against closed forms,
//! extremal characterisations and the convergence behaviour of kernels
//! along domain/weight sequences.

pub mod error;
pub mod geometry;
pub mod gram;
pub mod hartogs;
pub mod kernel;
pub mod oracles;
pub mod sequences;
pub mod weights;

pub use error::{Error, Result};
pub use geometry::{build_quadrature, compact_sample_grid, BoundingBox, ComplexPoint, Domain, DomainKind, QuadratureRule};
pub use gram::{FactorizationLog, GramSystem, MonomialBasis};
pub use hartogs::{build_hartogs, hartogs_kernel_at_zero_fiber, HartogsSystem};
pub use kernel::{KernelModel, MinimalElement, PropertyViolations};
pub use oracles::{OracleKernel, ProductKernelModel};
pub use sequences::{
    rate_fit, run_increasing, run_outside, thm15_norm_check, ConvergenceReport, InsetSchedule, InvariantCheck,
    NormReport, RunParams, SequenceMode, SequenceSpec,
};
pub use weights::{admissibility_check, BuiltinExpression, Weight, WeightFamily};
