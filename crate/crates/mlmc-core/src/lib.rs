//! Multilevel lumping, spectral diagnostics, and walk-based mixing costs for
//! Markov kernels on the box [-1,1]^d.
//!
//! The crate is organized bottom-up:
//!
//! - [`partition`]: dyadic box partitions and index arithmetic;
//! - [`quadrature`]: Gauss-Legendre rules and the high-resolution reference rule;
//! - [`kernels`]: transition kernel families with boundary policies;
//! - [`density`]: discrete and piecewise-constant densities;
//! - [`matrix`]: sparse row-stochastic matrices;
//! - [`ulam`]: lumping of densities and kernels onto a partition;
//! - [`transfer`]: restriction and prolongation between dyadic levels;
//! - [`spectral`]: contraction coefficients, gaps, and stationary densities;
//! - [`szegedy`]: the unitary walk built from a reversible chain;
//! - [`multilevel`]: the coarse-to-fine pipeline and its cost accounting;
//! - [`io`]: on-disk formats for matrices, densities, and traces;
//! - [`checks`]: end-to-end verification suites with pinned tolerances.

pub mod checks;
pub mod density;
pub mod error;
pub mod io;
pub mod kernels;
pub mod matrix;
pub mod multilevel;
pub mod partition;
pub mod quadrature;
pub mod spectral;
pub mod szegedy;
pub mod transfer;
pub mod ulam;

pub use density::{DiscreteDensity, PiecewiseConstantDensity};
pub use error::{Error, Result};
pub use kernels::{BoundaryPolicy, KernelFamily, KernelSpec};
pub use matrix::StochasticMatrix;
pub use partition::Partition;
