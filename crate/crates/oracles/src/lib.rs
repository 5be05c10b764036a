//! Reference computations for checking `gcnstab-core` in tests.
//!
//! Nothing here shares code with the core crate. Singular values come from a
//! one-sided Jacobi sweep, symmetric spectra from cyclic Jacobi rotations, and
//! the bound formulas are evaluated in exact rational arithmetic.

pub mod eigen;
pub mod exact;
pub mod svd;

pub use eigen::symmetric_eigenvalues;
pub use svd::{largest_singular_value, singular_values};
