//! Numerical toolkit for mixing rates of Z^d-extensions of chaotic maps:
//! exact finite-state spectral oracles, the Z^2-periodic Sinai billiard
//! (finite and infinite horizon), and the tensor calculus that assembles
//! the expansion coefficients of correlation decay in infinite measure.

pub mod config;
pub mod jet;
pub mod tensor;

pub mod billiard;
pub mod coefficients;
pub mod montecarlo;
pub mod observable;
pub mod spectral;

/// Workspace-wide result alias for fallible toolkit operations.
pub type Result<T, E> = std::result::Result<T, E>;
