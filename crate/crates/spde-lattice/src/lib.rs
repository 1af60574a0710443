//! Lattice scheme for elliptic boundary-value problems on the unit cube
//! `(0,1)^d` driven by coloured Gaussian noise.
//!
//! The crate solves `Δu − f(u) = g + Ḟ` with zero Dirichlet data by a
//! weighted finite-difference scheme that is diagonal in the discrete sine
//! basis, combined with a mollified Green kernel that keeps the scheme
//! square-integrable in dimension `d ≥ 4`. The pieces are:
//!
//! * [`grid`] — grids, multi-indices, the cell map `κ_n`, the sine
//!   eigenbasis and fast transforms, and the difference operator `A`;
//! * [`mollifier`] — the compactly supported bump `ψ`, its Fourier
//!   transform, and the smoothing-parameter rule `ε(n)`;
//! * [`green`] — smoothed and discrete Green kernels, their norms, and
//!   empirical smoothing/truncation error rates;
//! * [`noise`] — coloured-noise covariances, exact Gaussian samplers
//!   (Cholesky and circulant embedding), aggregation, and stochastic
//!   integrals against kernels;
//! * [`solver`] — the nonlinear lattice system, solved by fixed-point
//!   iteration on the mild form, with a dense oracle for testing;
//! * [`lab`] — coupled multi-resolution Monte Carlo experiments, error
//!   moments, rate fits, and structure functions;
//! * [`io`] — flat binary and CSV export of fields and reports.

pub mod error;
pub mod green;
pub mod grid;
pub mod io;
pub mod lab;
pub mod mollifier;
pub mod noise;
pub mod solver;

pub use error::{Error, Result};
