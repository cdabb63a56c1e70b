//! Simulation and homogenization of generalized Langevin equations (GLEs)
//! with state-dependent coefficients.
//!
//! The library covers the full pipeline:
//!
//! * [`matrixlab`] — dense small-matrix numerics: Lyapunov solves, spectral
//!   checks, matrix exponentials.
//! * [`model`] — the GLE data model: realization triples for memory kernels
//!   and colored noises, state-dependent coefficient fields, effective
//!   damping/diffusion constants, Ornstein-Uhlenbeck and harmonic-noise
//!   constructions.
//! * [`markov`] — the extended Markovian system obtained by adjoining
//!   auxiliary variables, and the hypotheses checks for homogenization.
//! * [`homogenize`] — the limiting SDE: noise-induced drift terms, diffusion
//!   field, and closed-form one-dimensional specializations.
//! * [`simulate`] — SDE integration (pre-limit and limit), coupled-path
//!   convergence experiments, reflecting boundaries, noise statistics.
//! * [`thermo`] — the thermophoresis application layer.
//! * [`bath`] — a finite Kac-Zwanzig oscillator bath as a statistical
//!   validation target.
//!
//! Core numerics are generic over the scalar type through the [`Real`]
//! trait; concrete `f64` aliases ([`Matrix`], [`Vector`]) are provided at
//! the crate root and are what the CLI and most applications use.

pub mod bath;
pub mod error;
pub mod expr;
pub mod homogenize;
pub mod markov;
pub mod matrixlab;
pub mod model;
pub mod modelfile;
pub mod output;
pub mod quad;
pub mod real;
pub mod simulate;
pub mod sobol;
pub mod thermo;

pub use error::{Error, Result};
pub use real::{convert, Real};

/// Dense dynamically-sized matrix over the default `f64` scalar.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense dynamically-sized column vector over the default `f64` scalar.
pub type Vector = nalgebra::DVector<f64>;
/// Single-precision matrix alias for callers trading accuracy for footprint.
pub type Matrix32 = nalgebra::DMatrix<f32>;
/// Single-precision vector alias.
pub type Vector32 = nalgebra::DVector<f32>;

/// Library version string recorded in CLI manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
