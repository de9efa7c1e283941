//! Spectral limit theory, exact moments and event-driven simulation for
//! supercritical branching Markov chains on a finite state space.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] builds models from raw rates or from a declared Jordan form,
//! * [`spectral`] decomposes the mean semigroup into biorthogonal blocks and
//!   [`profile`] classifies test functions against it,
//! * [`moments`] evaluates first and second moments and every limit variance,
//! * [`sim`] simulates the particle system and runs seeded ensembles,
//! * [`harness`] turns ensembles into pass/fail verification reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod catalog;
pub mod error;
pub mod function;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod ode;
pub mod profile;
pub mod provenance;
pub mod quadrature;
pub mod sim;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use function::FunctionOnE;
pub use linalg::C64;
pub use model::{build_model, from_jordan_design, FiniteModel, JordanDesign, ModelConfig};
pub use profile::{classify_function, SpectralProfile};
pub use spectral::{spectral_decompose, Regime, SpectralBlock, SpectralDecomposition};
