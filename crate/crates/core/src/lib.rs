//! Phase retrieval by expectation-consistent approximation in the
//! measurement domain, with pluggable image denoisers as priors.
//!
//! The crate provides the forward operators ([`linops`]), the amplitude
//! likelihood and its Laplace approximation ([`channel`]), denoisers and the
//! remote-denoiser protocol ([`denoisers`]), the EC solver ([`ec`]), the HIO
//! baseline ([`baselines`]), and evaluation helpers ([`metrics`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::len_without_is_empty)]

pub mod baselines;
pub mod channel;
pub mod cli;
pub mod denoisers;
pub mod ec;
pub mod error;
pub mod fft;
pub mod io;
pub mod linops;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod types;

pub use error::{Error, Result};
pub use rng::Rng;
pub use types::{ComplexVector, Image};
