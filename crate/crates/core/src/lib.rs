//! Fundamental limits of two-layer autoencoders `x -> A sigma(B x)` on
//! Gaussian sources, together with the constructions that attain them and
//! the gradient dynamics that find them.
//!
//! Layering, bottom-up: [`activation`] (Hermite series of the nonlinearity),
//! [`matcore`] (dense linear algebra, Haar sampling, RNG streams), [`risk`],
//! [`bounds`], [`construct`], [`dynamics`], [`trainer`].

pub mod activation;
pub mod bounds;
pub mod construct;
pub mod dynamics;
mod error;
pub mod matcore;
mod quad;
pub mod risk;
pub mod trainer;

pub use error::{Error, Result};
