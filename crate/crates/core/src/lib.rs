//! Quantum and semiclassical simulation of electron-mediated feedback on a
//! nuclear spin ensemble: Dicke-manifold bookkeeping, gates, Kraus channels,
//! the feedback cycle, and the observables derived from it.

pub mod channels;
pub mod dicke;
pub mod engine;
mod error;
pub mod fit;
pub mod gates;
pub mod probe;
pub mod scenarios;
pub mod selftest;
pub mod semiclassical;

pub use error::{Error, Result};
