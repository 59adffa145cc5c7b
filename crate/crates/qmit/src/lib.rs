//! Simulation and estimation toolkit for entanglement-enhanced RF atomic
//! magnetometry and magnetic induction tomography.

pub mod archive;
pub mod coefficients;
pub mod commands;
pub mod config;
pub mod constants;
pub mod error;
pub mod estimation;
pub mod presets;
pub mod rng;
pub mod simulator;
pub mod spin;
pub mod tomography;

pub use error::{Error, ErrorKind, Result};

// The guide under book/ is compiled and run as doctests, one module per
// chapter so a failure points at its chapter.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/coefficients.md")]
    pub mod coefficients {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    pub mod estimation {}
    #[doc = include_str!("../../../book/src/tomography.md")]
    pub mod tomography {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
