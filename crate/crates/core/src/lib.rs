//! Positive-P simulation of entanglement and EPR steering in Bose-Hubbard
//! chains, with closed-form linear results and an exact Fock-space oracle.

pub mod analytic;
pub mod cli_io;
pub mod estimators;
pub mod exact_oracle;
pub mod model;
pub mod sampler;
pub mod sde;
