//! Numerical machinery for Matrosov-type stability arguments on
//! time-varying ODEs: simulation, persistency-of-excitation checks,
//! auxiliary-function families, gain certificates and stability verifiers.

pub mod dynamics;
pub mod excitation;
pub mod matrosov;
pub mod plants;
