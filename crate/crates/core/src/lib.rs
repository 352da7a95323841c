//! Coupled water-concentration and temperature transport for meat roasting,
//! with grid-convergence verification, reduced-order models and PI control.

pub mod constitutive;
pub mod control;
pub mod error;
pub mod fvm;
pub mod gci;
pub mod linear;
pub mod mesh;
pub mod rom;
pub mod shell;
pub mod signals;

pub use error::Error;
