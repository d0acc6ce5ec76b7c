//! Workbench for distillation-based membership privacy: a small MLP engine,
//! a synthetic Purchase-style task, the three-phase distillation defense, a
//! suite of membership-inference attacks and numerical checks of the
//! entropy-based reference-selection theory.

pub mod data;
pub mod error;
pub mod nncore;
pub(crate) mod textfmt;

pub use error::{Error, ErrorClass, Result};
pub mod analysis;
pub mod attacks;
pub mod cli;
pub mod dmp;
pub mod experiment;
pub mod report;
