//! Semi-blind mutually referenced equalizers (SB-MRE) for frequency-selective
//! MIMO channels.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: dense and block-tridiagonal Hermitian solvers.
//! * [`model`]: channels, QPSK frames and stacked observation windows.
//! * [`equalizers`]: the MRE quadratic form, blind / semi-blind solvers in
//!   full and reduced mode, and perfect-CSI ZF / MMSE baselines.
//! * [`detection`]: QPSK slicing, blind ambiguity alignment and SER counting.
//! * [`adaptive`]: the pilot-count feedback controller.
//! * [`harness`]: seeded Monte-Carlo experiments and result export.

// `!(x >= 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod detection;
pub mod equalizers;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;

pub use error::{Error, Result};
