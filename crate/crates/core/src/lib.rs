#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod fft;
pub mod grid;
pub mod harness;
pub mod io;
pub mod nonlinear;
pub mod propagator;
pub mod randomization;
pub mod solver;
pub mod stats;

pub use error::{NlwError, Result};
