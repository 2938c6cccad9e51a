//! Fine-scale statistics of √n mod 1 and the minor-arc machinery behind them.

pub mod arith;
pub mod cli;
pub mod error;
pub mod fixed;
pub mod minorarc;
pub mod moments;
pub mod osc;
pub mod quad;
pub mod seq;
pub mod testfn;

pub use error::{Error, Result};
