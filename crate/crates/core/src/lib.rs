// Negated comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod game;
pub mod market;
pub mod numeric;
pub mod preferences;
pub mod regret;
pub mod sharing;

pub use error::{Error, Result};
