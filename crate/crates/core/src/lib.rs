// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dfm;
pub mod dmd;
pub mod error;
pub mod estimation;
pub mod io;
pub mod linalg;
pub mod ma;
pub mod rank;
pub mod rng;

pub use error::{Error, ErrorKind, Result};
