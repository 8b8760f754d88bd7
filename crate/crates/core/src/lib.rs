#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod error;
pub mod identification;
pub mod lifting;
pub mod numerics;
pub mod par;
pub mod poly;
pub mod spectral;

pub use error::{Error, Result};
pub use num_complex::Complex64;
