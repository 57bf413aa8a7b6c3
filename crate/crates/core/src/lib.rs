#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::excessive_precision)]

pub mod cases;
pub mod error;
pub mod fem;
pub mod fom;
pub mod mesh;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod pod;
pub mod rom;
pub mod sparse;
pub mod tree;

pub use error::{Error, Result};
