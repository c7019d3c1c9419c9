#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod channel;
pub mod error;
pub mod hymba;
pub mod mae;
pub mod masking;
pub mod params;
pub mod patch;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DenseTensor, Var};
