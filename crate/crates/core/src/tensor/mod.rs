//! Dense tensors and reverse-mode differentiation.

mod dense;
pub mod gradcheck;
pub mod io;
mod ops;
mod scan;
mod var;

pub use dense::DenseTensor;
pub use ops::{sigmoid, softplus};
pub(crate) use ops::dot;
pub use scan::{associative_scan, linear_recurrence_combine};
pub use var::{grad_enabled, no_grad, BackwardFn, Var};

#[cfg(test)]
mod tests;
