//! Learning linear dynamical systems in controllable canonical form by
//! projected stochastic gradient descent.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod acq;
pub mod error;
pub mod gen;
pub mod learn;
pub mod lds;
pub mod poly;
pub mod risk;

pub use error::{Error, Result};
