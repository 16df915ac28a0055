#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod domain;
pub mod dynamics;
pub mod error;
pub mod gp;
pub mod inference;
pub mod io;
pub mod simulation;
pub mod smoothing;
pub mod workflow;

pub use error::{Error, Result};
