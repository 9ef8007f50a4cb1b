#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Semi-supervised image classification with label-semantics-aware
//! pseudo-labeling and co-training of a semantic head and a one-hot head.

pub mod augment;
pub mod cli;
pub mod error;
pub mod grouping;
pub mod labelsem;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
