//! IO, harness and CLI on top of `semcom-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle_io;
pub mod checkpoint;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod report;
pub mod scenario;
pub mod table_io;

pub use error::{LabError, Result};
