//! Sender-side algorithms for attention-aware generative semantic
//! communication.
//!
//! The crate is `no_std` (with `alloc`) and covers everything that does not
//! touch a filesystem:
//!
//! * [`bundle`]: attention-map types, bicubic aggregation and binarization.
//! * [`prompt`]: part-of-speech filtering, dependency matrices, mIoU and the
//!   per-word semantic importance vector.
//! * [`segmentation`]: DBSCAN over attention pixels and segment cleaning.
//! * [`packing`]: importance-ordered, de-duplicated token streams and budget
//!   truncation.
//! * [`channel`]: OFDMA downlink capacity and per-user token budgets.
//! * [`metrics`]: similarity/quality scoring, JPSQ and per-user utility.
//! * [`add`]: the diffusion-policy bandwidth allocator with twin critics.
//! * [`pipeline`]: the end-to-end extraction pipeline.
//!
//! File formats, scenarios and the command line live in the `semcom-lab`
//! crate.

#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod add;
pub mod bundle;
pub mod channel;
mod error;
pub mod grid;
pub mod metrics;
pub mod packing;
pub mod pipeline;
pub mod prompt;
pub mod rng;
pub mod segmentation;

pub use error::{Error, Result};
