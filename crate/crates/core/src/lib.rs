//! Training machinery for human-aligned blind image quality reasoning.
//!
//! The crate is `no_std` (with `alloc`) and contains only pure computation:
//!
//! - [`text`]: unigram normalization, token bags and ROUGE-1 recall.
//! - [`protocol`]: tagged transcript parsing under configurable tag schemas.
//! - [`reward`]: reasoning, prediction, self-consistency and format rewards.
//! - [`policy`]: a linear-softmax autoregressive policy with exact gradients.
//! - [`grpo`]: group-relative advantages and the clipped, KL-regularized surrogate.
//! - [`rollout`]: the two-stage image → caption → blind rating episode.
//! - [`metrics`]: PLCC, SRCC and corpus ROUGE-1.
//! - [`dataset`]: annotation validation, aggregation, statistics and a synthetic corpus.
//!
//! File formats, configuration and the command line live in the `hiqa` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > y)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod grpo;
pub mod metrics;
pub mod policy;
pub mod protocol;
pub mod reward;
pub mod rollout;
pub mod text;

mod math;

pub use error::{Error, Result};
