//! Co-occurrence knowledge (CooK) and learnable TF-IDF feature reweighting for
//! attention message-passing scene graph models.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation: scene
//! data types, the synthetic long-tail corpus generator, co-occurrence
//! extraction and merging, the TF-l-IDF layer, the message-passing stack with
//! hand-written backward passes, the training loop, and recall metrics. File
//! formats and the command line live in the `cooktf` companion crate.
//!
//! Enable exactly one of the `std` (default) or `libm` features to pick the
//! floating-point math backend.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::needless_range_loop)]

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("cooktf-core needs either the `std` or the `libm` feature for float math");

extern crate alloc;

pub mod cook;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod linalg;
pub mod math;
pub mod model;
pub mod mpnn;
pub mod rng;
pub mod scene;
pub mod synth;
pub mod tfidf;
pub mod train;

pub use error::{Error, Result};

/// Version of this crate, recorded in checkpoints and manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
