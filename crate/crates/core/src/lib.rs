//! Building blocks for few-shot class-incremental audio classification.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`tensor`] — a dense-tensor tape with reverse-mode differentiation,
//!   covering exactly the op set the networks below need.
//! * [`optim`] — SGD and Adam over flat parameter buffers.
//! * [`dsp`] — log mel-spectrogram extraction (framing, Hamming window,
//!   radix-2 FFT, mel filterbank).
//! * [`extractor`] — a ResNet-style embedding extractor trained with
//!   cross-entropy and frozen afterwards.
//! * [`adapter`] — self-attention prototype generation and query-guided
//!   prototype adaptation, trained episodically on a pseudo-incremental
//!   split of the base classes.
//! * [`classifier`] — the dynamically expanded prototype store and
//!   cosine-similarity prediction.
//! * [`metrics`] — per-session accuracy partitions, average accuracy,
//!   performance dropping rate, and confusion matrices.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature
//! (default) only toggles `std`-backed conveniences in dependencies. All
//! transcendental math goes through `libm` so results are identical with
//! and without `std`. The `f32` feature switches [`Real`] to single
//! precision for speed at the cost of looser tolerances.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adapter;
pub mod checkpoint;
pub mod classifier;
pub mod dsp;
pub mod error;
pub mod extractor;
pub mod gradcheck;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{CoreError, Result};

/// Scalar type used throughout. `f64` by default; `f32` with the `f32`
/// feature (looser test tolerances apply).
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;
