//! `ftnn` — a deliberately small feed-forward network engine.
//!
//! The engine exists to serve perception models that need more than training:
//! exact forward/backward passes, *and* cheap full Jacobians of the network
//! output with respect to its input, so a tracker can linearize a learned
//! observation function. Scope is correspondingly narrow:
//!
//! - [`Tensor`]: shape + flat row-major `f32` buffer; reductions accumulate
//!   in `f64` before rounding back, which keeps finite-difference checks
//!   meaningful at `f32` storage precision.
//! - [`Layer`]: fully-connected, conv2d, transpose-conv2d, relu, reshape,
//!   dropout. That's the whole zoo.
//! - [`Network`]: forward in train/eval mode, backward over the cached
//!   forward, and [`Network::jacobian`] via forward-mode tangents (the
//!   per-layer Jacobian product taken right to left, so an m-output
//!   n-input net costs n forward-sized sweeps instead of m backward ones).
//! - [`AdamState`]: bias-corrected ADAM with `f64` moments.
//! - [`checkpoint`]: a flat named-parameter file format (`FTNN1`).
//!
//! The [`oracle`] module carries slow `f64` reference implementations and
//! finite-difference helpers used by the validation suite; production code
//! does not call it.

mod adam;
mod checkpoint;
mod error;
mod layer;
mod network;
mod tensor;

pub mod oracle;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, MAGIC};
pub use error::{Error, Result};
pub use layer::{dropout_keep_scale, Layer};
pub use network::{Mode, Network};
pub use tensor::Tensor;
