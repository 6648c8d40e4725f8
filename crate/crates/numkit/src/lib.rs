//! Minimal dense-tensor engine used by the MVGT stack.
//!
//! Everything is 64-bit, row-major and single-threaded per [`Tape`]. A tape
//! records operations as they are evaluated and replays their adjoints in
//! reverse order on [`Tape::backward`]. Learnable tensors live in a
//! [`ParamStore`]; the tape copies them in as leaves and hands gradients back
//! as [`Gradients`], which the store accumulates with `+=` so a parameter used
//! several times in one graph (or across several graphs) receives the sum of
//! its adjoints.

mod error;
pub mod gradcheck;
pub mod init;
mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{NumError, Result};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
