//! Minimal dense reverse-mode automatic differentiation: matrix primitives
//! recorded on a per-step tape, an LSTM-capable op set, L1 losses, and an
//! adaptive-moment optimizer. All math is in 64-bit floats.

mod adam;
mod check;
mod tape;

pub use adam::AdamState;
pub use check::{max_relative_error, FD_STEP};
pub use tape::{Tape, Var};
