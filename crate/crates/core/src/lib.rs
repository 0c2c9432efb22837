//! Online robust principal component pursuit.
//!
//! A stream of vectors `M_t = L_t + S_t` is split causally, one frame at a time,
//! into a background `L_t` that lives in a slowly changing low-dimensional
//! subspace and a sparse foreground `S_t`. Each frame the foreground is
//! recovered by an l1 program posed in the orthogonal complement of the current
//! subspace estimate; the subspace itself is tracked by detecting, rotating and
//! pruning new directions and by removing directions whose energy has decayed.
//!
//! Module map:
//!
//! * [`model`] - synthetic piecewise-stationary AR-1 backgrounds and moving
//!   3x3 foreground blocks, with full ground truth.
//! * [`l1solver`] - basis pursuit (equality and quadratically constrained,
//!   with optional penalty-free indices) and restricted least squares.
//! * [`subspace`] - training, orthogonal complements and the
//!   detect / rotate / merge / delete state machine.
//! * [`tracker`] - per-frame recovery engines (noise-canceled, basic,
//!   modified-CS and the stacked-dictionary baseline).
//! * [`harness`] - end-to-end runs, Monte Carlo averaging, CSV output and the
//!   command line front end.
//! * [`oracle`] - an independent simplex-based reference for the l1 programs.

pub mod error;
pub mod harness;
pub mod l1solver;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod subspace;
pub mod tracker;

pub use error::{Error, Result};
