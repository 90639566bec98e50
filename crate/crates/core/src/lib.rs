//! Verbal-uncertainty toolkit: extract a linear hedging direction from the
//! residual stream of a transformer, steer generation along it so expressed
//! hedging tracks semantic uncertainty, and detect hallucinations from the
//! two uncertainty signals.
//!
//! Everything runs against [`tinylm`], a deterministic toy transformer whose
//! planted constructor records the ground-truth direction.

pub mod error;
pub mod fsutil;
pub mod harness;
pub mod judge;
pub mod metrics;
pub mod probes;
pub mod steering;
pub mod tinylm;
pub mod uncertainty;
pub mod vuf;

pub use error::{Error, Result};
