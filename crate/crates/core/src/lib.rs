//! Execution monitoring for an assistive feeding robot: multimodal signal
//! simulation, HMM progress features, SVM-based anomaly scoring, and the
//! task-executor state machine.

// `!(x >= lo)` style comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod detector;
pub mod error;
pub mod fsm;
pub mod hmm;
pub mod records;
pub mod reference;
pub mod signal;
pub mod svm;

pub use error::{Error, Result};
