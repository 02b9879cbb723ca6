//! Agent-state Markov policy gradient (ASMPG) for non-Markovian decision
//! processes.
//!
//! The crate is organised as:
//!
//! * [`nmdp`]: alphabets, trajectories, returns and the enumerable NMDP contract;
//! * [`envs`]: the benchmark environments and tiny enumerable fixtures;
//! * [`policy`]: ASM policies (tabular softmax, combined-kernel softmax, MLP);
//! * [`grad`]: the episodic and discounted score-function estimators;
//! * [`oracle`]: exact enumeration, finite differences and smoothness constants;
//! * [`trainer`]: optimizers, schedules, rollouts, evaluation and metrics;
//! * [`verify`]: the oracle check suites behind `asmpg verify`.

pub mod error;
pub mod math;
pub mod nmdp;
pub mod envs;
pub mod policy;
pub mod grad;
pub mod oracle;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
