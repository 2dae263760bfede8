//! Executable model of slot-scheduled (TDM) peer data exchange, with an
//! explicit-state checker for deadlock freedom and termination and a seeded
//! random-interleaving simulator.
//!
//! * [`model`]: domain types, initial state, canonical state encoding.
//! * [`topology`]: schedule generators, validation, the schedule file format.
//! * [`protocol`]: enabled actions and the transition function.
//! * [`checker`]: breadth-first exploration and the three property checks.
//! * [`simulator`]: seeded random runs and the delivery oracle.
//! * [`trace`]: the action trace file format.
//! * [`cli`]: the `tdmcheck` command line.

pub mod checker;
pub mod cli;
pub mod model;
pub mod protocol;
pub mod simulator;
pub mod topology;
pub mod trace;

pub use checker::{explore, CheckError, CheckOptions, StateGraph};
pub use model::{initial_state, Action, GlobalState, Message, PeerSchedule, SystemConfig, Verdict};
pub use protocol::{apply_action, enabled_actions, SemanticsMode};
