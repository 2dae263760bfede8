//! Seeded random walks through the interleaving semantics.
//!
//! The scheduler is ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`); at
//! each step it picks uniformly among [`enabled_actions`] with
//! `Rng::gen_range`. Both are fixed by the locked crate versions, so a
//! `(config, mode, seed)` triple always yields the same trace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{initial_state, initial_state_permissive, Action, GlobalState, ModelError, SystemConfig};
use crate::protocol::{
    apply_in_place, delivery_violations, enabled_actions, is_terminal_success, DeliveryViolation, ProtocolError,
    SemanticsMode,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("delivery check needs a terminated run, got {0}")]
    PreconditionViolated(RunOutcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Terminated,
    Deadlocked,
    StepLimit,
}

impl RunOutcome {
    pub fn name(&self) -> &'static str {
        match self {
            RunOutcome::Terminated => "terminated",
            RunOutcome::Deadlocked => "deadlocked",
            RunOutcome::StepLimit => "step_limit",
        }
    }
}

impl std::fmt::Display for RunOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub mode: SemanticsMode,
    pub allow_invalid: bool,
    /// `None` uses [`default_max_steps`].
    pub max_steps: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { mode: SemanticsMode::Reduced, allow_invalid: false, max_steps: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub outcome: RunOutcome,
    pub mode: SemanticsMode,
    pub trace: Vec<Action>,
    pub final_state: GlobalState,
}

/// Ten times an upper bound on the length of any run:
/// `nodes * slots * (2 * nodes + 6)` actions.
pub fn default_max_steps(config: &SystemConfig) -> usize {
    let n = config.no_nodes();
    10 * n * config.no_time_slots() * (2 * n + 6)
}

pub fn start_state(config: &SystemConfig, allow_invalid: bool) -> Result<GlobalState, ModelError> {
    if allow_invalid {
        initial_state_permissive(config)
    } else {
        initial_state(config)
    }
}

pub fn run_random(config: &SystemConfig, opts: &SimOptions, seed: u64) -> Result<RunResult, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = start_state(config, opts.allow_invalid)?;
    let max_steps = opts.max_steps.unwrap_or_else(|| default_max_steps(config));
    let mut trace = Vec::new();
    let outcome = loop {
        let actions = enabled_actions(&state, config, opts.mode);
        if actions.is_empty() {
            break if is_terminal_success(&state) { RunOutcome::Terminated } else { RunOutcome::Deadlocked };
        }
        if trace.len() >= max_steps {
            break RunOutcome::StepLimit;
        }
        let action = actions[rng.gen_range(0..actions.len())];
        apply_in_place(&mut state, action, config, opts.mode)?;
        trace.push(action);
    };
    Ok(RunResult { outcome, mode: opts.mode, trace, final_state: state })
}

/// Replays a terminated run and checks, at every `FinishSlot`, that the
/// finishing node holds each scheduled peer's input in list order.
pub fn check_delivery(result: &RunResult, config: &SystemConfig) -> Result<Vec<DeliveryViolation>, SimError> {
    if result.outcome != RunOutcome::Terminated {
        return Err(SimError::PreconditionViolated(result.outcome));
    }
    let mut state = initial_state_permissive(config)?;
    let mut out = Vec::new();
    for &action in &result.trace {
        if let Action::FinishSlot { node } = action {
            out.extend(delivery_violations(&state, config, node));
        }
        apply_in_place(&mut state, action, config, result.mode)?;
    }
    Ok(out)
}
