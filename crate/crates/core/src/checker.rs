//! Explicit-state exploration of the interleaving semantics.
//!
//! [`explore`] builds the full reachable graph breadth-first, so the parent
//! pointers give shortest paths. The three properties are then read off the
//! graph:
//!
//! * deadlock freedom: no reachable non-terminated state without successors;
//! * reaches terminated: some reachable state has `terminated = true`;
//! * always eventually terminated: no deadlock and no cycle among the
//!   non-terminated states. `terminated` is absorbing and the graph is finite,
//!   so this is exactly "every maximal run ends in a terminated state".

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::model::{
    encode_state_into, initial_state, initial_state_permissive, Action, Counterexample, GlobalState, ModelError, Phase,
    Property, StateKey, SystemConfig, Verdict,
};
use crate::protocol::{
    apply_action, delivery_violations, enabled_actions, is_terminal_success, pending_send_target, DeliveryViolation,
    ProtocolError, SemanticsMode,
};

pub const DEFAULT_MAX_STATES: usize = 5_000_000;

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("state limit of {limit} exceeded after {explored} states; verdict inconclusive")]
    MaxStatesExceeded { limit: usize, explored: usize, transitions: usize },
    #[error("invariant violated after {trace_len} steps: {message}")]
    Invariant { message: String, trace_len: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{0} nodes exceed the explorer's limit of {max}", max = PackedAction::MAX_NODES)]
    TooManyNodes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOptions {
    pub mode: SemanticsMode,
    pub max_states: usize,
    /// Explore schedules that fail validation (asymmetric links, self-loops).
    pub allow_invalid: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { mode: SemanticsMode::Reduced, max_states: DEFAULT_MAX_STATES, allow_invalid: false }
    }
}

impl CheckOptions {
    pub fn with_mode(mode: SemanticsMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn permissive(mut self) -> Self {
        self.allow_invalid = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateGraphStats {
    pub states: usize,
    pub transitions: usize,
    pub max_frontier: usize,
    pub elapsed: Duration,
}

/// Protocol-level observations collected over every reachable state and
/// transition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProtocolAudit {
    pub max_mailbox_occupancy: usize,
    pub max_stash_len: usize,
    /// States in which some node's next send targets a full mailbox.
    pub blocked_send_states: usize,
    /// States in which a node starts a slot with an older slot's message still stashed.
    pub stale_stash_states: usize,
    pub finish_events_checked: usize,
    /// First few delivery mismatches seen at `FinishSlot` transitions.
    pub delivery_violations: Vec<DeliveryViolation>,
    pub delivery_violation_count: usize,
}

impl ProtocolAudit {
    const KEEP: usize = 16;

    fn observe_state(&mut self, state: &GlobalState, config: &SystemConfig) {
        let cap = config.mailbox_capacity();
        for mb in &state.mailboxes {
            self.max_mailbox_occupancy = self.max_mailbox_occupancy.max(mb.len());
        }
        let mut blocked = false;
        let mut stale = false;
        for (i, node) in state.nodes.iter().enumerate() {
            self.max_stash_len = self.max_stash_len.max(node.stash.len());
            if let Some(target) = pending_send_target(state, config, i) {
                blocked |= state.mailboxes[target].len() >= cap;
            }
            if node.phase == Phase::SlotStart {
                stale |= node.stash.iter().any(|m| m.slot < node.time_slot);
            }
        }
        self.blocked_send_states += blocked as usize;
        self.stale_stash_states += stale as usize;
    }

    fn observe_transition(&mut self, from: &GlobalState, action: Action, config: &SystemConfig) {
        if let Action::FinishSlot { node } = action {
            self.finish_events_checked += 1;
            let v = delivery_violations(from, config, node);
            self.delivery_violation_count += v.len();
            let room = Self::KEEP.saturating_sub(self.delivery_violations.len());
            self.delivery_violations.extend(v.into_iter().take(room));
        }
    }
}

/// An [`Action`] squeezed into 32 bits: kind (3), node (13), peer index (16).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PackedAction(u32);

impl PackedAction {
    const MAX_NODES: usize = 1 << 13;

    fn pack(a: Action) -> Self {
        let (kind, node, pos) = match a {
            Action::Send { node, peer_idx } => (0, node, peer_idx),
            Action::Receive { node } => (1, node, 0),
            Action::LocalScan { node } => (2, node, 0),
            Action::LocalStep { node } => (3, node, 0),
            Action::FinishSlot { node } => (4, node, 0),
            Action::SetTerminated => (5, 0, 0),
        };
        debug_assert!(node < Self::MAX_NODES && pos < 1 << 16);
        PackedAction(kind << 29 | (node as u32) << 16 | pos as u32)
    }

    fn unpack(self) -> Action {
        let node = ((self.0 >> 16) & 0x1fff) as usize;
        let pos = (self.0 & 0xffff) as usize;
        match self.0 >> 29 {
            0 => Action::Send { node, peer_idx: pos },
            1 => Action::Receive { node },
            2 => Action::LocalScan { node },
            3 => Action::LocalStep { node },
            4 => Action::FinishSlot { node },
            _ => Action::SetTerminated,
        }
    }
}

const NO_PARENT: u32 = u32::MAX;

/// Successor lists in compressed sparse row form, indexed by state id.
#[derive(Debug, Clone, Default)]
pub struct ActionGraph {
    start: Vec<usize>,
    to: Vec<u32>,
    label: Vec<PackedAction>,
}

impl ActionGraph {
    /// Builds a graph from per-state successor lists (mainly for tests).
    pub fn from_successors(succ: &[Vec<(u32, Action)>]) -> Self {
        let mut g = ActionGraph::default();
        for list in succ {
            g.start.push(g.to.len());
            for &(t, a) in list {
                g.to.push(t);
                g.label.push(PackedAction::pack(a));
            }
        }
        g.start.push(g.to.len());
        g
    }

    pub fn len(&self) -> usize {
        self.start.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn edge_count(&self) -> usize {
        self.to.len()
    }

    pub fn successors(&self, id: u32) -> impl Iterator<Item = (u32, Action)> + '_ {
        let r = self.start[id as usize]..self.start[id as usize + 1];
        self.to[r.clone()].iter().copied().zip(self.label[r].iter().map(|p| p.unpack()))
    }

    /// Finds a cycle reachable from `root` that never visits an excluded
    /// state. Returns the state the cycle starts and ends at, and the actions
    /// around it.
    pub fn find_cycle(&self, root: u32, excluded: impl Fn(u32) -> bool) -> Option<(u32, Vec<Action>)> {
        const WHITE: u8 = 0;
        const GRAY: u8 = 1;
        const BLACK: u8 = 2;
        if self.is_empty() || excluded(root) {
            return None;
        }
        let mut color = vec![WHITE; self.len()];
        // (state, next edge index, action used to leave this frame)
        let mut stack: Vec<(u32, usize, Option<Action>)> = vec![(root, self.start[root as usize], None)];
        color[root as usize] = GRAY;
        while let Some(top) = stack.last_mut() {
            let (u, ref mut next, ref mut via) = *top;
            let end = self.start[u as usize + 1];
            if *next == end {
                color[u as usize] = BLACK;
                stack.pop();
                continue;
            }
            let e = *next;
            *next += 1;
            let v = self.to[e];
            let a = self.label[e].unpack();
            if excluded(v) {
                continue;
            }
            match color[v as usize] {
                GRAY => {
                    *via = Some(a);
                    let from = stack.iter().position(|f| f.0 == v).expect("gray state is on the stack");
                    let cycle = stack[from..].iter().map(|f| f.2.expect("frame on a cycle has an exit")).collect();
                    return Some((v, cycle));
                }
                WHITE => {
                    *via = Some(a);
                    color[v as usize] = GRAY;
                    stack.push((v, self.start[v as usize], None));
                }
                _ => {}
            }
        }
        None
    }
}

/// The explored reachable state graph of one configuration.
#[derive(Debug, Clone)]
pub struct StateGraph {
    parent: Vec<(u32, PackedAction)>,
    edges: ActionGraph,
    terminated: Vec<bool>,
    deadlocks: Vec<u32>,
    stats: StateGraphStats,
    audit: ProtocolAudit,
}

impl StateGraph {
    pub fn stats(&self) -> StateGraphStats {
        self.stats
    }

    pub fn audit(&self) -> &ProtocolAudit {
        &self.audit
    }

    pub fn edges(&self) -> &ActionGraph {
        &self.edges
    }

    /// Non-terminated states without enabled actions, in BFS order.
    pub fn deadlock_states(&self) -> &[u32] {
        &self.deadlocks
    }

    /// Shortest action sequence from the initial state to `id`.
    pub fn path_to(&self, mut id: u32) -> Vec<Action> {
        let mut out = Vec::new();
        loop {
            let (p, a) = self.parent[id as usize];
            if p == NO_PARENT {
                break;
            }
            out.push(a.unpack());
            id = p;
        }
        out.reverse();
        out
    }

    /// Shortest path to a terminated state, if one is reachable.
    pub fn witness_trace(&self) -> Option<Vec<Action>> {
        let id = self.terminated.iter().position(|&t| t)?;
        Some(self.path_to(id as u32))
    }

    fn deadlock_trace(&self) -> Option<Counterexample> {
        self.deadlocks.first().map(|&d| Counterexample::Deadlock(self.path_to(d)))
    }

    fn lasso(&self) -> Option<Counterexample> {
        let (start, cycle) = self.edges.find_cycle(0, |id| self.terminated[id as usize])?;
        Some(Counterexample::Lasso { stem: self.path_to(start), cycle })
    }

    pub fn verdict(&self, property: Property) -> Verdict {
        let counterexample = match property {
            Property::DeadlockFree => self.deadlock_trace(),
            Property::ReachesTerminated => {
                if self.terminated.iter().any(|&t| t) {
                    None
                } else {
                    // with no terminated state every maximal run deadlocks or loops
                    Some(self.deadlock_trace().or_else(|| self.lasso()).expect("finite graph without exits"))
                }
            }
            Property::AlwaysEventuallyTerminated => self.deadlock_trace().or_else(|| self.lasso()),
        };
        Verdict {
            property,
            counterexample,
            states_explored: self.stats.states,
            transitions_explored: self.stats.transitions,
        }
    }

    pub fn verdicts(&self) -> [Verdict; 3] {
        Property::ALL.map(|p| self.verdict(p))
    }
}

fn start_state(config: &SystemConfig, opts: &CheckOptions) -> Result<GlobalState, ModelError> {
    if opts.allow_invalid {
        initial_state_permissive(config)
    } else {
        initial_state(config)
    }
}

/// Breadth-first exploration of every state reachable from the initial state.
/// Single-threaded and deterministic in `(config, opts)`.
pub fn explore(config: &SystemConfig, opts: &CheckOptions) -> Result<StateGraph, CheckError> {
    let started = Instant::now();
    let init = start_state(config, opts)?;
    if config.no_nodes() >= PackedAction::MAX_NODES {
        return Err(CheckError::TooManyNodes(config.no_nodes()));
    }

    let mut index: FxHashMap<StateKey, u32> = FxHashMap::default();
    let mut buf = Vec::new();
    let mut parent = vec![(NO_PARENT, PackedAction::pack(Action::SetTerminated))];
    let mut terminated = vec![is_terminal_success(&init)];
    let mut edges = ActionGraph::default();
    let mut deadlocks = Vec::new();
    let mut audit = ProtocolAudit::default();
    let mut max_frontier = 1;

    encode_state_into(&init, &mut buf);
    index.insert(StateKey::from(&buf[..]), 0);
    let mut queue: VecDeque<(u32, GlobalState)> = VecDeque::from([(0, init)]);

    while let Some((id, state)) = queue.pop_front() {
        if let Err(message) = state.check_invariants(config) {
            return Err(CheckError::Invariant { message, trace_len: path_len(&parent, id) });
        }
        audit.observe_state(&state, config);
        edges.start.push(edges.to.len());

        let actions = enabled_actions(&state, config, opts.mode);
        if actions.is_empty() && !is_terminal_success(&state) {
            deadlocks.push(id);
        }
        for action in actions {
            audit.observe_transition(&state, action, config);
            let next = apply_action(&state, action, config, opts.mode)?;
            encode_state_into(&next, &mut buf);
            let target = match index.get(&buf[..]) {
                Some(&t) => t,
                None => {
                    if index.len() >= opts.max_states {
                        return Err(CheckError::MaxStatesExceeded {
                            limit: opts.max_states,
                            explored: index.len(),
                            transitions: edges.to.len(),
                        });
                    }
                    let t = index.len() as u32;
                    index.insert(StateKey::from(&buf[..]), t);
                    parent.push((id, PackedAction::pack(action)));
                    terminated.push(is_terminal_success(&next));
                    queue.push_back((t, next));
                    t
                }
            };
            edges.to.push(target);
            edges.label.push(PackedAction::pack(action));
        }
        max_frontier = max_frontier.max(queue.len());
    }
    edges.start.push(edges.to.len());

    let stats =
        StateGraphStats { states: index.len(), transitions: edges.to.len(), max_frontier, elapsed: started.elapsed() };
    Ok(StateGraph { parent, edges, terminated, deadlocks, stats, audit })
}

fn path_len(parent: &[(u32, PackedAction)], mut id: u32) -> usize {
    let mut n = 0;
    while parent[id as usize].0 != NO_PARENT {
        n += 1;
        id = parent[id as usize].0;
    }
    n
}

pub fn check_deadlock_free(config: &SystemConfig, opts: &CheckOptions) -> Result<Verdict, CheckError> {
    Ok(explore(config, opts)?.verdict(Property::DeadlockFree))
}

pub fn check_reaches_terminated(config: &SystemConfig, opts: &CheckOptions) -> Result<Verdict, CheckError> {
    Ok(explore(config, opts)?.verdict(Property::ReachesTerminated))
}

pub fn check_always_eventually_terminated(config: &SystemConfig, opts: &CheckOptions) -> Result<Verdict, CheckError> {
    Ok(explore(config, opts)?.verdict(Property::AlwaysEventuallyTerminated))
}

/// Replays `actions` from the initial state, failing on the first action
/// that is not enabled. Returns the final state.
pub fn replay(config: &SystemConfig, opts: &CheckOptions, actions: &[Action]) -> Result<GlobalState, CheckError> {
    let mut state = start_state(config, opts)?;
    for &a in actions {
        state = apply_action(&state, a, config, opts.mode)?;
    }
    Ok(state)
}
