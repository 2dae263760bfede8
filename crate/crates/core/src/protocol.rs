//! Small-step semantics of the slot exchange.
//!
//! Every node runs the same loop: for each slot it sends its input value to
//! each scheduled peer, then collects one message per peer in list order.
//! A message that arrives before it is wanted (wrong slot, or a peer further
//! down the list) is parked in the node's stash; before blocking on the
//! mailbox the node scans the stash by rotation.
//!
//! Two granularities are offered. [`SemanticsMode::Faithful`] exposes each
//! node-local event (the stash scan, each rotation, classifying a received
//! message, storing the result) as its own action. [`SemanticsMode::Reduced`]
//! runs those local events eagerly right after the mailbox operation that
//! enables them. The stash, return slot and flag are touched only by their
//! owner, so the fused steps commute with every other node's actions.

use std::collections::VecDeque;

use thiserror::Error;

use crate::model::{Action, GlobalState, Message, NodeId, Payload, Phase, SystemConfig, NO_DATA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum SemanticsMode {
    Faithful,
    #[default]
    Reduced,
}

impl SemanticsMode {
    pub fn name(&self) -> &'static str {
        match self {
            SemanticsMode::Faithful => "faithful",
            SemanticsMode::Reduced => "reduced",
        }
    }
}

impl std::str::FromStr for SemanticsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "faithful" => Ok(SemanticsMode::Faithful),
            "reduced" => Ok(SemanticsMode::Reduced),
            other => Err(format!("unknown mode `{other}` (expected faithful or reduced)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("action {action} is not enabled")]
    IllegalAction { action: Action },
}

/// Scans `stash` for the message keyed `(key_slot, key_node)` by rotating it
/// exactly `stash.len()` times.
///
/// The first match is withheld and returned; every other message is put back,
/// so survivors keep their relative order and a miss leaves the stash unchanged.
pub fn is_key_in_map(
    stash: &VecDeque<Message>,
    key_slot: usize,
    key_node: NodeId,
) -> (Option<Message>, VecDeque<Message>) {
    let mut rest = stash.clone();
    let mut found = None;
    for _ in 0..stash.len() {
        let m = rest.pop_front().expect("rotation stays within the snapshot count");
        if found.is_none() && m.matches(key_slot, key_node) {
            found = Some(m);
        } else {
            rest.push_back(m);
        }
    }
    (found, rest)
}

pub fn is_terminal_success(state: &GlobalState) -> bool {
    state.terminated
}

fn expected_peer(config: &SystemConfig, state: &GlobalState, i: NodeId) -> Option<NodeId> {
    let n = &state.nodes[i];
    config.schedule().peer(i, n.peer_idx, n.time_slot)
}

fn skips_slot(config: &SystemConfig, state: &GlobalState, i: NodeId) -> bool {
    let n = &state.nodes[i];
    config.idata()[i] == NO_DATA || config.schedule().peer(i, 0, n.time_slot).is_none()
}

/// The mailbox node `i` will write to next, if its next step is a send.
pub fn pending_send_target(state: &GlobalState, config: &SystemConfig, i: NodeId) -> Option<NodeId> {
    match state.nodes[i].phase {
        Phase::SlotStart if !skips_slot(config, state, i) => config.schedule().peer(i, 0, state.nodes[i].time_slot),
        Phase::Sending => expected_peer(config, state, i),
        _ => None,
    }
}

/// The single action node `i` can take now, if any. Each node is sequential,
/// so at most one of its actions is enabled at a time.
fn node_action(state: &GlobalState, config: &SystemConfig, mode: SemanticsMode, i: NodeId) -> Option<Action> {
    let node = &state.nodes[i];
    let cap = config.mailbox_capacity();
    let has_room = |target: NodeId| state.mailboxes[target].len() < cap;
    match node.phase {
        Phase::SlotStart if skips_slot(config, state, i) => Some(Action::FinishSlot { node: i }),
        Phase::SlotStart | Phase::Sending => {
            let target = pending_send_target(state, config, i)?;
            has_room(target).then_some(Action::Send { node: i, peer_idx: node.peer_idx })
        }
        Phase::ScanBuffer => match node.scan_left {
            None => Some(Action::LocalStep { node: i }),
            Some(_) => Some(Action::LocalScan { node: i }),
        },
        Phase::AwaitMailbox => {
            let expected = expected_peer(config, state, i)?;
            let stash_room = node.stash.len() < cap;
            match (mode, node.inbox) {
                (SemanticsMode::Faithful, Some(m)) => {
                    (m.matches(node.time_slot, expected) || stash_room).then_some(Action::LocalStep { node: i })
                }
                (SemanticsMode::Faithful, None) => {
                    (!state.mailboxes[i].is_empty()).then_some(Action::Receive { node: i })
                }
                (SemanticsMode::Reduced, _) => {
                    let head = state.mailboxes[i].front()?;
                    (head.matches(node.time_slot, expected) || stash_room).then_some(Action::Receive { node: i })
                }
            }
        }
        Phase::StoreData => Some(Action::LocalStep { node: i }),
        Phase::SlotFinish => Some(Action::FinishSlot { node: i }),
        Phase::Done => None,
    }
}

/// All actions executable in `state`, ordered by kind, node and position.
pub fn enabled_actions(state: &GlobalState, config: &SystemConfig, mode: SemanticsMode) -> Vec<Action> {
    let mut out: Vec<Action> = (0..state.nodes.len()).filter_map(|i| node_action(state, config, mode, i)).collect();
    if !state.terminated && state.all_done() {
        out.push(Action::SetTerminated);
    }
    out.sort_unstable();
    out
}

/// The successor of `state` under `action`.
pub fn apply_action(
    state: &GlobalState,
    action: Action,
    config: &SystemConfig,
    mode: SemanticsMode,
) -> Result<GlobalState, ProtocolError> {
    let mut next = state.clone();
    apply_in_place(&mut next, action, config, mode)?;
    Ok(next)
}

/// In-place variant of [`apply_action`]; `state` is untouched on error.
pub fn apply_in_place(
    state: &mut GlobalState,
    action: Action,
    config: &SystemConfig,
    mode: SemanticsMode,
) -> Result<(), ProtocolError> {
    let legal = match action {
        Action::SetTerminated => !state.terminated && state.all_done(),
        _ => {
            let i = action.node().expect("non-global action has a node");
            i < state.nodes.len() && node_action(state, config, mode, i) == Some(action)
        }
    };
    if !legal {
        return Err(ProtocolError::IllegalAction { action });
    }
    match action {
        Action::Send { node, .. } => send(state, config, mode, node),
        Action::Receive { node } => receive(state, config, mode, node),
        Action::LocalScan { node } => scan_one(state, config, node),
        Action::LocalStep { node } => local_step(state, config, node),
        Action::FinishSlot { node } => finish_slot(state, config, node),
        Action::SetTerminated => state.terminated = true,
    }
    Ok(())
}

fn send(state: &mut GlobalState, config: &SystemConfig, mode: SemanticsMode, i: NodeId) {
    let sched = config.schedule();
    let payload = config.idata()[i];
    let node = &mut state.nodes[i];
    if node.phase == Phase::SlotStart {
        node.phase = Phase::Sending;
        node.peer_idx = 0;
    }
    let t = node.time_slot;
    let target = sched.peer(i, node.peer_idx, t).expect("send is enabled only before the end marker");
    node.peer_idx += 1;
    if sched.peer(i, node.peer_idx, t).is_none() {
        node.peer_idx = 0;
        node.phase = Phase::ScanBuffer;
        node.scan_left = None;
    }
    state.mailboxes[target].push_back(Message::new(t, i, payload));
    if mode == SemanticsMode::Reduced {
        settle(state, config, i);
    }
}

fn receive(state: &mut GlobalState, config: &SystemConfig, mode: SemanticsMode, i: NodeId) {
    let m = state.mailboxes[i].pop_front().expect("receive is enabled only on a non-empty mailbox");
    match mode {
        SemanticsMode::Faithful => state.nodes[i].inbox = Some(m),
        SemanticsMode::Reduced => {
            classify(state, config, i, m);
            settle(state, config, i);
        }
    }
}

/// Routes a freshly received message: the expected one goes to the return
/// slot, anything else to the stash.
fn classify(state: &mut GlobalState, config: &SystemConfig, i: NodeId, m: Message) {
    let expected = expected_peer(config, state, i).expect("awaiting node has an expected peer");
    let node = &mut state.nodes[i];
    if m.matches(node.time_slot, expected) {
        node.ret_slot = Some(m);
        node.phase = Phase::StoreData;
    } else {
        node.stash.push_back(m);
    }
}

/// Runs node `i`'s local steps until it must touch a mailbox or finish the slot.
fn settle(state: &mut GlobalState, config: &SystemConfig, i: NodeId) {
    loop {
        match state.nodes[i].phase {
            Phase::ScanBuffer => {
                let expected = expected_peer(config, state, i).expect("scan has an expected peer");
                let node = &mut state.nodes[i];
                let (found, rest) = is_key_in_map(&node.stash, node.time_slot, expected);
                node.stash = rest;
                node.scan_left = None;
                node.ret_val = found.is_some();
                match found {
                    Some(m) => {
                        node.ret_slot = Some(m);
                        node.phase = Phase::StoreData;
                    }
                    None => {
                        node.phase = Phase::AwaitMailbox;
                        return;
                    }
                }
            }
            Phase::StoreData => store(state, config, i),
            _ => return,
        }
    }
}

fn local_step(state: &mut GlobalState, config: &SystemConfig, i: NodeId) {
    match state.nodes[i].phase {
        Phase::ScanBuffer => {
            let node = &mut state.nodes[i];
            node.ret_val = false;
            node.scan_left = Some(node.stash.len());
            if node.stash.is_empty() {
                end_scan(state, i);
            }
        }
        Phase::AwaitMailbox => {
            let m = state.nodes[i].inbox.take().expect("classify step needs an inbox message");
            classify(state, config, i, m);
        }
        Phase::StoreData => store(state, config, i),
        p => unreachable!("no local step in phase {p:?}"),
    }
}

fn scan_one(state: &mut GlobalState, config: &SystemConfig, i: NodeId) {
    let wanted = expected_peer(config, state, i).expect("scan has an expected peer");
    let node = &mut state.nodes[i];
    let key = node.time_slot;
    let m = node.stash.pop_front().expect("scan count never exceeds the stash");
    if !node.ret_val && m.matches(key, wanted) {
        node.ret_slot = Some(m);
        node.ret_val = true;
    } else {
        node.stash.push_back(m);
    }
    let left = node.scan_left.map(|k| k - 1).expect("scan in progress");
    node.scan_left = Some(left);
    if left == 0 {
        end_scan(state, i);
    }
}

fn end_scan(state: &mut GlobalState, i: NodeId) {
    let node = &mut state.nodes[i];
    node.scan_left = None;
    node.phase = if node.ret_val { Phase::StoreData } else { Phase::AwaitMailbox };
}

fn store(state: &mut GlobalState, config: &SystemConfig, i: NodeId) {
    let sched = config.schedule();
    let node = &mut state.nodes[i];
    let m = node.ret_slot.take().expect("store needs a message in the return slot");
    node.odata_row[node.peer_idx] = m.payload;
    node.peer_idx += 1;
    if sched.peer(i, node.peer_idx, node.time_slot).is_some() {
        node.phase = Phase::ScanBuffer;
        node.scan_left = None;
    } else {
        node.peer_idx = 0;
        node.phase = Phase::SlotFinish;
    }
}

fn finish_slot(state: &mut GlobalState, config: &SystemConfig, i: NodeId) {
    let node = &mut state.nodes[i];
    node.time_slot += 1;
    node.appts += 1;
    node.peer_idx = 0;
    node.phase = if node.appts == config.no_time_slots() { Phase::Done } else { Phase::SlotStart };
}

/// A received-data cell that does not hold the expected peer's input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryViolation {
    pub node: NodeId,
    pub slot: usize,
    pub position: usize,
    pub expected: Payload,
    pub found: Payload,
}

impl std::fmt::Display for DeliveryViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "node {} slot {} position {}: expected {}, found {}",
            self.node, self.slot, self.position, self.expected, self.found
        )
    }
}

/// Compares node `i`'s received row against its peers' inputs. Meant to be
/// called on the state in which `FinishSlot(i)` is about to fire. Nodes
/// without data skip the exchange, so nothing is checked for them.
pub fn delivery_violations(state: &GlobalState, config: &SystemConfig, i: NodeId) -> Vec<DeliveryViolation> {
    let node = &state.nodes[i];
    if config.idata()[i] == NO_DATA {
        return Vec::new();
    }
    let slot = node.time_slot;
    config
        .schedule()
        .peers(i, slot)
        .into_iter()
        .enumerate()
        .filter_map(|(position, peer)| {
            let expected = config.idata()[peer];
            let found = node.odata_row[position];
            (found != expected).then_some(DeliveryViolation { node: i, slot, position, expected, found })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{initial_state, UNSET};
    use crate::topology::gen_clique;

    const MODES: [SemanticsMode; 2] = [SemanticsMode::Faithful, SemanticsMode::Reduced];

    fn clique(n: usize, k: usize, idata: Vec<Payload>) -> SystemConfig {
        SystemConfig::new(gen_clique(n, k).unwrap(), idata).unwrap()
    }

    fn run(cfg: &SystemConfig, mode: SemanticsMode, actions: &[Action]) -> GlobalState {
        let mut s = initial_state(cfg).unwrap();
        for &a in actions {
            s = apply_action(&s, a, cfg, mode).unwrap_or_else(|e| panic!("{e} in {s:?}"));
        }
        s
    }

    fn msgs(v: &[(usize, NodeId, Payload)]) -> VecDeque<Message> {
        v.iter().map(|&(s, n, p)| Message::new(s, n, p)).collect()
    }

    #[test]
    fn initially_both_nodes_may_send() {
        let cfg = clique(2, 1, vec![5, 7]);
        let s = initial_state(&cfg).unwrap();
        for mode in MODES {
            assert_eq!(
                enabled_actions(&s, &cfg, mode),
                vec![Action::Send { node: 0, peer_idx: 0 }, Action::Send { node: 1, peer_idx: 0 }]
            );
        }
    }

    #[test]
    fn smoke_trace_exchanges_values() {
        let cfg = clique(2, 1, vec![5, 7]);
        let trace = [
            Action::Send { node: 0, peer_idx: 0 },
            Action::Send { node: 1, peer_idx: 0 },
            Action::Receive { node: 0 },
            Action::Receive { node: 1 },
            Action::FinishSlot { node: 0 },
            Action::FinishSlot { node: 1 },
            Action::SetTerminated,
        ];
        let mut s = initial_state(&cfg).unwrap();
        for (step, &a) in trace.iter().enumerate() {
            s = apply_action(&s, a, &cfg, SemanticsMode::Reduced).unwrap();
            match step {
                // node 0 sent (0,0,5) to node 1 and now waits on its mailbox
                0 => {
                    assert_eq!(s.mailboxes[1], msgs(&[(0, 0, 5)]));
                    assert_eq!(s.nodes[0].phase, Phase::AwaitMailbox);
                    assert!(!s.nodes[0].ret_val);
                }
                2 => {
                    assert_eq!(s.nodes[0].odata_row, vec![7]);
                    assert_eq!(s.nodes[0].phase, Phase::SlotFinish);
                    assert!(s.mailboxes[0].is_empty());
                }
                4 => {
                    assert_eq!(s.nodes[0].phase, Phase::Done);
                    assert_eq!((s.nodes[0].appts, s.nodes[0].time_slot), (1, 1));
                }
                _ => {}
            }
        }
        assert!(is_terminal_success(&s));
        assert_eq!(s.nodes[0].odata_row, vec![7]);
        assert_eq!(s.nodes[1].odata_row, vec![5]);
        assert!(enabled_actions(&s, &cfg, SemanticsMode::Reduced).is_empty());
    }

    #[test]
    fn faithful_smoke_trace_spells_out_local_steps() {
        let cfg = clique(2, 1, vec![5, 7]);
        let s = run(
            &cfg,
            SemanticsMode::Faithful,
            &[
                Action::Send { node: 0, peer_idx: 0 },
                Action::LocalStep { node: 0 }, // retVal := false, empty stash
                Action::Send { node: 1, peer_idx: 0 },
                Action::Receive { node: 0 },
                Action::LocalStep { node: 0 }, // matches: into the return slot
                Action::LocalStep { node: 0 }, // store payload
                Action::FinishSlot { node: 0 },
            ],
        );
        assert_eq!(s.nodes[0].odata_row, vec![7]);
        assert_eq!(s.nodes[0].phase, Phase::Done);
        assert_eq!(s.nodes[1].phase, Phase::ScanBuffer);
        assert_eq!(enabled_actions(&s, &cfg, SemanticsMode::Faithful), vec![Action::LocalStep { node: 1 }]);
    }

    #[test]
    fn receive_blocks_on_empty_mailbox() {
        let cfg = clique(2, 1, vec![5, 7]);
        let s = run(&cfg, SemanticsMode::Reduced, &[Action::Send { node: 0, peer_idx: 0 }]);
        assert_eq!(s.nodes[0].phase, Phase::AwaitMailbox);
        let enabled = enabled_actions(&s, &cfg, SemanticsMode::Reduced);
        assert!(!enabled.contains(&Action::Receive { node: 0 }));
        assert_eq!(
            apply_action(&s, Action::Receive { node: 0 }, &cfg, SemanticsMode::Reduced),
            Err(ProtocolError::IllegalAction { action: Action::Receive { node: 0 } })
        );
    }

    #[test]
    fn all_done_enables_only_set_terminated() {
        let cfg = clique(3, 1, vec![1, 2, 3]);
        let mut s = initial_state(&cfg).unwrap();
        for n in &mut s.nodes {
            n.phase = Phase::Done;
            n.appts = 1;
            n.time_slot = 1;
        }
        for mode in MODES {
            assert_eq!(enabled_actions(&s, &cfg, mode), vec![Action::SetTerminated]);
        }
        assert!(!is_terminal_success(&s));
        let t = apply_action(&s, Action::SetTerminated, &cfg, SemanticsMode::Reduced).unwrap();
        assert!(is_terminal_success(&t));
        assert!(!is_terminal_success(&initial_state(&cfg).unwrap()));
    }

    #[test]
    fn wrong_sender_goes_to_the_stash() {
        let cfg = clique(3, 2, vec![1, 2, 3]);
        let mut s = initial_state(&cfg).unwrap();
        let n0 = &mut s.nodes[0];
        n0.phase = Phase::AwaitMailbox;
        n0.appts = 1;
        n0.time_slot = 1;
        n0.peer_idx = 0; // expecting peer 1
        s.mailboxes[0].push_back(Message::new(1, 2, 3));
        for mode in MODES {
            let mut t = apply_action(&s, Action::Receive { node: 0 }, &cfg, mode).unwrap();
            if mode == SemanticsMode::Faithful {
                assert_eq!(t.nodes[0].inbox, Some(Message::new(1, 2, 3)));
                t = apply_action(&t, Action::LocalStep { node: 0 }, &cfg, mode).unwrap();
            }
            assert_eq!(t.nodes[0].stash, msgs(&[(1, 2, 3)]));
            assert_eq!(t.nodes[0].phase, Phase::AwaitMailbox);
            assert!(t.mailboxes[0].is_empty());
        }
    }

    #[test]
    fn stashed_message_is_found_by_the_scan() {
        let cfg = clique(3, 2, vec![1, 2, 30]);
        let mut s = initial_state(&cfg).unwrap();
        let n0 = &mut s.nodes[0];
        n0.phase = Phase::ScanBuffer;
        n0.appts = 1;
        n0.time_slot = 1;
        n0.peer_idx = 1; // expecting peer 2
        n0.stash = msgs(&[(1, 2, 30)]);
        let a = apply_action(&s, Action::LocalStep { node: 0 }, &cfg, SemanticsMode::Faithful).unwrap();
        assert_eq!(a.nodes[0].scan_left, Some(1));
        assert!(!a.nodes[0].ret_val);
        let b = apply_action(&a, Action::LocalScan { node: 0 }, &cfg, SemanticsMode::Faithful).unwrap();
        assert!(b.nodes[0].ret_val);
        assert!(b.nodes[0].stash.is_empty());
        assert_eq!(b.nodes[0].ret_slot, Some(Message::new(1, 2, 30)));
        assert_eq!(b.nodes[0].phase, Phase::StoreData);
        let c = apply_action(&b, Action::LocalStep { node: 0 }, &cfg, SemanticsMode::Faithful).unwrap();
        assert_eq!(c.nodes[0].odata_row, vec![UNSET, 30]);
        assert_eq!(c.nodes[0].phase, Phase::SlotFinish);
    }

    #[test]
    fn node_without_data_skips_the_exchange() {
        let cfg = clique(2, 2, vec![5, -1]);
        let s = initial_state(&cfg).unwrap();
        assert_eq!(
            enabled_actions(&s, &cfg, SemanticsMode::Reduced),
            vec![Action::Send { node: 0, peer_idx: 0 }, Action::FinishSlot { node: 1 }]
        );
        let t = run(&cfg, SemanticsMode::Reduced, &[Action::FinishSlot { node: 1 }, Action::FinishSlot { node: 1 }]);
        assert_eq!(t.nodes[1].phase, Phase::Done);
        assert_eq!(t.nodes[1].odata_row, vec![UNSET]);
    }

    #[test]
    fn full_mailbox_blocks_the_sender() {
        let cfg = clique(3, 1, vec![1, 2, 3]).with_capacity(1).unwrap();
        let s = run(&cfg, SemanticsMode::Reduced, &[Action::Send { node: 2, peer_idx: 0 }]);
        // node 1's first target is mailbox 0, now full
        let enabled = enabled_actions(&s, &cfg, SemanticsMode::Reduced);
        assert!(!enabled.iter().any(|a| matches!(a, Action::Send { node: 1, .. })));
        assert_eq!(pending_send_target(&s, &cfg, 1), Some(0));
    }

    #[test]
    fn key_in_map_examples() {
        assert_eq!(is_key_in_map(&VecDeque::new(), 0, 0), (None, VecDeque::new()));
        let (found, rest) = is_key_in_map(&msgs(&[(2, 1, 10), (1, 2, 20)]), 1, 2);
        assert_eq!(found, Some(Message::new(1, 2, 20)));
        assert_eq!(rest, msgs(&[(2, 1, 10)]));
        let stash = msgs(&[(2, 1, 10), (2, 3, 30)]);
        assert_eq!(is_key_in_map(&stash, 1, 2), (None, stash.clone()));
    }

    #[test]
    fn delivery_check_flags_wrong_cells() {
        let cfg = clique(3, 1, vec![10, 20, 30]);
        let mut s = initial_state(&cfg).unwrap();
        s.nodes[0].odata_row = vec![20, 31];
        let v = delivery_violations(&s, &cfg, 0);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].position, v[0].expected, v[0].found), (1, 30, 31));
    }
}
