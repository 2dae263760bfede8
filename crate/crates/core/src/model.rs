//! Domain types shared by the topology, protocol, checker and simulator.
//!
//! The names track the variables of the modeled `getMeas` routine: each node
//! owns a mailbox (`nodeChannels`), a stash of early messages (`timeSlotsMap`),
//! a one-message return slot (`retChannel`) with its flag (`retVal`), and one
//! row of received payloads (`odataArr`).

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::topology::{self, Violation};

pub type NodeId = usize;

/// Data value carried by a message. Sent payloads are `>= 0`.
pub type Payload = i64;

/// Input value meaning "this node has nothing to send" (Python's `None`).
pub const NO_DATA: Payload = -1;

/// Marker for a received-data cell that has never been written.
pub const UNSET: Payload = -2;

/// End-of-list marker in the raw peer table.
pub const SENTINEL: i32 = -1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<Violation>),
    #[error("bad dimensions: {0}")]
    Dimension(String),
    #[error("idata has {got} entries, expected {expected}")]
    IdataLength { expected: usize, got: usize },
    #[error("idata[{node}] = {value} is outside the payload domain (>= 0, or -1 for none)")]
    IdataValue { node: NodeId, value: Payload },
    #[error("mailbox capacity must be at least 1")]
    ZeroCapacity,
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One message exchanged between nodes: `(slot, sender, payload)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Message {
    pub slot: usize,
    pub sender: NodeId,
    pub payload: Payload,
}

impl Message {
    pub fn new(slot: usize, sender: NodeId, payload: Payload) -> Self {
        Self { slot, sender, payload }
    }

    pub fn matches(&self, slot: usize, sender: NodeId) -> bool {
        self.slot == slot && self.sender == sender
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.slot, self.sender, self.payload)
    }
}

/// The per-slot peer table.
///
/// Entry `(node, position, slot)` holds a peer ID or [`SENTINEL`]. A node's
/// list in a slot is the prefix of positions before the first sentinel; a
/// row completely filled with IDs has no sentinel. The table has
/// `no_nodes` positions per row, matching the `peerIds[N][N][K]` layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PeerSchedule {
    no_nodes: usize,
    no_time_slots: usize,
    table: Vec<i32>,
}

impl PeerSchedule {
    /// Builds a schedule from a raw table laid out as `[node][position][slot]`.
    pub fn from_table(no_nodes: usize, no_time_slots: usize, table: Vec<i32>) -> Result<Self, ModelError> {
        if no_nodes == 0 || no_time_slots == 0 {
            return Err(ModelError::Dimension(format!("nodes={no_nodes} slots={no_time_slots}; both must be >= 1")));
        }
        let expected = no_nodes * no_nodes * no_time_slots;
        if table.len() != expected {
            return Err(ModelError::Dimension(format!("table has {} entries, expected {expected}", table.len())));
        }
        Ok(Self { no_nodes, no_time_slots, table })
    }

    /// Builds a sentinel-padded schedule from explicit lists indexed `[slot][node]`.
    ///
    /// Lists are stored in the given order; no validation is performed.
    pub fn from_lists(no_nodes: usize, no_time_slots: usize, lists: &[Vec<Vec<NodeId>>]) -> Result<Self, ModelError> {
        if no_nodes == 0 || no_time_slots == 0 {
            return Err(ModelError::Dimension(format!("nodes={no_nodes} slots={no_time_slots}; both must be >= 1")));
        }
        if lists.len() != no_time_slots || lists.iter().any(|s| s.len() != no_nodes) {
            return Err(ModelError::Dimension("lists must be indexed [slot][node]".into()));
        }
        let mut table = vec![SENTINEL; no_nodes * no_nodes * no_time_slots];
        for (slot, per_node) in lists.iter().enumerate() {
            for (node, list) in per_node.iter().enumerate() {
                if list.len() > no_nodes {
                    return Err(ModelError::Dimension(format!(
                        "node {node} slot {slot} lists {} peers, at most {no_nodes} fit",
                        list.len()
                    )));
                }
                for (pos, &peer) in list.iter().enumerate() {
                    let peer =
                        i32::try_from(peer).map_err(|_| ModelError::Dimension(format!("peer id {peer} too large")))?;
                    table[(node * no_nodes + pos) * no_time_slots + slot] = peer;
                }
            }
        }
        Ok(Self { no_nodes, no_time_slots, table })
    }

    pub fn no_nodes(&self) -> usize {
        self.no_nodes
    }

    pub fn no_time_slots(&self) -> usize {
        self.no_time_slots
    }

    /// Raw table entry; positions past the row width read as [`SENTINEL`].
    pub fn entry(&self, node: NodeId, position: usize, slot: usize) -> i32 {
        if position >= self.no_nodes {
            return SENTINEL;
        }
        self.table[(node * self.no_nodes + position) * self.no_time_slots + slot]
    }

    /// Peer at `position` of `node`'s list in `slot`, or `None` at the end of the list.
    pub fn peer(&self, node: NodeId, position: usize, slot: usize) -> Option<NodeId> {
        let mut p = 0;
        while p <= position {
            let e = self.entry(node, p, slot);
            if e == SENTINEL || e < 0 {
                return None;
            }
            if p == position {
                return Some(e as NodeId);
            }
            p += 1;
        }
        None
    }

    /// The node's peer list in `slot` (the prefix before the first sentinel).
    pub fn peers(&self, node: NodeId, slot: usize) -> Vec<NodeId> {
        (0..self.no_nodes).map(|p| self.entry(node, p, slot)).take_while(|&e| e >= 0).map(|e| e as NodeId).collect()
    }

    /// Longest peer list over all nodes and slots.
    pub fn max_list_len(&self) -> usize {
        (0..self.no_nodes)
            .flat_map(|n| (0..self.no_time_slots).map(move |s| (n, s)))
            .map(|(n, s)| self.peers(n, s).len())
            .max()
            .unwrap_or(0)
    }
}

/// A schedule together with per-node input data and channel sizing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemConfig {
    schedule: PeerSchedule,
    no_neighbors: usize,
    idata: Vec<Payload>,
    mailbox_capacity: usize,
}

impl SystemConfig {
    /// Creates a config with the default mailbox capacity `(nodes - 1) * slots`
    /// (at least 1).
    pub fn new(schedule: PeerSchedule, idata: Vec<Payload>) -> Result<Self, ModelError> {
        let n = schedule.no_nodes();
        if idata.len() != n {
            return Err(ModelError::IdataLength { expected: n, got: idata.len() });
        }
        if let Some((node, &value)) = idata.iter().enumerate().find(|(_, &v)| v < NO_DATA) {
            return Err(ModelError::IdataValue { node, value });
        }
        let mailbox_capacity = Self::default_capacity(n, schedule.no_time_slots());
        let no_neighbors = schedule.max_list_len();
        Ok(Self { schedule, no_neighbors, idata, mailbox_capacity })
    }

    pub fn default_capacity(no_nodes: usize, no_time_slots: usize) -> usize {
        ((no_nodes - 1) * no_time_slots).max(1)
    }

    pub fn with_capacity(mut self, capacity: usize) -> Result<Self, ModelError> {
        if capacity == 0 {
            return Err(ModelError::ZeroCapacity);
        }
        self.mailbox_capacity = capacity;
        Ok(self)
    }

    pub fn schedule(&self) -> &PeerSchedule {
        &self.schedule
    }

    pub fn no_nodes(&self) -> usize {
        self.schedule.no_nodes()
    }

    pub fn no_time_slots(&self) -> usize {
        self.schedule.no_time_slots()
    }

    /// Longest peer list in the schedule (recomputed from the table).
    pub fn no_neighbors(&self) -> usize {
        self.no_neighbors
    }

    pub fn idata(&self) -> &[Payload] {
        &self.idata
    }

    pub fn mailbox_capacity(&self) -> usize {
        self.mailbox_capacity
    }

    /// True when the capacity was not overridden.
    pub fn has_default_capacity(&self) -> bool {
        self.mailbox_capacity == Self::default_capacity(self.no_nodes(), self.no_time_slots())
    }
}

/// Control location of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    /// Before the slot body: the `odata == -1` test and the send loop start.
    SlotStart,
    /// Sending to the peer at `peer_idx`.
    Sending,
    /// Looking in the stash for the expected peer's message.
    ScanBuffer,
    /// Blocked on the mailbox until the expected message arrives.
    AwaitMailbox,
    /// The expected message sits in the return slot.
    StoreData,
    /// Slot body done; the slot counter increment is pending.
    SlotFinish,
    Done,
}

impl Phase {
    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Phase::SlotStart,
            1 => Phase::Sending,
            2 => Phase::ScanBuffer,
            3 => Phase::AwaitMailbox,
            4 => Phase::StoreData,
            5 => Phase::SlotFinish,
            6 => Phase::Done,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeState {
    pub phase: Phase,
    /// Completed slots (the application loop counter).
    pub appts: usize,
    /// Current slot as seen by the exchange routine; moves in lockstep with `appts`.
    pub time_slot: usize,
    pub peer_idx: usize,
    pub ret_val: bool,
    /// Content of the capacity-1 return channel.
    pub ret_slot: Option<Message>,
    /// Early or out-of-order messages, scanned by rotation.
    pub stash: VecDeque<Message>,
    pub odata_row: Vec<Payload>,
    /// Messages left to examine in the current stash scan. `None` before the
    /// scan has started. Only used by faithful semantics.
    pub scan_left: Option<usize>,
    /// Message taken off the mailbox and not yet classified. Only used by
    /// faithful semantics.
    pub inbox: Option<Message>,
}

impl NodeState {
    pub fn new(no_nodes: usize) -> Self {
        Self {
            phase: Phase::SlotStart,
            appts: 0,
            time_slot: 0,
            peer_idx: 0,
            ret_val: false,
            ret_slot: None,
            stash: VecDeque::new(),
            odata_row: vec![UNSET; no_nodes.saturating_sub(1)],
            scan_left: None,
            inbox: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GlobalState {
    pub nodes: Vec<NodeState>,
    pub mailboxes: Vec<VecDeque<Message>>,
    pub terminated: bool,
}

impl GlobalState {
    /// Checks the structural invariants that must hold in every reachable state.
    pub fn check_invariants(&self, config: &SystemConfig) -> Result<(), String> {
        let k = config.no_time_slots();
        let cap = config.mailbox_capacity();
        for (i, mb) in self.mailboxes.iter().enumerate() {
            if mb.len() > cap {
                return Err(format!("mailbox {i} holds {} > capacity {cap}", mb.len()));
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.appts > k {
                return Err(format!("node {i} appts {} > slots {k}", n.appts));
            }
            if (n.phase == Phase::Done) != (n.appts == k) {
                return Err(format!("node {i} phase {:?} with appts {}", n.phase, n.appts));
            }
            if matches!(n.phase, Phase::SlotStart | Phase::SlotFinish | Phase::Done) && n.time_slot != n.appts {
                return Err(format!("node {i} time_slot {} != appts {}", n.time_slot, n.appts));
            }
            if n.stash.len() > cap {
                return Err(format!("node {i} stash holds {} > capacity {cap}", n.stash.len()));
            }
        }
        if self.terminated && self.nodes.iter().any(|n| n.phase != Phase::Done) {
            return Err("terminated set while a node is not done".into());
        }
        Ok(())
    }

    pub fn all_done(&self) -> bool {
        self.nodes.iter().all(|n| n.phase == Phase::Done)
    }
}

/// The initial state of a validated configuration.
pub fn initial_state(config: &SystemConfig) -> Result<GlobalState, ModelError> {
    let violations = topology::validate(config.schedule());
    if !violations.is_empty() {
        return Err(ModelError::InvalidConfig(violations));
    }
    Ok(blank_state(config))
}

/// Like [`initial_state`] but tolerates semantic violations (asymmetry,
/// self-loops, duplicates). Tables whose entries cannot be interpreted
/// (out-of-range IDs, malformed sentinels, over-long lists) are still rejected.
pub fn initial_state_permissive(config: &SystemConfig) -> Result<GlobalState, ModelError> {
    let structural: Vec<Violation> =
        topology::validate(config.schedule()).into_iter().filter(Violation::is_structural).collect();
    if !structural.is_empty() {
        return Err(ModelError::InvalidConfig(structural));
    }
    Ok(blank_state(config))
}

fn blank_state(config: &SystemConfig) -> GlobalState {
    let n = config.no_nodes();
    GlobalState {
        nodes: (0..n).map(|_| NodeState::new(n)).collect(),
        mailboxes: vec![VecDeque::new(); n],
        terminated: false,
    }
}

/// One step of the interleaving semantics.
///
/// The derived ordering (kind, then node, then position) is the order in
/// which enabled actions are listed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Send { node: NodeId, peer_idx: usize },
    Receive { node: NodeId },
    LocalScan { node: NodeId },
    LocalStep { node: NodeId },
    FinishSlot { node: NodeId },
    SetTerminated,
}

impl Action {
    pub fn node(&self) -> Option<NodeId> {
        match *self {
            Action::Send { node, .. }
            | Action::Receive { node }
            | Action::LocalScan { node }
            | Action::LocalStep { node }
            | Action::FinishSlot { node } => Some(node),
            Action::SetTerminated => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Action::Send { .. } => "send",
            Action::Receive { .. } => "receive",
            Action::LocalScan { .. } => "local_scan",
            Action::LocalStep { .. } => "local_step",
            Action::FinishSlot { .. } => "finish_slot",
            Action::SetTerminated => "set_terminated",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Action::Send { node, peer_idx } => write!(f, "Send({node},{peer_idx})"),
            Action::Receive { node } => write!(f, "Receive({node})"),
            Action::LocalScan { node } => write!(f, "LocalScan({node})"),
            Action::LocalStep { node } => write!(f, "LocalStep({node})"),
            Action::FinishSlot { node } => write!(f, "FinishSlot({node})"),
            Action::SetTerminated => write!(f, "SetTerminated"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Property {
    DeadlockFree,
    ReachesTerminated,
    AlwaysEventuallyTerminated,
}

impl Property {
    pub const ALL: [Property; 3] =
        [Property::DeadlockFree, Property::ReachesTerminated, Property::AlwaysEventuallyTerminated];

    pub fn key(&self) -> &'static str {
        match self {
            Property::DeadlockFree => "deadlockfree",
            Property::ReachesTerminated => "reaches",
            Property::AlwaysEventuallyTerminated => "always_eventually",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Counterexample {
    /// Path from the initial state to a non-terminal state with no enabled action.
    Deadlock(Vec<Action>),
    /// Path to a state from which `cycle` returns to the same state without
    /// ever setting `terminated`.
    Lasso { stem: Vec<Action>, cycle: Vec<Action> },
}

impl Counterexample {
    /// All actions in replay order.
    pub fn actions(&self) -> Vec<Action> {
        match self {
            Counterexample::Deadlock(t) => t.clone(),
            Counterexample::Lasso { stem, cycle } => stem.iter().chain(cycle).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub property: Property,
    /// Present iff the property failed.
    pub counterexample: Option<Counterexample>,
    pub states_explored: usize,
    pub transitions_explored: usize,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

/// Canonical byte encoding of a [`GlobalState`], used as the visited-set key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(Box<[u8]>);

impl StateKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl From<&[u8]> for StateKey {
    fn from(bytes: &[u8]) -> Self {
        StateKey(bytes.into())
    }
}

impl std::borrow::Borrow<[u8]> for StateKey {
    fn borrow(&self) -> &[u8] {
        &self.0
    }
}

fn put_uvar(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn put_ivar(out: &mut Vec<u8>, v: i64) {
    put_uvar(out, ((v << 1) ^ (v >> 63)) as u64);
}

fn put_msg(out: &mut Vec<u8>, m: &Message) {
    put_uvar(out, m.slot as u64);
    put_uvar(out, m.sender as u64);
    put_ivar(out, m.payload);
}

fn put_opt_msg(out: &mut Vec<u8>, m: &Option<Message>) {
    match m {
        None => out.push(0),
        Some(m) => {
            out.push(1);
            put_msg(out, m);
        }
    }
}

fn put_queue(out: &mut Vec<u8>, q: &VecDeque<Message>) {
    put_uvar(out, q.len() as u64);
    for m in q {
        put_msg(out, m);
    }
}

/// Serializes every field, including message order in mailboxes and stashes.
pub fn encode_state(state: &GlobalState) -> StateKey {
    let mut out = Vec::with_capacity(16 + state.nodes.len() * 24);
    encode_state_into(state, &mut out);
    StateKey(out.into_boxed_slice())
}

/// [`encode_state`] into a caller-owned buffer, which is cleared first.
pub fn encode_state_into(state: &GlobalState, out: &mut Vec<u8>) {
    out.clear();
    out.push(state.terminated as u8);
    put_uvar(out, state.nodes.len() as u64);
    for n in &state.nodes {
        out.push(n.phase.code());
        put_uvar(out, n.appts as u64);
        put_uvar(out, n.time_slot as u64);
        put_uvar(out, n.peer_idx as u64);
        out.push(n.ret_val as u8);
        put_opt_msg(out, &n.ret_slot);
        put_queue(out, &n.stash);
        put_uvar(out, n.odata_row.len() as u64);
        for &v in &n.odata_row {
            put_ivar(out, v);
        }
        match n.scan_left {
            None => out.push(0),
            Some(k) => {
                out.push(1);
                put_uvar(out, k as u64);
            }
        }
        put_opt_msg(out, &n.inbox);
    }
    put_uvar(out, state.mailboxes.len() as u64);
    for mb in &state.mailboxes {
        put_queue(out, mb);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn byte(&mut self) -> Option<u8> {
        let b = *self.buf.get(self.pos)?;
        self.pos += 1;
        Some(b)
    }

    fn uvar(&mut self) -> Option<u64> {
        let mut v = 0u64;
        let mut shift = 0;
        loop {
            let b = self.byte()?;
            if shift >= 64 {
                return None;
            }
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Some(v);
            }
            shift += 7;
        }
    }

    fn usize(&mut self) -> Option<usize> {
        usize::try_from(self.uvar()?).ok()
    }

    fn ivar(&mut self) -> Option<i64> {
        let u = self.uvar()?;
        Some(((u >> 1) as i64) ^ -((u & 1) as i64))
    }

    fn flag(&mut self) -> Option<bool> {
        match self.byte()? {
            0 => Some(false),
            1 => Some(true),
            _ => None,
        }
    }

    fn msg(&mut self) -> Option<Message> {
        Some(Message::new(self.usize()?, self.usize()?, self.ivar()?))
    }

    fn opt_msg(&mut self) -> Option<Option<Message>> {
        if self.flag()? {
            Some(Some(self.msg()?))
        } else {
            Some(None)
        }
    }

    fn queue(&mut self) -> Option<VecDeque<Message>> {
        let len = self.usize()?;
        // every message takes at least 3 bytes
        if len > self.buf.len() {
            return None;
        }
        (0..len).map(|_| self.msg()).collect()
    }
}

/// Inverse of [`encode_state`]. Returns `None` on malformed input.
pub fn decode_state(key: &StateKey) -> Option<GlobalState> {
    let mut r = Reader { buf: key.as_bytes(), pos: 0 };
    let terminated = r.flag()?;
    let n_nodes = r.usize()?;
    if n_nodes > r.buf.len() {
        return None;
    }
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let phase = Phase::from_code(r.byte()?)?;
        let appts = r.usize()?;
        let time_slot = r.usize()?;
        let peer_idx = r.usize()?;
        let ret_val = r.flag()?;
        let ret_slot = r.opt_msg()?;
        let stash = r.queue()?;
        let row_len = r.usize()?;
        if row_len > r.buf.len() {
            return None;
        }
        let odata_row = (0..row_len).map(|_| r.ivar()).collect::<Option<Vec<_>>>()?;
        let scan_left = if r.flag()? { Some(r.usize()?) } else { None };
        let inbox = r.opt_msg()?;
        nodes.push(NodeState {
            phase,
            appts,
            time_slot,
            peer_idx,
            ret_val,
            ret_slot,
            stash,
            odata_row,
            scan_left,
            inbox,
        });
    }
    let n_mb = r.usize()?;
    if n_mb > r.buf.len() {
        return None;
    }
    let mailboxes = (0..n_mb).map(|_| r.queue()).collect::<Option<Vec<_>>>()?;
    if r.pos != r.buf.len() {
        return None;
    }
    Some(GlobalState { nodes, mailboxes, terminated })
}
