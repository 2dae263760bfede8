//! Communication schedules: generators for the standard graph shapes, the
//! well-formedness validator, and the line-based schedule file format.
//!
//! ```text
//! nodes 2
//! slots 1
//! capacity 1          # optional; default (nodes-1)*slots
//! idata 5 7           # exactly `nodes` integers, each >= 0 or -1
//! slot 0
//! edge 0 1            # undirected; expands symmetrically
//! arc 0 1             # one-sided entry: 0 lists 1 (produces invalid schedules)
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{ModelError, NodeId, Payload, PeerSchedule, SystemConfig, NO_DATA, SENTINEL};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

/// A well-formedness violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Violation {
    /// A non-sentinel entry after the end-of-list marker.
    SentinelGap {
        node: NodeId,
        slot: usize,
        position: usize,
    },
    /// A negative entry other than the sentinel.
    BadEntry {
        node: NodeId,
        slot: usize,
        position: usize,
        value: i32,
    },
    OutOfRange {
        node: NodeId,
        slot: usize,
        position: usize,
        value: i32,
    },
    TooLong {
        node: NodeId,
        slot: usize,
        len: usize,
    },
    SelfLoop {
        node: NodeId,
        slot: usize,
    },
    Duplicate {
        node: NodeId,
        peer: NodeId,
        slot: usize,
    },
    /// `lister` has `missing` as a peer in `slot` but not the other way round.
    Asymmetric {
        lister: NodeId,
        missing: NodeId,
        slot: usize,
    },
}

impl Violation {
    /// Violations that make the table uninterpretable by the protocol.
    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            Violation::SentinelGap { .. }
                | Violation::BadEntry { .. }
                | Violation::OutOfRange { .. }
                | Violation::TooLong { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::SentinelGap { node, slot, position } => {
                write!(f, "node {node} slot {slot}: entry at position {position} follows the end marker")
            }
            Violation::BadEntry { node, slot, position, value } => {
                write!(f, "node {node} slot {slot}: bad entry {value} at position {position}")
            }
            Violation::OutOfRange { node, slot, position, value } => {
                write!(f, "node {node} slot {slot}: peer id {value} at position {position} is out of range")
            }
            Violation::TooLong { node, slot, len } => {
                write!(f, "node {node} slot {slot}: {len} peers exceeds nodes-1")
            }
            Violation::SelfLoop { node, slot } => write!(f, "node {node} slot {slot}: lists itself"),
            Violation::Duplicate { node, peer, slot } => {
                write!(f, "node {node} slot {slot}: peer {peer} listed more than once")
            }
            Violation::Asymmetric { lister, missing, slot } => write!(
                f,
                "slot {slot}: asymmetric link ({lister},{missing},{slot}): node {lister} lists {missing} but not vice versa"
            ),
        }
    }
}

/// Suspicious but legal configuration patterns.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Warning {
    /// `peer` has no data (`idata = -1`) so it never sends, yet `node` expects it.
    DeadPeer { node: NodeId, peer: NodeId, slot: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Warning::DeadPeer { node, peer, slot } => {
                write!(f, "slot {slot}: node {node} expects data from node {peer}, which has idata -1 and never sends")
            }
        }
    }
}

fn check_dims(n: usize, k: usize, min_n: usize, what: &str) -> Result<(), TopologyError> {
    if n < min_n {
        return Err(TopologyError::InvalidArg(format!("{what} needs at least {min_n} nodes, got {n}")));
    }
    if k < 1 {
        return Err(TopologyError::InvalidArg(format!("{what} needs at least 1 slot, got {k}")));
    }
    Ok(())
}

fn uniform(n: usize, k: usize, adjacency: impl Fn(NodeId) -> Vec<NodeId>) -> PeerSchedule {
    let per_slot: Vec<Vec<NodeId>> = (0..n).map(&adjacency).collect();
    let lists = vec![per_slot; k];
    PeerSchedule::from_lists(n, k, &lists).expect("generator lists fit the table")
}

/// Completely connected graph, identical in every slot.
pub fn gen_clique(n: usize, k: usize) -> Result<PeerSchedule, TopologyError> {
    check_dims(n, k, 1, "clique")?;
    Ok(uniform(n, k, |i| (0..n).filter(|&j| j != i).collect()))
}

/// Cycle `0 - 1 - ... - (n-1) - 0`, identical in every slot.
pub fn gen_ring(n: usize, k: usize) -> Result<PeerSchedule, TopologyError> {
    check_dims(n, k, 3, "ring")?;
    Ok(uniform(n, k, |i| {
        let mut v = vec![(i + n - 1) % n, (i + 1) % n];
        v.sort_unstable();
        v
    }))
}

/// Path `0 - 1 - ... - (n-1)`, identical in every slot.
pub fn gen_bus(n: usize, k: usize) -> Result<PeerSchedule, TopologyError> {
    check_dims(n, k, 2, "bus")?;
    Ok(uniform(n, k, |i| {
        let mut v = Vec::with_capacity(2);
        if i > 0 {
            v.push(i - 1);
        }
        if i + 1 < n {
            v.push(i + 1);
        }
        v
    }))
}

/// Returns every violation in the table; an empty list means the schedule is valid.
pub fn validate(schedule: &PeerSchedule) -> Vec<Violation> {
    let n = schedule.no_nodes();
    let k = schedule.no_time_slots();
    let mut out = Vec::new();
    // lists[slot][node], restricted to in-range entries
    let mut lists: Vec<Vec<Vec<NodeId>>> = vec![vec![Vec::new(); n]; k];

    for (slot, per_node) in lists.iter_mut().enumerate() {
        for (node, list) in per_node.iter_mut().enumerate() {
            let mut ended = false;
            let mut seen = BTreeSet::new();
            for position in 0..n {
                let e = schedule.entry(node, position, slot);
                if ended {
                    if e != SENTINEL {
                        out.push(Violation::SentinelGap { node, slot, position });
                    }
                    continue;
                }
                if e == SENTINEL {
                    ended = true;
                    continue;
                }
                if e < 0 {
                    out.push(Violation::BadEntry { node, slot, position, value: e });
                    ended = true;
                    continue;
                }
                let peer = e as NodeId;
                if peer >= n {
                    out.push(Violation::OutOfRange { node, slot, position, value: e });
                    continue;
                }
                if peer == node {
                    out.push(Violation::SelfLoop { node, slot });
                }
                if !seen.insert(peer) {
                    out.push(Violation::Duplicate { node, peer, slot });
                }
                list.push(peer);
            }
            let len = schedule.peers(node, slot).len();
            if len > n.saturating_sub(1) {
                out.push(Violation::TooLong { node, slot, len });
            }
        }
    }

    for (slot, per_node) in lists.iter().enumerate() {
        for (node, list) in per_node.iter().enumerate() {
            let mut reported = BTreeSet::new();
            for &peer in list {
                if peer != node && !per_node[peer].contains(&node) && reported.insert(peer) {
                    out.push(Violation::Asymmetric { lister: node, missing: peer, slot });
                }
            }
        }
    }
    out
}

/// Warnings that depend on the input data as well as the schedule.
pub fn config_warnings(config: &SystemConfig) -> Vec<Warning> {
    let sched = config.schedule();
    let idata = config.idata();
    let mut out = Vec::new();
    for slot in 0..sched.no_time_slots() {
        for node in 0..sched.no_nodes() {
            if idata[node] == NO_DATA {
                continue;
            }
            for peer in sched.peers(node, slot) {
                if peer < idata.len() && idata[peer] == NO_DATA {
                    out.push(Warning::DeadPeer { node, peer, slot });
                }
            }
        }
    }
    out
}

/// Result of parsing a schedule file. The config is returned even when the
/// schedule has violations so that invalid schedules can still be explored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSchedule {
    pub config: SystemConfig,
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ParsedSchedule {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, ParseError> {
    tok.parse().map_err(|_| ParseError { line, message: format!("expected {what}, found `{tok}`") })
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, message: message.into() }
}

/// Parses the schedule file format into a config with canonical (ascending,
/// duplicate-free, sentinel-padded) peer lists.
pub fn parse_schedule(text: &str) -> Result<ParsedSchedule, ParseError> {
    let mut nodes: Option<usize> = None;
    let mut slots: Option<usize> = None;
    let mut capacity: Option<(usize, usize)> = None;
    let mut idata: Option<Vec<Payload>> = None;
    let mut current_slot: Option<usize> = None;
    let mut seen_slots = BTreeSet::new();
    // adjacency[slot][node]
    let mut adjacency: Vec<Vec<BTreeSet<NodeId>>> = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = content.split_whitespace().collect();
        let Some((&head, args)) = toks.split_first() else { continue };

        let dims = |line: usize| -> Result<(usize, usize), ParseError> {
            match (nodes, slots) {
                (Some(n), Some(k)) => Ok((n, k)),
                _ => Err(err(line, format!("`{head}` before `nodes` and `slots`"))),
            }
        };

        match head {
            "nodes" | "slots" => {
                let [v] = args else { return Err(err(line, format!("`{head}` takes one value"))) };
                let v: usize = parse_num(v, line, "a count")?;
                if v == 0 {
                    return Err(err(line, format!("`{head}` must be at least 1")));
                }
                let target = if head == "nodes" { &mut nodes } else { &mut slots };
                if target.replace(v).is_some() {
                    return Err(err(line, format!("duplicate `{head}`")));
                }
                if let (Some(n), Some(k)) = (nodes, slots) {
                    adjacency = vec![vec![BTreeSet::new(); n]; k];
                }
            }
            "capacity" => {
                let [v] = args else { return Err(err(line, "`capacity` takes one value")) };
                let v: usize = parse_num(v, line, "a count")?;
                if v == 0 {
                    return Err(err(line, "`capacity` must be at least 1"));
                }
                if capacity.replace((v, line)).is_some() {
                    return Err(err(line, "duplicate `capacity`"));
                }
            }
            "idata" => {
                let (n, _) = dims(line)?;
                if args.len() != n {
                    return Err(err(line, format!("`idata` needs exactly {n} values, found {}", args.len())));
                }
                let values =
                    args.iter().map(|t| parse_num::<Payload>(t, line, "an integer")).collect::<Result<Vec<_>, _>>()?;
                if let Some(v) = values.iter().find(|&&v| v < NO_DATA) {
                    return Err(err(line, format!("idata value {v} must be >= 0 or -1")));
                }
                if idata.replace(values).is_some() {
                    return Err(err(line, "duplicate `idata`"));
                }
            }
            "slot" => {
                let (_, k) = dims(line)?;
                let [v] = args else { return Err(err(line, "`slot` takes one index")) };
                let s: usize = parse_num(v, line, "a slot index")?;
                if s >= k {
                    return Err(err(line, format!("slot {s} out of range (slots {k})")));
                }
                if !seen_slots.insert(s) {
                    return Err(err(line, format!("duplicate header for slot {s}")));
                }
                current_slot = Some(s);
            }
            "edge" | "arc" => {
                let (n, _) = dims(line)?;
                let Some(s) = current_slot else {
                    return Err(err(line, format!("`{head}` outside of a `slot` section")));
                };
                let [a, b] = args else { return Err(err(line, format!("`{head}` takes two node ids"))) };
                let a: NodeId = parse_num(a, line, "a node id")?;
                let b: NodeId = parse_num(b, line, "a node id")?;
                if a >= n || b >= n {
                    return Err(err(line, format!("node id out of range in `{head} {a} {b}` (nodes {n})")));
                }
                adjacency[s][a].insert(b);
                if head == "edge" {
                    adjacency[s][b].insert(a);
                }
            }
            other => return Err(err(line, format!("unknown directive `{other}`"))),
        }
    }

    let eof = last_line + 1;
    let n = nodes.ok_or_else(|| err(eof, "missing `nodes` line"))?;
    let k = slots.ok_or_else(|| err(eof, "missing `slots` line"))?;
    let idata = idata.ok_or_else(|| err(eof, "missing `idata` line"))?;
    if let Some(missing) = (0..k).find(|s| !seen_slots.contains(s)) {
        return Err(err(eof, format!("missing header for slot {missing}")));
    }

    let lists: Vec<Vec<Vec<NodeId>>> = adjacency
        .into_iter()
        .map(|per_node| per_node.into_iter().map(|set| set.into_iter().collect()).collect())
        .collect();
    let to_parse_err = |e: ModelError| err(eof, e.to_string());
    let schedule = PeerSchedule::from_lists(n, k, &lists).map_err(to_parse_err)?;
    let mut config = SystemConfig::new(schedule, idata).map_err(to_parse_err)?;
    if let Some((cap, line)) = capacity {
        config = config.with_capacity(cap).map_err(|e| err(line, e.to_string()))?;
    }
    let violations = validate(config.schedule());
    let warnings = config_warnings(&config);
    Ok(ParsedSchedule { config, violations, warnings })
}

/// Writes a config in the schedule file format. Mutual links become `edge`
/// lines, one-sided entries become `arc` lines.
pub fn serialize_schedule(config: &SystemConfig) -> String {
    let sched = config.schedule();
    let n = sched.no_nodes();
    let mut out = String::new();
    let _ = writeln!(out, "nodes {n}");
    let _ = writeln!(out, "slots {}", sched.no_time_slots());
    if !config.has_default_capacity() {
        let _ = writeln!(out, "capacity {}", config.mailbox_capacity());
    }
    let idata: Vec<String> = config.idata().iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "idata {}", idata.join(" "));
    for slot in 0..sched.no_time_slots() {
        let _ = writeln!(out, "slot {slot}");
        let lists: Vec<Vec<NodeId>> = (0..n).map(|i| sched.peers(i, slot)).collect();
        for (a, list) in lists.iter().enumerate() {
            let mut peers: Vec<NodeId> = list.clone();
            peers.sort_unstable();
            peers.dedup();
            for b in peers {
                let mutual = b < n && lists[b].contains(&a);
                if a == b || (mutual && a < b) {
                    let _ = writeln!(out, "edge {a} {b}");
                } else if !mutual {
                    let _ = writeln!(out, "arc {a} {b}");
                }
            }
        }
    }
    out
}
