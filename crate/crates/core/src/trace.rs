//! Text format for action traces.
//!
//! One action per line: `<step> <kind> <node> [<peer_idx>] [msg=<slot>,<sender>,<payload>]`.
//! `set_terminated` has `-` in the node column. `send` and `receive` lines
//! carry the message moved through the mailbox. Lines starting with `#` are
//! comments, except that `# run ...` starts a new block and `# cycle` marks
//! where the looping part of a lasso begins.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::SystemConfig;
use crate::model::{Action, GlobalState, Message};
use crate::protocol::{apply_in_place, ProtocolError, SemanticsMode};
use crate::topology::ParseError;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("step {step}: {source}")]
    Replay { step: usize, source: ProtocolError },
    #[error("step {step}: trace says msg={recorded} but replay moved msg={actual}")]
    MessageMismatch { step: usize, recorded: Message, actual: Message },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub step: usize,
    pub action: Action,
    pub msg: Option<Message>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceBlock {
    /// Text after `# run`, if the block had a header.
    pub header: Option<String>,
    pub steps: Vec<TraceStep>,
    /// Index into `steps` where a lasso's cycle starts.
    pub cycle_start: Option<usize>,
}

impl TraceBlock {
    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// The message an action moves through a mailbox, observed before it fires.
fn moved_message(state: &GlobalState, config: &SystemConfig, action: Action) -> Option<Message> {
    match action {
        Action::Send { node, .. } => {
            let t = state.nodes[node].time_slot;
            Some(Message::new(t, node, config.idata()[node]))
        }
        Action::Receive { node } => state.mailboxes[node].front().copied(),
        _ => None,
    }
}

fn write_step(out: &mut String, step: usize, action: Action, msg: Option<Message>) {
    let _ = write!(out, "{step} {}", action.kind_name());
    match action {
        Action::SetTerminated => out.push_str(" -"),
        Action::Send { node, peer_idx } => {
            let _ = write!(out, " {node} {peer_idx}");
        }
        other => {
            let _ = write!(out, " {}", other.node().expect("node action"));
        }
    }
    if let Some(m) = msg {
        let _ = write!(out, " msg={m}");
    }
    out.push('\n');
}

/// Renders `actions` by replaying them from `start`. `cycle_start` inserts a
/// `# cycle` marker before that step.
pub fn format_trace(
    start: &GlobalState,
    config: &SystemConfig,
    mode: SemanticsMode,
    actions: &[Action],
    cycle_start: Option<usize>,
) -> Result<String, TraceError> {
    let mut out = String::new();
    let mut state = start.clone();
    for (step, &action) in actions.iter().enumerate() {
        if cycle_start == Some(step) {
            out.push_str("# cycle\n");
        }
        let msg = moved_message(&state, config, action);
        apply_in_place(&mut state, action, config, mode).map_err(|source| TraceError::Replay { step, source })?;
        write_step(&mut out, step, action, msg);
    }
    Ok(out)
}

fn perr(line: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, message: message.into() }
}

fn parse_line(line: usize, text: &str) -> Result<TraceStep, ParseError> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let num = |i: usize, what: &str| -> Result<usize, ParseError> {
        let t = toks.get(i).ok_or_else(|| perr(line, format!("missing {what}")))?;
        t.parse().map_err(|_| perr(line, format!("expected {what}, found `{t}`")))
    };
    let step = num(0, "step number")?;
    let kind = *toks.get(1).ok_or_else(|| perr(line, "missing action kind"))?;
    let (action, used) = match kind {
        "send" => (Action::Send { node: num(2, "node")?, peer_idx: num(3, "peer index")? }, 4),
        "receive" => (Action::Receive { node: num(2, "node")? }, 3),
        "local_scan" => (Action::LocalScan { node: num(2, "node")? }, 3),
        "local_step" => (Action::LocalStep { node: num(2, "node")? }, 3),
        "finish_slot" => (Action::FinishSlot { node: num(2, "node")? }, 3),
        "set_terminated" => {
            if toks.get(2).is_some_and(|t| *t != "-") {
                return Err(perr(line, "set_terminated takes `-` as node"));
            }
            (Action::SetTerminated, 3.min(toks.len()))
        }
        other => return Err(perr(line, format!("unknown action kind `{other}`"))),
    };
    let mut msg = None;
    for extra in &toks[used..] {
        let Some(body) = extra.strip_prefix("msg=") else {
            return Err(perr(line, format!("unexpected token `{extra}`")));
        };
        let parts: Vec<&str> = body.split(',').collect();
        let [s, n, p] = parts.as_slice() else { return Err(perr(line, "msg needs slot,sender,payload")) };
        let bad = |_| perr(line, format!("malformed msg `{body}`"));
        msg = Some(Message::new(s.parse().map_err(bad)?, n.parse().map_err(bad)?, p.parse().map_err(bad)?));
    }
    Ok(TraceStep { step, action, msg })
}

/// Splits a trace file into blocks (one per `# run` header; a file without
/// headers is a single block).
pub fn parse_trace(text: &str) -> Result<Vec<TraceBlock>, ParseError> {
    let mut blocks: Vec<TraceBlock> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(comment) = t.strip_prefix('#') {
            let c = comment.trim();
            if let Some(rest) = c.strip_prefix("run") {
                blocks.push(TraceBlock { header: Some(rest.trim().to_string()), ..TraceBlock::default() });
            } else if c == "cycle" {
                let b = current(&mut blocks);
                b.cycle_start = Some(b.steps.len());
            }
            continue;
        }
        let step = parse_line(line, t)?;
        current(&mut blocks).steps.push(step);
    }
    Ok(blocks)
}

fn current(blocks: &mut Vec<TraceBlock>) -> &mut TraceBlock {
    if blocks.is_empty() {
        blocks.push(TraceBlock::default());
    }
    blocks.last_mut().expect("non-empty")
}

/// Replays a block from `start`, checking every recorded message against the
/// one actually moved. Returns the state after each step's prefix ends
/// (the final state) and, for lassos, the state at the cycle start.
pub fn replay_block(
    start: &GlobalState,
    config: &SystemConfig,
    mode: SemanticsMode,
    block: &TraceBlock,
) -> Result<(GlobalState, Option<GlobalState>), TraceError> {
    let mut state = start.clone();
    let mut at_cycle = None;
    for (idx, s) in block.steps.iter().enumerate() {
        if block.cycle_start == Some(idx) {
            at_cycle = Some(state.clone());
        }
        let actual = moved_message(&state, config, s.action);
        apply_in_place(&mut state, s.action, config, mode)
            .map_err(|source| TraceError::Replay { step: s.step, source })?;
        if let (Some(recorded), Some(actual)) = (s.msg, actual) {
            if recorded != actual {
                return Err(TraceError::MessageMismatch { step: s.step, recorded, actual });
            }
        }
    }
    if block.cycle_start == Some(block.steps.len()) {
        at_cycle = Some(state.clone());
    }
    Ok((state, at_cycle))
}
