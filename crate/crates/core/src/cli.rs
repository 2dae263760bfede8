//! Command-line front end.
//!
//! Exit codes: `0` success, `1` a property or run failed, `2` usage or input
//! error, `3` inconclusive (state limit reached).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checker::{explore, CheckError, CheckOptions, DEFAULT_MAX_STATES};
use crate::model::{Counterexample, Payload, SystemConfig};
use crate::protocol::{enabled_actions, SemanticsMode};
use crate::simulator::{check_delivery, run_random, start_state, RunOutcome, SimOptions};
use crate::topology::{gen_bus, gen_clique, gen_ring, parse_schedule, serialize_schedule, ParsedSchedule};
use crate::trace::{format_trace, parse_trace, replay_block};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tdmcheck", version, about = "Model checker and simulator for slot-scheduled TDM peer exchange")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Topology {
    Clique,
    Ring,
    Bus,
}

#[derive(Debug, Clone, Copy, ValueEnum, Default)]
pub enum ModeArg {
    Faithful,
    #[default]
    Reduced,
}

impl From<ModeArg> for SemanticsMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Faithful => SemanticsMode::Faithful,
            ModeArg::Reduced => SemanticsMode::Reduced,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a schedule file for a standard topology.
    Gen {
        #[arg(long, value_enum)]
        topology: Topology,
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        slots: usize,
        /// `seq` (node i sends i+1) or a comma-separated list of values.
        #[arg(long, default_value = "seq", allow_hyphen_values = true)]
        idata: String,
        #[arg(long)]
        capacity: Option<usize>,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check deadlock freedom, reachability of termination, and
    /// always-eventual termination.
    Verify {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Reduced)]
        mode: ModeArg,
        #[arg(long, default_value_t = DEFAULT_MAX_STATES)]
        max_states: usize,
        /// Explore schedules that fail validation.
        #[arg(long)]
        allow_invalid: bool,
        /// Where to write the counterexample when a property fails.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Run seeded random schedules, or replay a trace file.
    Simulate {
        file: PathBuf,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::Reduced)]
        mode: ModeArg,
        #[arg(long)]
        allow_invalid: bool,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Write every run's trace to this file.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Replay the traces in this file instead of sampling.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match cli.command {
        Command::Gen { topology, nodes, slots, idata, capacity, out: path } => {
            cmd_gen(topology, nodes, slots, &idata, capacity, path.as_deref(), out, err)
        }
        Command::Verify { file, mode, max_states, allow_invalid, trace_out } => {
            let opts = CheckOptions { mode: mode.into(), max_states, allow_invalid };
            cmd_verify(&file, &opts, trace_out.as_deref(), out, err)
        }
        Command::Simulate { file, runs, seed, mode, allow_invalid, max_steps, trace_out, replay } => {
            let opts = SimOptions { mode: mode.into(), allow_invalid, max_steps };
            match replay {
                Some(trace) => cmd_replay(&file, &trace, &opts, out, err),
                None => cmd_simulate(&file, runs, seed, &opts, trace_out.as_deref(), out, err),
            }
        }
    }
}

fn parse_idata(arg: &str, nodes: usize) -> Result<Vec<Payload>, String> {
    if arg == "seq" {
        return Ok((1..=nodes as Payload).collect());
    }
    let values = arg
        .split(',')
        .map(|t| t.trim().parse::<Payload>().map_err(|_| format!("bad idata value `{t}`")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != nodes {
        return Err(format!("idata lists {} values for {nodes} nodes", values.len()));
    }
    Ok(values)
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen(
    topology: Topology,
    nodes: usize,
    slots: usize,
    idata: &str,
    capacity: Option<usize>,
    path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let built = (|| -> Result<String, String> {
        let schedule = match topology {
            Topology::Clique => gen_clique(nodes, slots),
            Topology::Ring => gen_ring(nodes, slots),
            Topology::Bus => gen_bus(nodes, slots),
        }
        .map_err(|e| e.to_string())?;
        let idata = parse_idata(idata, nodes)?;
        let mut config = SystemConfig::new(schedule, idata).map_err(|e| e.to_string())?;
        if let Some(c) = capacity {
            config = config.with_capacity(c).map_err(|e| e.to_string())?;
        }
        Ok(serialize_schedule(&config))
    })();
    let text = match built {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    match path {
        Some(p) => {
            if let Err(e) = fs::write(p, text) {
                let _ = writeln!(err, "error: cannot write {}: {e}", p.display());
                return EXIT_USAGE;
            }
        }
        None => {
            let _ = write!(out, "{text}");
        }
    }
    EXIT_OK
}

fn load(path: &Path, allow_invalid: bool, err: &mut dyn Write) -> Result<ParsedSchedule, i32> {
    let text = fs::read_to_string(path).map_err(|e| {
        let _ = writeln!(err, "error: cannot read {}: {e}", path.display());
        EXIT_USAGE
    })?;
    let parsed = parse_schedule(&text).map_err(|e| {
        let _ = writeln!(err, "error: {}:{}: {}", path.display(), e.line, e.message);
        EXIT_USAGE
    })?;
    for w in &parsed.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    if !parsed.is_valid() {
        let level = if allow_invalid { "warning" } else { "error" };
        for v in &parsed.violations {
            let _ = writeln!(err, "{level}: {v}");
        }
        if !allow_invalid {
            let _ = writeln!(err, "error: schedule is invalid; pass --allow-invalid to explore it anyway");
            return Err(EXIT_USAGE);
        }
    }
    Ok(parsed)
}

fn verdict_word(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}

fn cmd_verify(
    path: &Path,
    opts: &CheckOptions,
    trace_out: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let parsed = match load(path, opts.allow_invalid, err) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let config = &parsed.config;
    let mode = opts.mode.name();
    let graph = match explore(config, opts) {
        Ok(g) => g,
        Err(CheckError::MaxStatesExceeded { explored, transitions, limit }) => {
            let _ = writeln!(
                out,
                "RESULT deadlockfree=inconclusive reaches=inconclusive always_eventually=inconclusive states={explored} transitions={transitions} mode={mode}"
            );
            let _ = writeln!(err, "note: state limit {limit} reached");
            return EXIT_INCONCLUSIVE;
        }
        Err(CheckError::Model(e)) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
        Err(e) => {
            let _ = writeln!(err, "error: internal: {e}");
            return EXIT_FAIL;
        }
    };
    let verdicts = graph.verdicts();
    let stats = graph.stats();
    let words: Vec<String> =
        verdicts.iter().map(|v| format!("{}={}", v.property.key(), verdict_word(v.passed()))).collect();
    let _ = writeln!(
        out,
        "RESULT {} states={} transitions={} mode={mode}",
        words.join(" "),
        stats.states,
        stats.transitions
    );

    let audit = graph.audit();
    if audit.delivery_violation_count > 0 {
        for v in &audit.delivery_violations {
            let _ = writeln!(err, "delivery: {v}");
        }
    }

    let Some(failed) = verdicts.iter().find(|v| !v.passed()) else {
        return EXIT_OK;
    };
    let cex = failed.counterexample.as_ref().expect("failed verdict has a counterexample");
    let (actions, cycle_start, kind) = match cex {
        Counterexample::Deadlock(t) => (t.clone(), None, "deadlock"),
        Counterexample::Lasso { stem, .. } => (cex.actions(), Some(stem.len()), "lasso"),
    };
    let _ = writeln!(err, "counterexample for {}: {kind}, {} steps", failed.property.key(), actions.len());
    if let Some(p) = trace_out {
        let start = start_state(config, opts.allow_invalid).expect("explored config has a start state");
        let body = match format_trace(&start, config, opts.mode, &actions, cycle_start) {
            Ok(b) => b,
            Err(e) => {
                let _ = writeln!(err, "error: internal: {e}");
                return EXIT_FAIL;
            }
        };
        let text = format!("# property={} kind={kind} mode={mode}\n{body}", failed.property.key());
        if let Err(e) = fs::write(p, text) {
            let _ = writeln!(err, "error: cannot write {}: {e}", p.display());
            return EXIT_USAGE;
        }
    }
    EXIT_FAIL
}

fn cmd_simulate(
    path: &Path,
    runs: usize,
    seed: u64,
    opts: &SimOptions,
    trace_out: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    if runs == 0 {
        let _ = writeln!(err, "error: --runs must be at least 1");
        return EXIT_USAGE;
    }
    let parsed = match load(path, opts.allow_invalid, err) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let config = &parsed.config;
    let start = match start_state(config, opts.allow_invalid) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let (mut terminated, mut delivered, mut deadlocked, mut limited) = (0, 0, 0, 0);
    let mut traces = String::new();
    for r in 0..runs {
        let s = seed.wrapping_add(r as u64);
        let result = match run_random(config, opts, s) {
            Ok(res) => res,
            Err(e) => {
                let _ = writeln!(err, "error: internal: {e}");
                return EXIT_FAIL;
            }
        };
        let delivery = match result.outcome {
            RunOutcome::Terminated => {
                terminated += 1;
                match check_delivery(&result, config) {
                    Ok(v) if v.is_empty() => {
                        delivered += 1;
                        "ok"
                    }
                    Ok(v) => {
                        for x in v {
                            let _ = writeln!(err, "run {r}: delivery: {x}");
                        }
                        "fail"
                    }
                    Err(e) => {
                        let _ = writeln!(err, "run {r}: {e}");
                        "fail"
                    }
                }
            }
            RunOutcome::Deadlocked => {
                deadlocked += 1;
                "n/a"
            }
            RunOutcome::StepLimit => {
                limited += 1;
                let _ = writeln!(
                    err,
                    "run {r}: step limit hit; no run of a terminating schedule is this long, so this is an internal inconsistency or a livelock"
                );
                "n/a"
            }
        };
        let _ = writeln!(
            out,
            "RUN run={r} seed={s} outcome={} steps={} delivery={delivery}",
            result.outcome,
            result.trace.len()
        );
        if trace_out.is_some() {
            traces.push_str(&format!("# run {r} seed={s} outcome={}\n", result.outcome));
            match format_trace(&start, config, opts.mode, &result.trace, None) {
                Ok(t) => traces.push_str(&t),
                Err(e) => {
                    let _ = writeln!(err, "error: internal: {e}");
                    return EXIT_FAIL;
                }
            }
        }
    }
    let _ = writeln!(
        out,
        "SIM runs={runs} terminated={terminated} delivery_ok={delivered} deadlocked={deadlocked} step_limit={limited} mode={}",
        opts.mode.name()
    );
    if let Some(p) = trace_out {
        if let Err(e) = fs::write(p, traces) {
            let _ = writeln!(err, "error: cannot write {}: {e}", p.display());
            return EXIT_USAGE;
        }
    }
    if terminated == runs && delivered == runs {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

fn cmd_replay(path: &Path, trace: &Path, opts: &SimOptions, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let parsed = match load(path, opts.allow_invalid, err) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let config = &parsed.config;
    let text = match fs::read_to_string(trace) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read {}: {e}", trace.display());
            return EXIT_USAGE;
        }
    };
    let blocks = match parse_trace(&text) {
        Ok(b) => b,
        Err(e) => {
            let _ = writeln!(err, "error: {}:{}: {}", trace.display(), e.line, e.message);
            return EXIT_USAGE;
        }
    };
    let start = match start_state(config, opts.allow_invalid) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let mut code = EXIT_OK;
    for (i, block) in blocks.iter().enumerate() {
        match replay_block(&start, config, opts.mode, block) {
            Ok((end, at_cycle)) => {
                let outcome = if end.terminated {
                    "terminated"
                } else if enabled_actions(&end, config, opts.mode).is_empty() {
                    "deadlocked"
                } else {
                    "open"
                };
                let cycle = match at_cycle {
                    Some(c) if c == end => " cycle=closed",
                    Some(_) => {
                        code = EXIT_FAIL;
                        " cycle=open"
                    }
                    None => "",
                };
                let _ = writeln!(out, "REPLAY block={i} steps={} outcome={outcome}{cycle}", block.steps.len());
            }
            Err(e) => {
                let _ = writeln!(out, "REPLAY block={i} steps={} outcome=rejected", block.steps.len());
                let _ = writeln!(err, "block {i}: {e}");
                code = EXIT_FAIL;
            }
        }
    }
    code
}
