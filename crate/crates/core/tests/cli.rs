mod common;

use std::fs;
use std::process::{Command, Output};

use common::{fixture_path, golden_path};
use tdm_core::simulator::start_state;
use tdm_core::topology::parse_schedule;
use tdm_core::trace::{parse_trace, replay_block};
use tdm_core::{enabled_actions, SemanticsMode};

fn tdmcheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdmcheck")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn fx(name: &str) -> String {
    fixture_path(name).to_str().unwrap().to_string()
}

#[test]
fn gen_writes_the_clique_fixture() {
    let o = tdmcheck(&["gen", "--topology", "clique", "--nodes", "3", "--slots", "2", "--idata", "10,20,30"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), fs::read_to_string(fixture_path("clique3x2.sched")).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ring.sched");
    let o = tdmcheck(&["gen", "--topology", "ring", "--nodes", "4", "--slots", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let parsed = parse_schedule(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(parsed.is_valid());
    assert_eq!(parsed.config.idata(), &[1, 2, 3, 4]);
}

#[test]
fn gen_rejects_bad_arguments() {
    for args in [
        &["gen", "--topology", "ring", "--nodes", "2", "--slots", "1"][..],
        &["gen", "--topology", "clique", "--nodes", "3", "--slots", "1", "--idata", "1,2"],
        &["gen", "--topology", "clique", "--nodes", "3", "--slots", "1", "--idata", "1,2,-4"],
        &["gen", "--topology", "clique", "--nodes", "3", "--slots", "1", "--capacity", "0"],
        &["gen", "--topology", "star", "--nodes", "3", "--slots", "1"],
    ] {
        let o = tdmcheck(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).contains("error"), "{args:?}");
    }
}

#[test]
fn verify_clique_matches_golden() {
    let o = tdmcheck(&["verify", &fx("clique3x2.sched")]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), fs::read_to_string(golden_path("clique3x2_verify.txt")).unwrap());
}

#[test]
fn verify_capacity_one_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("cex.trace");
    let o = tdmcheck(&["verify", &fx("capacity1_clique3x1.sched"), "--trace-out", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o), fs::read_to_string(golden_path("capacity1_clique3x1_verify.txt")).unwrap());
    let written = fs::read_to_string(&trace).unwrap();
    assert_eq!(written, fs::read_to_string(golden_path("capacity1_clique3x1.trace")).unwrap());
}

#[test]
fn invalid_schedule_needs_allow_invalid() {
    let o = tdmcheck(&["verify", &fx("asymmetric2x1.sched")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("asymmetric link (0,1,0)"));
    assert!(stdout(&o).is_empty());

    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("asym.trace");
    let o =
        tdmcheck(&["verify", &fx("asymmetric2x1.sched"), "--allow-invalid", "--trace-out", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("RESULT deadlockfree=fail reaches=fail always_eventually=fail "));
    assert_eq!(fs::read_to_string(&trace).unwrap(), fs::read_to_string(golden_path("asymmetric2x1.trace")).unwrap());

    let o = tdmcheck(&["simulate", &fx("asymmetric2x1.sched")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_reports_inconclusive_at_the_state_limit() {
    let o = tdmcheck(&["verify", &fx("clique3x2.sched"), "--max-states", "100"]);
    assert_eq!(o.status.code(), Some(3));
    let out = stdout(&o);
    assert!(out.starts_with("RESULT deadlockfree=inconclusive reaches=inconclusive always_eventually=inconclusive "));
    assert!(out.trim_end().ends_with("mode=reduced"));
}

#[test]
fn verify_reports_missing_and_malformed_files() {
    let o = tdmcheck(&["verify", "/nonexistent/x.sched"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sched");
    fs::write(&bad, "nodes 2\nslots 1\nidata 1 2\nslot 0\nedge 0 5\n").unwrap();
    let o = tdmcheck(&["verify", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":5:"), "{}", stderr(&o));
}

#[test]
fn simulate_summarizes_runs() {
    let o = tdmcheck(&["simulate", &fx("clique3x2.sched"), "--runs", "20", "--seed", "7", "--mode", "faithful"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 21);
    assert!(lines[0].starts_with("RUN run=0 seed=7 outcome=terminated steps="));
    assert!(lines[19].starts_with("RUN run=19 seed=26 "));
    assert!(lines.iter().take(20).all(|l| l.ends_with("delivery=ok")));
    assert_eq!(lines[20], "SIM runs=20 terminated=20 delivery_ok=20 deadlocked=0 step_limit=0 mode=faithful");
    assert_eq!(tdmcheck(&["simulate", &fx("clique3x2.sched"), "--runs", "0"]).status.code(), Some(2));
}

#[test]
fn simulate_counts_deadlocks() {
    let o = tdmcheck(&["simulate", &fx("deadpeer2x1.sched"), "--runs", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).ends_with("SIM runs=5 terminated=0 delivery_ok=0 deadlocked=5 step_limit=0 mode=reduced\n"));
    assert!(stderr(&o).contains("idata -1"));
}

#[test]
fn simulated_traces_replay() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("runs.trace");
    let sched = fx("clique3x2.sched");
    for mode in ["reduced", "faithful"] {
        let o = tdmcheck(&[
            "simulate",
            &sched,
            "--runs",
            "3",
            "--seed",
            "11",
            "--mode",
            mode,
            "--trace-out",
            trace.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let text = fs::read_to_string(&trace).unwrap();
        let m: SemanticsMode = mode.parse().unwrap();
        let config = parse_schedule(&fs::read_to_string(fixture_path("clique3x2.sched")).unwrap()).unwrap().config;
        let blocks = parse_trace(&text).unwrap();
        assert_eq!(blocks.len(), 3);
        for b in &blocks {
            let (end, _) = replay_block(&start_state(&config, false).unwrap(), &config, m, b).unwrap();
            assert!(end.terminated);
        }
        let o = tdmcheck(&["simulate", &sched, "--mode", mode, "--replay", trace.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        assert_eq!(out.lines().count(), 3);
        assert!(out.lines().all(|l| l.ends_with("outcome=terminated")), "{out}");
    }
}

#[test]
fn replay_of_a_deadlock_trace_ends_stuck() {
    let o = tdmcheck(&[
        "simulate",
        &fx("capacity1_clique3x1.sched"),
        "--replay",
        golden_path("capacity1_clique3x1.trace").to_str().unwrap(),
    ]);
    assert_eq!(stdout(&o), "REPLAY block=0 steps=2 outcome=deadlocked\n");
    let config = common::fixture("capacity1_clique3x1.sched");
    let blocks = parse_trace(&fs::read_to_string(golden_path("capacity1_clique3x1.trace")).unwrap()).unwrap();
    let (end, _) =
        replay_block(&start_state(&config, false).unwrap(), &config, SemanticsMode::Reduced, &blocks[0]).unwrap();
    assert!(enabled_actions(&end, &config, SemanticsMode::Reduced).is_empty());
}

#[test]
fn replay_rejects_a_tampered_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.trace");
    fs::write(&trace, "0 send 0 0 msg=0,0,99\n").unwrap();
    let o = tdmcheck(&["simulate", &fx("clique3x2.sched"), "--replay", trace.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("msg=0,0,99"), "{}", stderr(&o));
}

#[test]
fn help_and_usage_errors() {
    let o = tdmcheck(&["--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("verify"));
    assert_eq!(tdmcheck(&["verify"]).status.code(), Some(2));
    assert_eq!(tdmcheck(&["frobnicate"]).status.code(), Some(2));
}
