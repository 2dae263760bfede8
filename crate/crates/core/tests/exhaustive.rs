mod common;

use common::*;
use tdm_core::checker::{replay, ProtocolAudit};
use tdm_core::model::{Counterexample, Property};
use tdm_core::protocol::is_terminal_success;
use tdm_core::{enabled_actions, explore, CheckOptions, SemanticsMode, SystemConfig};

const MODES: [SemanticsMode; 2] = [SemanticsMode::Reduced, SemanticsMode::Faithful];

fn audit(config: &SystemConfig, mode: SemanticsMode) -> ProtocolAudit {
    let g = explore(config, &CheckOptions::with_mode(mode)).unwrap();
    assert!(g.verdicts().iter().all(|v| v.passed()), "{:?}", g.verdicts());
    g.audit().clone()
}

fn assert_clean(label: &str, config: &SystemConfig, a: &ProtocolAudit) {
    let bound = (config.no_nodes() - 1) * config.no_time_slots();
    assert!(a.max_mailbox_occupancy <= bound, "{label}: occupancy {}", a.max_mailbox_occupancy);
    assert!(a.max_stash_len <= bound, "{label}: stash {}", a.max_stash_len);
    assert_eq!(a.blocked_send_states, 0, "{label}");
    assert_eq!(a.stale_stash_states, 0, "{label}");
    assert_eq!(a.delivery_violation_count, 0, "{label}: {:?}", a.delivery_violations);
}

#[test]
fn small_fixtures_satisfy_protocol_invariants_in_both_modes() {
    for (label, config) in small_valid_fixtures() {
        for mode in MODES {
            let a = audit(&config, mode);
            assert_clean(&label, &config, &a);
            assert!(a.finish_events_checked > 0, "{label}");
        }
    }
}

#[test]
fn four_node_fixtures_satisfy_protocol_invariants() {
    for (label, config) in [("clique 4x1", clique(4, 1)), ("ring 4x2", ring(4, 2)), ("bus 4x2", bus(4, 2))] {
        let a = audit(&config, SemanticsMode::Reduced);
        assert_clean(label, &config, &a);
    }
    let a = audit(&bus(4, 2), SemanticsMode::Faithful);
    assert_clean("bus 4x2 faithful", &bus(4, 2), &a);
}

#[test]
fn modes_agree_on_negative_fixtures() {
    for name in ["asymmetric2x1.sched", "deadpeer2x1.sched", "capacity1_clique3x1.sched"] {
        let config = fixture(name);
        let opts = CheckOptions::default().permissive();
        let reduced = explore(&config, &opts).unwrap();
        let faithful = explore(&config, &CheckOptions { mode: SemanticsMode::Faithful, ..opts }).unwrap();
        for p in Property::ALL {
            assert_eq!(reduced.verdict(p).passed(), faithful.verdict(p).passed(), "{name} {p:?}");
            assert!(!reduced.verdict(p).passed(), "{name} {p:?}");
        }
        assert!(faithful.stats().states >= reduced.stats().states);
    }
}

#[test]
fn witness_traces_replay_to_termination() {
    for (label, config) in small_valid_fixtures() {
        for mode in MODES {
            let opts = CheckOptions::with_mode(mode);
            let g = explore(&config, &opts).unwrap();
            let w = g.witness_trace().unwrap_or_else(|| panic!("{label}: no witness"));
            let end = replay(&config, &opts, &w).unwrap();
            assert!(is_terminal_success(&end), "{label}");
        }
    }
}

#[test]
fn counterexamples_replay_to_stuck_states() {
    for name in ["asymmetric2x1.sched", "deadpeer2x1.sched", "capacity1_clique3x1.sched"] {
        let config = fixture(name);
        for mode in MODES {
            let opts = CheckOptions { mode, ..CheckOptions::default() }.permissive();
            let g = explore(&config, &opts).unwrap();
            for v in g.verdicts() {
                let Some(Counterexample::Deadlock(trace)) = v.counterexample else {
                    panic!("{name}: expected a deadlock for {:?}", v.property)
                };
                let end = replay(&config, &opts, &trace).unwrap();
                assert!(!end.terminated);
                assert!(enabled_actions(&end, &config, mode).is_empty());
            }
        }
    }
}

#[test]
fn payload_values_do_not_change_the_state_space() {
    let a = clique(3, 2);
    let b = SystemConfig::new(a.schedule().clone(), vec![900, 0, 41]).unwrap();
    for mode in MODES {
        let ga = explore(&a, &CheckOptions::with_mode(mode)).unwrap();
        let gb = explore(&b, &CheckOptions::with_mode(mode)).unwrap();
        assert_eq!(ga.stats().states, gb.stats().states);
        assert_eq!(ga.stats().transitions, gb.stats().transitions);
    }
}

#[test]
fn reduced_counts_are_pinned() {
    // regression values, produced by this checker
    for (config, states, transitions) in [
        (clique(2, 1), 13, 17),
        (clique(2, 2), 28, 41),
        (clique(3, 1), 681, 1527),
        (clique(3, 2), 3159, 7911),
        (bus(4, 2), 6180, 18958),
    ] {
        let s = explore(&config, &CheckOptions::default()).unwrap().stats();
        assert_eq!((s.states, s.transitions), (states, transitions));
    }
}

#[test]
fn passing_fixtures_terminate_and_deliver_in_simulation() {
    use tdm_core::simulator::{check_delivery, run_random, RunOutcome, SimOptions};
    let mut fixtures = small_valid_fixtures();
    fixtures.extend([("ring 4x2".to_string(), ring(4, 2)), ("bus 4x2".to_string(), bus(4, 2))]);
    for (label, config) in fixtures {
        for mode in MODES {
            let opts = SimOptions { mode, ..SimOptions::default() };
            for seed in 0..1000 {
                let r = run_random(&config, &opts, seed).unwrap();
                assert_eq!(r.outcome, RunOutcome::Terminated, "{label} {mode:?} seed {seed}");
                assert!(check_delivery(&r, &config).unwrap().is_empty(), "{label} {mode:?} seed {seed}");
            }
        }
    }
}
