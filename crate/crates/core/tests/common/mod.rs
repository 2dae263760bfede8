#![allow(dead_code)]

use std::path::PathBuf;

use tdm_core::model::Payload;
use tdm_core::topology::{gen_bus, gen_clique, gen_ring, parse_schedule};
use tdm_core::{PeerSchedule, SystemConfig};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Loads a schedule file, keeping invalid schedules.
pub fn fixture(name: &str) -> SystemConfig {
    let text = std::fs::read_to_string(fixture_path(name)).unwrap();
    parse_schedule(&text).unwrap().config
}

pub fn seq(n: usize) -> Vec<Payload> {
    (1..=n as Payload).collect()
}

pub fn config(schedule: PeerSchedule, idata: Vec<Payload>) -> SystemConfig {
    SystemConfig::new(schedule, idata).unwrap()
}

pub fn clique(n: usize, k: usize) -> SystemConfig {
    config(gen_clique(n, k).unwrap(), seq(n))
}

pub fn ring(n: usize, k: usize) -> SystemConfig {
    config(gen_ring(n, k).unwrap(), seq(n))
}

pub fn bus(n: usize, k: usize) -> SystemConfig {
    config(gen_bus(n, k).unwrap(), seq(n))
}

pub const SLOT_VARYING: [&str; 3] = ["alternating3x2.sched", "shrinking3x2.sched", "rewired3x2.sched"];

/// Every valid fixture with at most 3 nodes and 2 slots, labelled.
pub fn small_valid_fixtures() -> Vec<(String, SystemConfig)> {
    let mut out = Vec::new();
    for k in 1..=2 {
        for n in 1..=3 {
            out.push((format!("clique {n}x{k}"), clique(n, k)));
        }
        out.push((format!("ring 3x{k}"), ring(3, k)));
        for n in 2..=3 {
            out.push((format!("bus {n}x{k}"), bus(n, k)));
        }
    }
    for name in SLOT_VARYING {
        out.push((name.to_string(), fixture(name)));
    }
    out
}
