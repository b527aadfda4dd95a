//! Acceptance criteria at full scale, seed 1. Each test prints its pass/fail line to stderr
//! unbuffered so it lands in the test log even when output is captured.

use std::io::Write;

use driftbound_cli::config::ValidationScale;
use driftbound_cli::validation::{run_criterion, CriterionResult};

const SEED: u64 = 1;

fn report(c: &CriterionResult) {
    let mut text = format!("{}\n", c.line());
    for check in &c.checks {
        text += &format!(
            "    {} {}: {} {} {:e}\n",
            if check.pass { "ok  " } else { "FAIL" },
            check.name,
            check.measured.map_or("n/a".to_string(), |m| format!("{m:e}")),
            serde_json::to_value(check.relation).unwrap().as_str().unwrap(),
            check.threshold
        );
    }
    for d in &c.details {
        text += &format!("    | {d}\n");
    }
    std::io::stderr().write_all(text.as_bytes()).unwrap();
}

fn criterion(id: u32) {
    let c = run_criterion(id, SEED, ValidationScale::Full);
    report(&c);
    assert!(c.pass, "{}", c.line());
}

#[test]
fn criterion_01_drift_moment() {
    criterion(1);
}

#[test]
fn criterion_02_drift_inequality() {
    criterion(2);
}

#[test]
fn criterion_03_flat_in_n() {
    criterion(3);
}

#[test]
fn criterion_04_bound_dominates_tv() {
    criterion(4);
}

#[test]
fn criterion_05_exit_tail() {
    criterion(5);
}

#[test]
fn criterion_06_posterior_functional() {
    criterion(6);
}

#[test]
fn criterion_07_constructions() {
    criterion(7);
}

#[test]
fn criterion_08_identities() {
    criterion(8);
}

#[test]
fn criterion_09_minorization() {
    criterion(9);
}

#[test]
fn criterion_10_reproducibility() {
    criterion(10);
}
