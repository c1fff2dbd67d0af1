use gps_core::acceptance::{run, Outcome};
use std::sync::Mutex;

// Timing criteria need the machine to themselves.
static SERIAL: Mutex<()> = Mutex::new(());

fn check(id: u32) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let outcome: Outcome = run(id).unwrap_or_else(|e| panic!("criterion {id} errored: {e}"));
    println!("{outcome}");
    eprintln!("{outcome}");
    assert!(outcome.passed, "{outcome}");
}

#[test]
fn criterion_01_dp_oracle_equivalence() {
    check(1);
}

#[test]
fn criterion_02_hitting_identity_by_simulation() {
    check(2);
}

#[test]
fn criterion_03_finite_size_free_energy() {
    check(3);
}

#[test]
fn criterion_04_big_jump_hitting_asymptotics() {
    check(4);
}

#[test]
fn criterion_05_condensation_paths() {
    check(5);
}

#[test]
fn criterion_06_mixed_event_branch() {
    check(6);
}

#[test]
fn criterion_07_big_jump_gaussian_crossover() {
    check(7);
}

#[test]
fn criterion_08_scaling_sequences() {
    check(8);
}

#[test]
fn criterion_09_dp_performance() {
    check(9);
}

#[test]
fn criterion_10_sampler_goodness_of_fit() {
    check(10);
}
