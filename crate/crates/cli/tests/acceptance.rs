//! Acceptance criteria at full scale. Each test prints one PASS/FAIL line and
//! asserts both the numeric verdict and the stated runtime budget.

use std::sync::{Mutex, MutexGuard, OnceLock};

use harvest_cli::suite::{self, CriterionOutcome};

/// Criteria are timed, so they must not share the machine with each other.
static SERIAL: Mutex<()> = Mutex::new(());

static C2: OnceLock<CriterionOutcome> = OnceLock::new();
static C3: OnceLock<CriterionOutcome> = OnceLock::new();
static C4: OnceLock<CriterionOutcome> = OnceLock::new();

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn check(c: &CriterionOutcome) {
    println!("{}", c.line());
    assert!(c.pass, "criterion {} ({}) failed: {}", c.id, c.name, c.detail);
    assert!(
        c.within_budget(),
        "criterion {} ({}) took {:.1}s, budget {:?}s",
        c.id,
        c.name,
        c.runtime_s,
        c.budget_s
    );
}

fn memo(cell: &'static OnceLock<CriterionOutcome>, run: fn(usize) -> CriterionOutcome) -> &'static CriterionOutcome {
    cell.get_or_init(|| run(threads()))
}

#[test]
fn criterion_1_case_1_exact_value() {
    let _g = serial();
    check(&suite::criterion1(threads()));
}

#[test]
fn criterion_2_case_2_oracle() {
    let _g = serial();
    check(memo(&C2, suite::criterion2));
}

#[test]
fn criterion_3_barrier_oracle() {
    let _g = serial();
    check(memo(&C3, suite::criterion3));
}

#[test]
fn criterion_4_chattering_trend() {
    let _g = serial();
    check(memo(&C4, suite::criterion4));
}

#[test]
fn criterion_5_qvi_residuals() {
    let _g = serial();
    check(&suite::criterion5(threads()));
}

#[test]
fn criterion_6_quartic_roots() {
    let _g = serial();
    check(&suite::criterion6(threads()));
}

#[test]
fn criterion_7_case_3_unboundedness() {
    let _g = serial();
    check(&suite::criterion7(threads()));
}

#[test]
fn criterion_8_determinism() {
    let _g = serial();
    let first = [memo(&C2, suite::criterion2), memo(&C3, suite::criterion3), memo(&C4, suite::criterion4)];
    check(&suite::criterion8(&first, suite::other_thread_count(threads())));
}
