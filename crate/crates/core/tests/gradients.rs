//! Analytic gradients against central finite differences.

use nst_testkit::suites::{end_to_end_gradient_cases, op_gradient_cases, Case};

fn assert_all(cases: &[Case]) {
    let failures: Vec<String> = cases
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{}: {:e} > {:e}", c.name, c.error, c.tolerance))
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn every_op_matches_finite_differences() {
    for seed in [1, 2, 3] {
        assert_all(&op_gradient_cases(seed));
    }
}

#[test]
fn total_objective_matches_finite_differences() {
    assert_all(&end_to_end_gradient_cases());
}
