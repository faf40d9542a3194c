//! Invariant suites at reduced size; the acceptance target runs them at full size.

use witchcraft::selftest::{
    degenerate_equivalence_suite, feasibility_suite, gradient_check_suite, linear_oracle_suite,
};

#[test]
fn gradients_match_finite_differences() {
    let out = gradient_check_suite(12, 3, 1e-4);
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn attacks_reach_linear_optimum() {
    let out = linear_oracle_suite(8, 5, 0.1, 1e-6);
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn degenerate_field_is_bit_identical_to_pgd() {
    let out = degenerate_equivalence_suite(3, 20, 7);
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn every_iterate_is_feasible() {
    let out = feasibility_suite(2_000, 11);
    assert!(out.passed, "{}", out.detail);
}
