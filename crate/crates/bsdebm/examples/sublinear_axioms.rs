//! The numerical axiom checks behind a conditional sublinear expectation:
//! monotone, constant-preserving, time-consistent, local on chain events,
//! subadditive, and positively homogeneous.
//!
//! Run with: cargo run --release --example sublinear_axioms

use bsdebm::chain::RateMatrix;
use bsdebm::claim::TerminalClaim;
use bsdebm::paths::TimeGrid;
use bsdebm::pricing::{axiom_suite, sublinear_expectation, PricingBackend, SublinearSpec};
use bsdebm::solver::{PdeConfig, WGrid};

fn main() {
    let a = RateMatrix::two_state_symmetric(1.0, 0.5).unwrap();
    let spec = SublinearSpec::brownian_ambiguity(0.2, &a).unwrap();
    let backend = PricingBackend::pde(
        TimeGrid::uniform(1.0, 64),
        PdeConfig::new(WGrid::auto(1.0, 1.0)),
    );

    // The operator evaluated at an intermediate time is a function of the
    // state (w, chain state); a slice at t = 0.5 for the claim W_T^2.
    let slice = sublinear_expectation(
        &spec,
        &TerminalClaim::brownian_squared(),
        0.5,
        &a,
        0,
        &backend,
    )
    .unwrap();
    println!("E(W_T^2 | t = 0.5) on a few grid points:");
    for &w in &[-1.0, 0.0, 1.0] {
        println!(
            "  w = {w:+.1}: state 0 -> {:.4}, state 1 -> {:.4}",
            slice.value_at(0, w),
            slice.value_at(1, w)
        );
    }

    // The axiom battery over a family of claims.
    let brownian = TerminalClaim::brownian();
    let claims = vec![
        brownian.clone(),
        -&brownian,
        TerminalClaim::brownian_squared(),
        TerminalClaim::state_indicator(1),
        TerminalClaim::constant(-0.5),
        TerminalClaim::constant(1.0),
    ];
    let report = axiom_suite(&spec, &claims, &a, 0, &backend).unwrap();
    println!("{}", report.summary());
    for check in &report.checks {
        println!(
            "  [{}] {:<22} {:<9} lhs = {:+.5}  rhs = {:+.5}  tol = {:.1e}  ({})",
            if check.passed { "ok" } else { "XX" },
            format!("{}", check.axiom),
            format!("{:?}", check.relation),
            check.lhs,
            check.rhs,
            check.tolerance,
            check.witness
        );
    }
}
