//! Order preservation: raising the terminal claim or the driver of a
//! backward equation raises the whole solution surface. The harness first
//! verifies the ordering premises, then checks the surfaces pointwise.
//!
//! Run with: cargo run --release --example comparison

use std::sync::Arc;

use bsdebm::chain::RateMatrix;
use bsdebm::claim::TerminalClaim;
use bsdebm::driver::{BrownianAmbiguityDriver, OffsetDriver, StandardPair};
use bsdebm::paths::TimeGrid;
use bsdebm::solver::{compare_solutions, CompareConfig, CompareError, PdeConfig, WGrid};

fn main() {
    let a = RateMatrix::two_state_symmetric(1.0, 0.5).unwrap();
    let time = TimeGrid::uniform(0.5, 64);
    let pde = PdeConfig::new(WGrid::new(6.0, 121).unwrap());
    let config = CompareConfig::default();

    let base: Arc<dyn bsdebm::driver::Driver> = Arc::new(BrownianAmbiguityDriver::new(0.2));
    let claim = TerminalClaim::brownian();

    // Dominating pair: claim shifted up by 0.3 and driver offset by +0.1.
    let high = StandardPair::new(
        Arc::new(OffsetDriver::new(base.clone(), 0.1)),
        claim.shifted(0.3),
    );
    let low = StandardPair::new(base.clone(), claim.clone());
    let report = compare_solutions(&high, &low, &a, 0, &time, &pde, &config).unwrap();
    println!("claim + 0.3, driver + 0.1 versus the base pair:");
    println!("  value gap at (0, 0): {:.4}", report.y0_margin);
    println!(
        "  worst margin over the whole surface: {:+.3e} at t-index {}, state {}, node {} (tolerance {:.1e})",
        report.min_margin, report.worst.time_index, report.worst.state, report.worst.space_index, report.tol
    );

    // Identical pairs: the margin is exactly zero.
    let same = compare_solutions(&low, &low, &a, 0, &time, &pde, &config).unwrap();
    println!("identical pairs: worst margin = {:+.1e}", same.min_margin);

    // A claim shifted the wrong way fails the terminal-order premise; the
    // harness refuses to draw any conclusion from the surfaces.
    let lowered = StandardPair::new(base.clone(), claim.shifted(-0.2));
    match compare_solutions(&lowered, &low, &a, 0, &time, &pde, &config) {
        Err(CompareError::PremiseViolated { which, detail }) => {
            println!("claim - 0.2 versus base: rejected ({which}): {detail}");
        }
        other => println!("unexpected outcome: {other:?}"),
    }
}
