//! Solve the same backward equation by least-squares Monte Carlo and compare
//! with the finite-difference backend.
//!
//! Run with: cargo run --release --example solve_lsmc

use nalgebra::DVector;

use bsdebm::chain::RateMatrix;
use bsdebm::claim::TerminalClaim;
use bsdebm::driver::AffineDriver;
use bsdebm::paths::{generate_batch, TimeGrid};
use bsdebm::solver::{
    solve_lsmc, solve_lsmc_estimated, solve_pde, LsmcConfig, PdeConfig, TerminalData, WGrid,
};

fn main() {
    let a = RateMatrix::two_state_symmetric(1.0, 0.5).unwrap();
    let horizon = 1.0;
    let driver = AffineDriver::from_constants(
        &a,
        horizon,
        0.3,
        0.2,
        DVector::from_vec(vec![0.2, -0.1]),
        0.4,
        0.1,
    );
    let claim = TerminalClaim::brownian();

    let batch = generate_batch(&a, 0, &TimeGrid::uniform(horizon, 64), 20_000, 2024);
    let mc = solve_lsmc_estimated(&a, &driver, &claim, &batch, &LsmcConfig::default()).unwrap();
    println!("regression backend ({} paths x {} steps):", batch.n_paths(), batch.grid.n_steps());
    println!("  y0            = {:.5}", mc.report.y0);
    println!("  standard error= {:.2e}", mc.report.std_error.unwrap());
    println!("  scheme error  ~ {:.2e}", mc.report.error_estimate.unwrap());
    println!(
        "  worst regression condition number = {:.1}",
        mc.report.diagnostics.max_condition_number.unwrap()
    );

    let pde = solve_pde(
        &a,
        0,
        &driver,
        &TerminalData::Claim(claim.clone()),
        &TimeGrid::uniform(horizon, 400),
        &PdeConfig::new(WGrid::auto(horizon, 1.0)),
    )
    .unwrap();
    println!("finite differences: y0 = {:.5}", pde.report.y0);
    println!("gap = {:.2e}", (mc.report.y0 - pde.report.y0).abs());

    // With path storage on, the sampled solution processes come back too;
    // the largest per-step martingale residual should sit within noise.
    let stored = solve_lsmc(
        &a,
        &driver,
        &claim,
        &batch,
        &LsmcConfig {
            store_paths: true,
            ..LsmcConfig::default()
        },
    )
    .unwrap();
    let worst = stored
        .report
        .diagnostics
        .step_residuals
        .iter()
        .max_by(|x, y| (x.mean / x.std_error).abs().total_cmp(&(y.mean / y.std_error).abs()))
        .unwrap();
    println!(
        "worst step residual: step {}, mean {:+.2e}, {:.1} standard errors",
        worst.step,
        worst.mean,
        (worst.mean / worst.std_error).abs()
    );
    let sampled = stored.sampled.unwrap();
    println!(
        "sampled processes: Y is {}x{}, Z1 is {}x{}, Z2 has {} per-step state vectors",
        sampled.y.nrows(),
        sampled.y.ncols(),
        sampled.z1.nrows(),
        sampled.z1.ncols(),
        sampled.z2.len()
    );
}
