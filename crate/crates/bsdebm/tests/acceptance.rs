//! End-to-end acceptance checks, one test per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! pass/fail line and timing for each criterion.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use bsdebm::chain::{
    count_jumps, integrated_psi, martingale_increments, simulate_chain, RateMatrix,
};
use bsdebm::claim::TerminalClaim;
use bsdebm::driver::{standard_library, OffsetDriver, StandardPair};
use bsdebm::oracle::linear_bsde_mc;
use bsdebm::paths::{generate_batch, stream_rng, TimeGrid};
use bsdebm::pricing::{
    axiom_suite, quote, supremum_crosscheck, Axiom, PricingBackend, SublinearSpec,
};
use bsdebm::solver::{
    compare_solutions, picard_pde, solve_lsmc_estimated, solve_pde, solve_pde_estimated,
    CompareConfig, CompareError, LsmcConfig, PdeConfig, PicardConfig, TerminalData, WGrid,
};

fn criterion<F>(n: usize, name: &str, budget_secs: f64, f: F)
where
    F: FnOnce() -> Result<(), String>,
{
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed().as_secs_f64();
    match outcome {
        Ok(()) => {
            println!("acceptance {n} {name}: PASS ({elapsed:.1}s)");
            assert!(
                elapsed < budget_secs,
                "criterion {n} exceeded its {budget_secs}s budget: {elapsed:.1}s"
            );
        }
        Err(msg) => {
            println!("acceptance {n} {name}: FAIL — {msg}");
            panic!("criterion {n} ({name}): {msg}");
        }
    }
}

macro_rules! check {
    ($cond:expr, $($fmt:tt)*) => {
        if !($cond) {
            return Err(format!($($fmt)*));
        }
    };
}

fn two_state() -> RateMatrix {
    RateMatrix::two_state_symmetric(1.0, 0.5).unwrap()
}

fn random_generator(n: usize, c: f64, rng: &mut impl Rng) -> RateMatrix {
    let mut e = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut exit = 0.0;
        for j in 0..n {
            if j != i {
                // Strictly inside the [c, 1/c] band, clear of its tolerance.
                let r = rng.gen_range(1.5 * c..0.6 / c);
                e[(j, i)] = r;
                exit += r;
            }
        }
        e[(i, i)] = -exit;
    }
    RateMatrix::new(e, c).expect("constructed inside the band")
}

fn mean_se(sum: f64, sq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

#[test]
fn criterion_1_psi_algebra() {
    criterion(1, "quadratic-variation algebra", 10.0, || {
        let mut rng = stream_rng(0xACCE97, 0, 1);
        for trial in 0..1000 {
            let n = 2 + (trial % 5);
            let a = random_generator(n, 0.3, &mut rng);
            let ones = DVector::from_element(n, 1.0);
            for i in 0..n {
                let psi = a.psi(i);
                let m = psi.matrix();
                let sym = (m - m.transpose()).amax();
                check!(sym <= 1e-12, "trial {trial} state {i}: asymmetry {sym:.3e}");
                let min_eig = psi.eigenvalues()[0];
                check!(
                    min_eig >= -1e-10,
                    "trial {trial} state {i}: min eigenvalue {min_eig:.3e}"
                );
                let kernel = (m * &ones).amax();
                check!(
                    kernel <= 1e-10,
                    "trial {trial} state {i}: |psi 1| = {kernel:.3e}"
                );
                for j in 0..n {
                    let col = (a.psi_column(i, j) - m.column(j)).amax();
                    check!(
                        col <= 1e-12,
                        "trial {trial} state {i} column {j}: mismatch {col:.3e}"
                    );
                }
                let p = psi.pinv();
                let resid = (m * &p * m - m).amax();
                check!(
                    resid <= 1e-10,
                    "trial {trial} state {i}: |psi psi+ psi - psi| = {resid:.3e}"
                );
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_2_compensators() {
    criterion(2, "jump compensators", 30.0, || {
        let a = two_state();
        let n_paths = 100_000u64;
        // Per path: the 0 -> 1 jump count and all compensated counts.
        let stats: Vec<(f64, [f64; 4])> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(0xACCE97, i, 2);
                let path = simulate_chain(&a, 0, 1.0, &mut rng);
                let jumps = count_jumps(&path, &a);
                let mut m = [0.0; 4];
                for (k, (from, to)) in [(0, 1), (1, 0), (0, 0), (1, 1)].iter().enumerate() {
                    m[k] = jumps.counts[(*from, *to)] as f64 - jumps.compensators[(*from, *to)];
                }
                (jumps.counts[(0, 1)] as f64, m)
            })
            .collect();
        let nf = n_paths as f64;
        let (sum, sq) = stats
            .iter()
            .fold((0.0, 0.0), |(s, q), (v, _)| (s + v, q + v * v));
        let (mean, se) = mean_se(sum, sq, nf);
        let expected = 0.5 + (1.0 - (-2.0f64).exp()) / 4.0;
        check!(
            (mean - expected).abs() <= 3.0 * se,
            "N(0->1) mean {mean:.6} vs {expected:.6} (se {se:.2e})"
        );
        for k in 0..2 {
            let (sum, sq) = stats
                .iter()
                .fold((0.0, 0.0), |(s, q), (_, m)| (s + m[k], q + m[k] * m[k]));
            let (mean, se) = mean_se(sum, sq, nf);
            check!(
                mean.abs() <= 3.0 * se,
                "compensated count {k}: mean {mean:.2e} (se {se:.2e})"
            );
        }
        Ok(())
    });
}

#[test]
fn criterion_3_quadratic_variation() {
    criterion(3, "quadratic-variation identity", 60.0, || {
        let a = two_state();
        let grid = TimeGrid::uniform(1.0, 1);
        let n_paths = 100_000u64;
        let diffs: Vec<DMatrix<f64>> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(0xACCE97, i, 3);
                let path = simulate_chain(&a, 0, 1.0, &mut rng);
                let m_t = &martingale_increments(&path, &a, &grid)[0];
                m_t * m_t.transpose() - integrated_psi(&path, &a)
            })
            .collect();
        let nf = n_paths as f64;
        for i in 0..2 {
            for j in 0..2 {
                let (sum, sq) = diffs
                    .iter()
                    .fold((0.0, 0.0), |(s, q), d| (s + d[(i, j)], q + d[(i, j)] * d[(i, j)]));
                let (mean, se) = mean_se(sum, sq, nf);
                check!(
                    mean.abs() <= 4.0 * se,
                    "entry ({i},{j}): |mean| {:.3e} > 4 se {se:.3e}",
                    mean.abs()
                );
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_4_linear_solver_vs_oracle() {
    criterion(4, "affine drivers vs closed form", 300.0, || {
        let a = two_state();
        let horizon = 1.0;
        let claim = TerminalClaim::brownian();
        let batch = generate_batch(&a, 0, &TimeGrid::uniform(horizon, 32), 6000, 0x0AC1E4);
        let time = TimeGrid::uniform(horizon, 200);
        let pde = PdeConfig::new(WGrid::auto(horizon, 1.0));
        let mut rng = stream_rng(0xACCE97, 0, 4);
        for trial in 0..10 {
            let rho = rng.gen_range(-0.5..0.5);
            let alpha = rng.gen_range(-0.5..0.5);
            let gamma = rng.gen_range(-0.5..0.5);
            let phi = rng.gen_range(-0.5..0.5);
            let base = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
            let driver = bsdebm::driver::AffineDriver::from_constants(
                &a, horizon, rho, alpha, base, gamma, phi,
            );
            let oracle = linear_bsde_mc(driver.spec(), &claim, &a, &batch);
            check!(
                oracle.warnings.is_clean(),
                "trial {trial}: oracle warnings {:?}",
                oracle.warnings
            );

            let sol = solve_pde_estimated(
                &a,
                0,
                &driver,
                &TerminalData::Claim(claim.clone()),
                &time,
                &pde,
            )
            .map_err(|e| format!("trial {trial} pde: {e}"))?;
            let sch = sol.report.error_estimate.unwrap_or(0.0);
            let gap = (sol.report.y0 - oracle.value).abs();
            check!(
                gap <= 3.0 * oracle.std_error + sch,
                "trial {trial} pde: |{:.5} - {:.5}| = {gap:.2e} > 3 se + {sch:.2e}",
                sol.report.y0,
                oracle.value
            );

            let mc = solve_lsmc_estimated(&a, &driver, &claim, &batch, &LsmcConfig::default())
                .map_err(|e| format!("trial {trial} lsmc: {e}"))?;
            let se = mc.report.std_error.unwrap_or(0.0) + oracle.std_error;
            let sch = mc.report.error_estimate.unwrap_or(0.0);
            let gap = (mc.report.y0 - oracle.value).abs();
            check!(
                gap <= 3.0 * se + sch,
                "trial {trial} lsmc: |{:.5} - {:.5}| = {gap:.2e} > {:.2e}",
                mc.report.y0,
                oracle.value,
                3.0 * se + sch
            );
        }

        // Analytic anchors: pure-discount growth and the gradient-only drift.
        let fine = TimeGrid::uniform(1.0, 1000);
        let growth = solve_pde(
            &a,
            0,
            &bsdebm::driver::AffineDriver::from_constants(
                &a,
                1.0,
                0.5,
                0.0,
                DVector::zeros(2),
                0.0,
                0.0,
            ),
            &TerminalData::Claim(TerminalClaim::constant(1.0)),
            &fine,
            &pde,
        )
        .map_err(|e| format!("growth case: {e}"))?;
        let target = 0.5f64.exp();
        check!(
            (growth.report.y0 - target).abs() <= 1e-3,
            "exp growth: {:.6} vs {target:.6}",
            growth.report.y0
        );

        let drift = solve_pde(
            &a,
            0,
            &bsdebm::driver::AffineDriver::from_constants(
                &a,
                1.0,
                0.0,
                0.3,
                DVector::zeros(2),
                0.0,
                0.0,
            ),
            &TerminalData::Claim(TerminalClaim::brownian()),
            &TimeGrid::uniform(1.0, 100),
            &pde,
        )
        .map_err(|e| format!("drift case: {e}"))?;
        check!(
            (drift.report.y0 - 0.3).abs() <= 1e-9,
            "gradient drift: {:.12} vs 0.3",
            drift.report.y0
        );
        Ok(())
    });
}

#[test]
fn criterion_5_backend_agreement() {
    criterion(5, "state-indicator price on both backends", 120.0, || {
        let a = two_state();
        let claim = TerminalClaim::state_indicator(1);
        let driver = bsdebm::driver::ZeroDriver;
        let expected = (1.0 - (-2.0f64).exp()) / 2.0;

        let pde = solve_pde(
            &a,
            0,
            &driver,
            &TerminalData::Claim(claim.clone()),
            &TimeGrid::uniform(1.0, 1000),
            &PdeConfig::new(WGrid::auto(1.0, 1.0)),
        )
        .map_err(|e| format!("pde: {e}"))?;
        check!(
            (pde.report.y0 - expected).abs() <= 2e-3,
            "pde: {:.6} vs {expected:.6}",
            pde.report.y0
        );

        let batch = generate_batch(&a, 0, &TimeGrid::uniform(1.0, 64), 20_000, 0x0AC1E5);
        let mc = solve_lsmc_estimated(&a, &driver, &claim, &batch, &LsmcConfig::default())
            .map_err(|e| format!("lsmc: {e}"))?;
        let tol = 3.0 * mc.report.std_error.unwrap_or(0.0)
            + mc.report.error_estimate.unwrap_or(0.0);
        check!(
            (mc.report.y0 - expected).abs() <= tol,
            "lsmc: {:.6} vs {expected:.6} (tol {tol:.2e})",
            mc.report.y0
        );
        Ok(())
    });
}

#[test]
fn criterion_6_picard_contraction() {
    criterion(6, "refinement contraction on the driver library", 120.0, || {
        let a = two_state();
        let horizon = 0.5;
        let time = TimeGrid::uniform(horizon, 64);
        let pde = PdeConfig::new(WGrid::auto(horizon, 1.0));
        let picard = PicardConfig {
            tol: 1e-8,
            max_iter: 20,
            ..PicardConfig::default()
        };
        for driver in standard_library(&a, horizon) {
            let sol = picard_pde(
                &a,
                0,
                &*driver,
                &TerminalData::Claim(TerminalClaim::brownian()),
                &time,
                &pde,
                &picard,
            )
            .map_err(|e| format!("{}: {e}", driver.name()))?;
            let deltas = &sol.report.picard_deltas;
            check!(
                deltas.len() <= 20,
                "{}: {} refinements",
                driver.name(),
                deltas.len()
            );
            for i in 1..deltas.len().saturating_sub(1) {
                check!(
                    deltas[i + 1] <= deltas[i],
                    "{}: delta {} -> {} rose ({:.3e} -> {:.3e})",
                    driver.name(),
                    i + 1,
                    i + 2,
                    deltas[i],
                    deltas[i + 1]
                );
            }
            if let Some(r) = sol.report.contraction_ratio {
                check!(r < 1.0, "{}: contraction ratio {r:.3}", driver.name());
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_7_comparison_harness() {
    criterion(7, "order preservation over randomized pairs", 300.0, || {
        let a = two_state();
        let horizon = 0.5;
        let time = TimeGrid::uniform(horizon, 32);
        let pde = PdeConfig::new(WGrid::new(6.0, 61).map_err(|e| e.to_string())?);
        let compare_cfg = CompareConfig::default();
        let library = standard_library(&a, horizon);
        let claims = [
            TerminalClaim::brownian(),
            TerminalClaim::constant(0.4),
            TerminalClaim::state_indicator(1),
            TerminalClaim::call(0.2),
        ];
        let mut rng = stream_rng(0xACCE97, 0, 7);
        for trial in 0..200 {
            let base = library[trial % library.len()].clone();
            let claim = &claims[trial % claims.len()];
            let df: f64 = rng.gen_range(0.0..0.4);
            let dq: f64 = rng.gen_range(0.0..0.5);
            let pair1 = StandardPair::new(
                Arc::new(OffsetDriver::new(base.clone(), df)),
                claim.shifted(dq),
            );
            let pair2 = StandardPair::new(base, claim.clone());
            let report =
                compare_solutions(&pair1, &pair2, &a, 0, &time, &pde, &compare_cfg)
                    .map_err(|e| format!("trial {trial}: {e}"))?;
            check!(
                report.min_margin >= -report.tol,
                "trial {trial}: margin {:.3e} below -{:.3e}",
                report.min_margin,
                report.tol
            );
        }

        // Premise violations must be rejected, not silently compared.
        let base = library[2].clone();
        let claim = TerminalClaim::brownian();
        let bad_terminal = StandardPair::new(base.clone(), claim.shifted(-0.5));
        match compare_solutions(
            &bad_terminal,
            &StandardPair::new(base.clone(), claim.clone()),
            &a,
            0,
            &time,
            &pde,
            &compare_cfg,
        ) {
            Err(CompareError::PremiseViolated { .. }) => {}
            other => return Err(format!("lowered terminal accepted: {other:?}")),
        }
        let bad_driver = StandardPair::new(base.clone(), claim.clone());
        match compare_solutions(
            &bad_driver,
            &StandardPair::new(Arc::new(OffsetDriver::new(base, 0.3)), claim),
            &a,
            0,
            &time,
            &pde,
            &compare_cfg,
        ) {
            Err(CompareError::PremiseViolated { .. }) => {}
            other => return Err(format!("dominated driver accepted: {other:?}")),
        }
        Ok(())
    });
}

#[test]
fn criterion_8_bid_ask() {
    criterion(8, "ambiguity quotes and the drift cross-check", 300.0, || {
        let a = two_state();
        let spec = SublinearSpec::brownian_ambiguity(0.2, &a).map_err(|e| e.to_string())?;
        let backend = PricingBackend::pde(
            TimeGrid::uniform(1.0, 1000),
            PdeConfig::new(WGrid::auto(1.0, 1.0)),
        );
        let q = quote(&spec, &TerminalClaim::brownian(), &a, 0, &backend)
            .map_err(|e| e.to_string())?;
        check!(
            (q.ask - 0.2).abs() <= 0.004,
            "ask {:.6} not within 2% of 0.2",
            q.ask
        );
        check!(
            (q.bid + 0.2).abs() <= 0.004,
            "bid {:.6} not within 2% of -0.2",
            q.bid
        );

        let cross = supremum_crosscheck(
            0.2,
            &TerminalClaim::brownian(),
            &a,
            0,
            &backend,
            9,
            20_000,
            0x0AC1E8,
        )
        .map_err(|e| e.to_string())?;
        check!(
            cross.consistent,
            "solver {:.5} under grid max {:.5} - tol {:.2e}",
            cross.solver_value,
            cross.grid_max,
            cross.tolerance
        );
        check!(
            (cross.solver_value - cross.grid_max).abs() <= cross.tolerance,
            "linear claim should attain the constant-drift bound: {:.5} vs {:.5}",
            cross.solver_value,
            cross.grid_max
        );

        let zero = SublinearSpec::verify(
            Arc::new(bsdebm::driver::ZeroDriver),
            &a,
            &bsdebm::driver::CheckOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let flat = quote(&zero, &TerminalClaim::brownian_squared(), &a, 0, &backend)
            .map_err(|e| e.to_string())?;
        check!(
            flat.spread().abs() <= flat.tolerance(),
            "linear spread {:.3e} above tolerance {:.3e}",
            flat.spread(),
            flat.tolerance()
        );
        Ok(())
    });
}

#[test]
fn criterion_9_axiom_suite() {
    criterion(9, "sublinear-expectation axioms", 300.0, || {
        let a = two_state();
        let spec = SublinearSpec::brownian_ambiguity(0.2, &a).map_err(|e| e.to_string())?;
        let backend = PricingBackend::pde(
            TimeGrid::uniform(1.0, 64),
            PdeConfig::new(WGrid::auto(1.0, 1.0)),
        );
        let brownian = TerminalClaim::brownian();
        let claims = vec![
            brownian.clone(),
            -&brownian,
            TerminalClaim::brownian_squared(),
            TerminalClaim::state_indicator(1),
            TerminalClaim::constant(-0.5),
            TerminalClaim::constant(1.0),
        ];
        let report =
            axiom_suite(&spec, &claims, &a, 0, &backend).map_err(|e| e.to_string())?;
        check!(report.passes(), "{}", report.summary());
        for axiom in [
            Axiom::Monotonicity,
            Axiom::ConstantPreservation,
            Axiom::TimeConsistency,
            Axiom::Locality,
            Axiom::Subadditivity,
            Axiom::PositiveHomogeneity,
        ] {
            check!(
                report.checks.iter().any(|c| c.axiom == axiom),
                "no check exercised {axiom}"
            );
        }
        Ok(())
    });
}

#[test]
fn criterion_10_replay() {
    criterion(10, "bitwise replay across worker counts", 300.0, || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config_path = dir.path().join("exp.toml");
        std::fs::write(
            &config_path,
            r#"
claim = "brownian"
extra_claims = ["brownian_squared"]

[driver.brownian_ambiguity]
kappa = 0.2

[chain]
rates = [[-1.0, 1.0], [1.0, -1.0]]
c = 0.5

[time]
horizon = 1.0
n_steps = 64

[paths]
n_paths = 1000
master_seed = 77

[run]
backend = "lsmc"
"#,
        )
        .map_err(|e| e.to_string())?;

        let run = |sub: &str, config: &Path, workers: Option<&str>, out: &str| -> Result<(), String> {
            let out_dir = dir.path().join(out);
            let mut cmd = Command::new(env!("CARGO_BIN_EXE_bsdebm"));
            cmd.args([
                sub,
                "--config",
                config.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ]);
            if let Some(w) = workers {
                cmd.args(["--workers", w]);
            }
            let status = cmd.status().map_err(|e| e.to_string())?;
            check!(status.success(), "{sub} --workers {workers:?}: {status}");
            Ok(())
        };
        let identical = |out1: &str, out2: &str, file: &str| -> Result<(), String> {
            let a = std::fs::read(dir.path().join(out1).join(file)).map_err(|e| e.to_string())?;
            let b = std::fs::read(dir.path().join(out2).join(file)).map_err(|e| e.to_string())?;
            check!(a == b, "{file} differs between {out1} and {out2}");
            Ok(())
        };

        // First run at ambient parallelism emits the resolved config; the
        // replays consume that emitted config at pinned worker counts and
        // must reproduce every artifact byte for byte.
        for (sub, artifact) in [("solve", "surface.csv"), ("price", "quotes.csv")] {
            let first = format!("{sub}_first");
            run(sub, &config_path, None, &first)?;
            let resolved = dir.path().join(&first).join("resolved_config.toml");
            for workers in ["1", "8"] {
                let replay = format!("{sub}_w{workers}");
                run(sub, &resolved, Some(workers), &replay)?;
                for file in ["summary.json", artifact, "resolved_config.toml"] {
                    identical(&first, &replay, file)?;
                }
            }
        }
        Ok(())
    });
}
