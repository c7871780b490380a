//! Subcommand dispatch and artifact output for the `bsdebm` binary.
//!
//! Every run reads one TOML config, applies the command-line overrides,
//! writes the resolved config next to its artifacts, and exits 0 on
//! success, 2 on a config problem, 3 on a numeric violation (with the
//! violations spelled out in `violations.json`).  No artifact contains a
//! timestamp or hostname: replaying a resolved config byte-reproduces the
//! outputs regardless of worker count.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use crate::chain::{integrated_psi, martingale_increments};
use crate::config::{BackendChoice, ConfigError, ExperimentConfig, Resolved};
use crate::driver::{
    check_balanced, check_lipschitz, check_sublinear_flags, CheckOptions, StandardPair,
};
use crate::oracle::linear_bsde_mc;
use crate::paths::{generate_batch, save_batch, PathBatch};
use crate::pricing::{quote_table, PricingBackend, PricingError, SublinearSpec};
use crate::solver::{
    compare_solutions, regress, solve_lsmc, solve_pde_estimated, CompareConfig, CompareError,
    LsmcConfig, PdeConfig, SampledProcesses, TerminalData,
};

#[derive(Debug, Parser)]
#[command(name = "bsdebm", version, about = "Backward SDE experiments on joint Brownian/Markov-chain noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment config.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact directory (default `out`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 means one per core.  Overrides the config and the
    /// `BSDEBM_WORKERS` environment variable.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Override the config's backend.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendChoice>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample joint chain/Brownian paths and write the path-store file.
    Simulate,
    /// Solve the configured problem; writes a JSON summary and a surface CSV.
    Solve,
    /// Bid/ask quotes for the configured claims; writes a quote CSV.
    Price,
    /// Run verification suites against the config; nonzero exit on violation.
    Verify {
        #[arg(value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
    /// Check the configured problem dominates the `driver2`/`claim2` one.
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Every applicable suite.
    All,
    /// Quadratic-variation algebra and compensator statistics of the chain.
    Chain,
    /// Lipschitz, declared-flags and balanced-growth checks of the driver.
    Driver,
    /// Closed-form linear oracle; prints JSON `{y0, se, n_paths, warnings}`.
    Linear,
}

/// One failed numeric check, as written to `violations.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub source: String,
    pub check: String,
    pub detail: String,
}

enum RunError {
    Config(ConfigError),
    /// Output plumbing failed (bad --out path, full disk).
    Artifact(String),
    /// A solver failed outright, without a checkable violation.
    Numeric(String),
    /// Checks failed; `violations.json` has the list.
    Violations(usize),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        Self::Artifact(e.to_string())
    }
}

/// Exit-code contract: 0 success, 2 config error, 3 numeric violation.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(()) => 0,
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            2
        }
        Err(RunError::Artifact(e)) => {
            eprintln!("artifact error: {e}");
            2
        }
        Err(RunError::Numeric(e)) => {
            eprintln!("numeric failure: {e}");
            3
        }
        Err(RunError::Violations(n)) => {
            eprintln!("{n} violation(s); see violations.json");
            3
        }
    }
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        ConfigError::Invalid {
            field: "--config",
            detail: "a config file is required".to_string(),
        }
    })?;
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        cfg.paths.master_seed = seed;
    }
    if let Some(backend) = cli.backend {
        cfg.run.backend = backend;
    }
    let resolved = cfg.resolve()?;

    // The pool size never reaches the numerics, so it is not written back
    // into the resolved config: replays with any --workers value match.
    init_worker_pool(effective_workers(cli.workers, cfg.run.workers));
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("resolved_config.toml"), cfg.to_toml())?;

    match &cli.command {
        Command::Simulate => cmd_simulate(&cfg, &resolved, &out_dir),
        Command::Solve => cmd_solve(&cfg, &resolved, &out_dir),
        Command::Price => cmd_price(&cfg, &resolved, &out_dir),
        Command::Verify { suite } => cmd_verify(&cfg, &resolved, &out_dir, *suite),
        Command::Compare => cmd_compare(&cfg, &resolved, &out_dir),
    }
}

/// Flag first, then an explicit config value, then the environment default.
fn effective_workers(flag: Option<usize>, config: usize) -> usize {
    if let Some(w) = flag {
        return w;
    }
    if config != 0 {
        return config;
    }
    std::env::var("BSDEBM_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

fn init_worker_pool(workers: usize) {
    if workers > 0 {
        // Fails only if a pool already exists (repeated calls in tests);
        // the numerics don't depend on the pool size either way.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_summary(
    out_dir: &Path,
    subcommand: &str,
    cfg: &ExperimentConfig,
    result: serde_json::Value,
) -> Result<(), RunError> {
    let value = json!({
        "subcommand": subcommand,
        "seed": cfg.paths.master_seed,
        "result": result,
        "config": serde_json::to_value(cfg).expect("config serializes"),
    });
    write_json(&out_dir.join("summary.json"), &value)
}

/// Writes the list, echoes it to stderr, and returns the exit-3 error.
fn fail_with(out_dir: &Path, violations: Vec<Violation>) -> RunError {
    for v in &violations {
        eprintln!("violation [{}] {}: {}", v.source, v.check, v.detail);
    }
    let n = violations.len();
    let value = serde_json::to_value(&violations).expect("violations serialize");
    match write_json(&out_dir.join("violations.json"), &value) {
        Ok(()) => RunError::Violations(n),
        Err(e) => e,
    }
}

fn pde_config(cfg: &ExperimentConfig, r: &Resolved) -> PdeConfig {
    let mut pc = PdeConfig::new(r.space.clone());
    pc.mode = cfg.run.mode.driver_mode();
    pc
}

fn lsmc_config(cfg: &ExperimentConfig) -> LsmcConfig {
    LsmcConfig {
        degree: cfg.run.degree,
        mode: cfg.run.mode.driver_mode(),
        ..LsmcConfig::default()
    }
}

fn check_options(r: &Resolved) -> CheckOptions {
    CheckOptions {
        horizon: r.time.horizon(),
        ..CheckOptions::default()
    }
}

fn make_batch(cfg: &ExperimentConfig, r: &Resolved) -> PathBatch {
    generate_batch(
        &r.a,
        r.x0,
        &r.time,
        cfg.paths.n_paths,
        cfg.paths.master_seed,
    )
}

fn cmd_simulate(
    cfg: &ExperimentConfig,
    r: &Resolved,
    out_dir: &Path,
) -> Result<(), RunError> {
    let batch = make_batch(cfg, r);
    let file = out_dir.join("paths.bin");
    save_batch(&batch, &file).map_err(|e| RunError::Artifact(e.to_string()))?;
    let total_jumps: usize = batch.paths.iter().map(|p| p.chain.n_jumps()).sum();
    write_summary(
        out_dir,
        "simulate",
        cfg,
        json!({
            "file": "paths.bin",
            "n_paths": batch.n_paths(),
            "n_states": batch.n_states,
            "n_steps": batch.grid.n_steps(),
            "horizon": batch.grid.horizon(),
            "total_jumps": total_jumps,
        }),
    )?;
    println!(
        "wrote {} paths ({} steps, horizon {}) to {}",
        batch.n_paths(),
        batch.grid.n_steps(),
        batch.grid.horizon(),
        file.display()
    );
    Ok(())
}

fn cmd_solve(cfg: &ExperimentConfig, r: &Resolved, out_dir: &Path) -> Result<(), RunError> {
    let surface_path = out_dir.join("surface.csv");
    let report = match cfg.run.backend {
        BackendChoice::Pde => {
            let sol = solve_pde_estimated(
                &r.a,
                r.x0,
                &*r.driver,
                &TerminalData::Claim(r.claim.clone()),
                &r.time,
                &pde_config(cfg, r),
            )
            .map_err(|e| RunError::Numeric(e.to_string()))?;
            write_pde_surface(&surface_path, &sol.surface)?;
            sol.report
        }
        BackendChoice::Lsmc => {
            let batch = make_batch(cfg, r);
            let mut config = lsmc_config(cfg);
            config.store_paths = true;
            let sol = solve_lsmc(&r.a, &*r.driver, &r.claim, &batch, &config)
                .map_err(|e| RunError::Numeric(e.to_string()))?;
            let mut report = sol.report;
            if batch.grid.n_steps() % 2 == 0 {
                config.store_paths = false;
                let coarse =
                    solve_lsmc(&r.a, &*r.driver, &r.claim, &batch.coarsen(2), &config)
                        .map_err(|e| RunError::Numeric(e.to_string()))?;
                report.error_estimate = Some((report.y0 - coarse.report.y0).abs());
            }
            let sampled = sol.sampled.expect("paths were requested");
            write_lsmc_surface(&surface_path, &batch, &sampled, cfg.run.degree)?;
            report
        }
    };
    write_summary(
        out_dir,
        "solve",
        cfg,
        json!({
            "backend": cfg.run.backend.to_string(),
            "y0": report.y0,
            "report": serde_json::to_value(&report).expect("report serializes"),
            "surface": "surface.csv",
        }),
    )?;
    match (report.std_error, report.error_estimate) {
        (Some(se), _) => println!("y0 = {:.6}  (se {:.2e}, {} backend)", report.y0, se, cfg.run.backend),
        (None, Some(err)) => println!(
            "y0 = {:.6}  (scheme error ~{:.2e}, {} backend)",
            report.y0, err, cfg.run.backend
        ),
        (None, None) => println!("y0 = {:.6}  ({} backend)", report.y0, cfg.run.backend),
    }
    Ok(())
}

/// Full value/gradient surface: one row per (time node, state, space node).
fn write_pde_surface(
    path: &Path,
    surface: &crate::solver::SolutionSurface,
) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::Artifact(e.to_string()))?;
    w.write_record(["t", "state", "w", "value", "z1"])
        .map_err(|e| RunError::Artifact(e.to_string()))?;
    let ws = surface.space().nodes();
    for (k, (values, z1s)) in surface
        .values()
        .iter()
        .zip(surface.z1_surfaces())
        .enumerate()
    {
        let t = surface.time().node(k);
        for state in 0..surface.n_states() {
            for (m, &wv) in ws.iter().enumerate() {
                w.write_record([
                    format!("{t}"),
                    format!("{state}"),
                    format!("{wv}"),
                    format!("{}", values[(state, m)]),
                    format!("{}", z1s[(state, m)]),
                ])
                .map_err(|e| RunError::Artifact(e.to_string()))?;
            }
        }
    }
    w.flush().map_err(|e| RunError::Artifact(e.to_string()))?;
    Ok(())
}

/// Per-node refit of the sampled backward values (and gradients, where a
/// step exists) on an evenly spaced `w` grid per state.  States without
/// observations at a node are skipped.
fn write_lsmc_surface(
    path: &Path,
    batch: &PathBatch,
    sampled: &SampledProcesses,
    degree: usize,
) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::Artifact(e.to_string()))?;
    w.write_record(["t", "state", "w", "value", "z1"])
        .map_err(|e| RunError::Artifact(e.to_string()))?;
    let n_steps = batch.grid.n_steps();
    let n_states = batch.n_states;
    let nodes_per_path: Vec<Vec<f64>> = batch.paths.iter().map(|p| p.brownian_nodes()).collect();
    for k in 0..=n_steps {
        let t = batch.grid.node(k);
        let mut ws: Vec<Vec<f64>> = vec![Vec::new(); n_states];
        let mut ys: Vec<Vec<f64>> = vec![Vec::new(); n_states];
        let mut zs: Vec<Vec<f64>> = vec![Vec::new(); n_states];
        for (p, path) in batch.paths.iter().enumerate() {
            let s = path.chain.state_at(t);
            ws[s].push(nodes_per_path[p][k]);
            ys[s].push(sampled.y[(k, p)]);
            if k < n_steps {
                zs[s].push(sampled.z1[(k, p)]);
            }
        }
        for state in 0..n_states {
            if ws[state].is_empty() {
                continue;
            }
            let value_fit = regress(&ws[state], &ys[state], degree).fit;
            let z1_fit = (k < n_steps).then(|| regress(&ws[state], &zs[state], degree).fit);
            let (lo, hi) = ws[state]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                    (lo.min(x), hi.max(x))
                });
            let points: Vec<f64> = if hi > lo {
                (0..41).map(|j| lo + (hi - lo) * j as f64 / 40.0).collect()
            } else {
                vec![lo]
            };
            for wv in points {
                w.write_record([
                    format!("{t}"),
                    format!("{state}"),
                    format!("{wv}"),
                    format!("{}", value_fit.eval(wv)),
                    z1_fit
                        .as_ref()
                        .map_or_else(String::new, |f| format!("{}", f.eval(wv))),
                ])
                .map_err(|e| RunError::Artifact(e.to_string()))?;
            }
        }
    }
    w.flush().map_err(|e| RunError::Artifact(e.to_string()))?;
    Ok(())
}

fn cmd_price(cfg: &ExperimentConfig, r: &Resolved, out_dir: &Path) -> Result<(), RunError> {
    let spec = match SublinearSpec::verify(r.driver.clone(), &r.a, &check_options(r)) {
        Ok(spec) => spec,
        Err(PricingError::NotSublinear { name }) => {
            return Err(RunError::Config(ConfigError::Invalid {
                field: "driver",
                detail: format!(
                    "'{name}' cannot price: quotes need a subadditive, positively homogeneous \
                     driver vanishing at zero gradients"
                ),
            }))
        }
        Err(e) => {
            return Err(fail_with(
                out_dir,
                vec![Violation {
                    source: "price".to_string(),
                    check: "driver verification".to_string(),
                    detail: e.to_string(),
                }],
            ))
        }
    };
    let backend = match cfg.run.backend {
        BackendChoice::Pde => PricingBackend::pde(r.time.clone(), pde_config(cfg, r)),
        BackendChoice::Lsmc => PricingBackend::lsmc(Arc::new(make_batch(cfg, r)), lsmc_config(cfg)),
    };
    let mut claims = vec![r.claim.clone()];
    claims.extend(r.extra_claims.iter().cloned());
    let quotes = match quote_table(&spec, &claims, &r.a, r.x0, &backend) {
        Ok(quotes) => quotes,
        Err(PricingError::QuoteOrderViolated { bid, ask, tolerance }) => {
            return Err(fail_with(
                out_dir,
                vec![Violation {
                    source: "price".to_string(),
                    check: "bid <= ask".to_string(),
                    detail: format!("bid {bid} > ask {ask} + tolerance {tolerance:.3e}"),
                }],
            ))
        }
        Err(e) => return Err(RunError::Numeric(e.to_string())),
    };

    let kappa = cfg.driver.kappa();
    let csv_path = out_dir.join("quotes.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| RunError::Artifact(e.to_string()))?;
    w.write_record(["claim", "kappa", "bid", "ask", "spread", "se", "scheme_err"])
        .map_err(|e| RunError::Artifact(e.to_string()))?;
    for q in &quotes {
        w.write_record([
            q.claim.clone(),
            kappa.map_or_else(String::new, |k| format!("{k}")),
            format!("{}", q.bid),
            format!("{}", q.ask),
            format!("{}", q.spread()),
            format!("{}", q.std_error),
            format!("{}", q.scheme_error),
        ])
        .map_err(|e| RunError::Artifact(e.to_string()))?;
    }
    w.flush().map_err(|e| RunError::Artifact(e.to_string()))?;

    write_summary(
        out_dir,
        "price",
        cfg,
        json!({
            "backend": cfg.run.backend.to_string(),
            "quotes": serde_json::to_value(&quotes).expect("quotes serialize"),
            "csv": "quotes.csv",
        }),
    )?;
    for q in &quotes {
        println!(
            "{}: bid {:.6}, ask {:.6} (spread {:.6})",
            q.claim,
            q.bid,
            q.ask,
            q.spread()
        );
    }
    Ok(())
}

fn cmd_verify(
    cfg: &ExperimentConfig,
    r: &Resolved,
    out_dir: &Path,
    suite: Suite,
) -> Result<(), RunError> {
    let mut violations = Vec::new();
    let mut reports = serde_json::Map::new();

    if matches!(suite, Suite::All | Suite::Chain) {
        let (v, report) = verify_chain(cfg, r);
        violations.extend(v);
        reports.insert("chain".to_string(), report);
    }
    if matches!(suite, Suite::All | Suite::Driver) {
        let (v, report) = verify_driver(r);
        violations.extend(v);
        reports.insert("driver".to_string(), report);
    }
    let run_linear = match suite {
        Suite::Linear => true,
        Suite::All => cfg.driver.is_affine(),
        _ => false,
    };
    if run_linear {
        let report = verify_linear(cfg, r)?;
        println!("{report}");
        reports.insert("linear".to_string(), report);
    }

    write_summary(
        out_dir,
        "verify",
        cfg,
        json!({
            "violations": violations.len(),
            "reports": serde_json::Value::Object(reports),
        }),
    )?;
    if violations.is_empty() {
        if !matches!(suite, Suite::Linear) {
            println!("verify: all checks passed");
        }
        Ok(())
    } else {
        Err(fail_with(out_dir, violations))
    }
}

/// Exact algebra of the jump quadratic variation on the configured matrix,
/// then compensator and quadratic-variation statistics on a sampled batch.
fn verify_chain(
    cfg: &ExperimentConfig,
    r: &Resolved,
) -> (Vec<Violation>, serde_json::Value) {
    let mut violations = Vec::new();
    let mut push = |check: &str, detail: String| {
        violations.push(Violation {
            source: "verify chain".to_string(),
            check: check.to_string(),
            detail,
        })
    };
    let a = &r.a;
    let n = a.n_states();
    let ones = DVector::from_element(n, 1.0);
    for i in 0..n {
        let psi = a.psi(i);
        let m = psi.matrix();
        let sym = (m - m.transpose()).amax();
        if sym > 1e-12 {
            push("psi symmetric", format!("state {i}: asymmetry {sym:.3e}"));
        }
        let kernel = (m * &ones).amax();
        if kernel > 1e-10 {
            push("psi kernel", format!("state {i}: |psi 1| = {kernel:.3e}"));
        }
        let min_eig = psi.eigenvalues()[0];
        if min_eig < -1e-10 {
            push(
                "psi nonnegative",
                format!("state {i}: min eigenvalue {min_eig:.3e}"),
            );
        }
        for j in 0..n {
            let diff = (a.psi_column(i, j) - m.column(j)).amax();
            if diff > 1e-12 {
                push(
                    "psi column formula",
                    format!("state {i}, column {j}: mismatch {diff:.3e}"),
                );
            }
        }
        let p = psi.pinv();
        let resid = (m * &p * m - m).amax();
        if resid > 1e-10 {
            push(
                "pseudoinverse identity",
                format!("state {i}: |psi psi+ psi - psi| = {resid:.3e}"),
            );
        }
    }

    let batch = make_batch(cfg, r);
    let n_paths = batch.n_paths() as f64;
    let mut m_sum = DVector::zeros(n);
    let mut m_sq = DVector::zeros(n);
    let mut d_sum = DMatrix::zeros(n, n);
    let mut d_sq = DMatrix::zeros(n, n);
    for path in &batch.paths {
        let incs = martingale_increments(&path.chain, a, &batch.grid);
        let mut m_t = DVector::zeros(n);
        for dm in &incs {
            m_t += dm;
        }
        let d = &m_t * m_t.transpose() - integrated_psi(&path.chain, a);
        for i in 0..n {
            m_sum[i] += m_t[i];
            m_sq[i] += m_t[i] * m_t[i];
            for j in 0..n {
                d_sum[(i, j)] += d[(i, j)];
                d_sq[(i, j)] += d[(i, j)] * d[(i, j)];
            }
        }
    }
    let se = |sum: f64, sq: f64| {
        let mean = sum / n_paths;
        let var = ((sq - n_paths * mean * mean) / (n_paths - 1.0)).max(0.0);
        (mean, (var / n_paths).sqrt())
    };
    let mut max_m_z: f64 = 0.0;
    for i in 0..n {
        let (mean, s) = se(m_sum[i], m_sq[i]);
        if s > 0.0 {
            max_m_z = max_m_z.max(mean.abs() / s);
        }
        if mean.abs() > 4.0 * s && (s > 0.0 || mean != 0.0) {
            push(
                "martingale mean zero",
                format!("component {i}: mean {mean:.4e} exceeds 4 x se {s:.4e}"),
            );
        }
    }
    let mut max_d_z: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (mean, s) = se(d_sum[(i, j)], d_sq[(i, j)]);
            if s > 0.0 {
                max_d_z = max_d_z.max(mean.abs() / s);
            }
            if mean.abs() > 4.0 * s && (s > 0.0 || mean != 0.0) {
                push(
                    "quadratic variation compensated",
                    format!(
                        "entry ({i},{j}): |mean(M M' - int psi)| = {:.4e} exceeds 4 x se {s:.4e}",
                        mean.abs()
                    ),
                );
            }
        }
    }
    let report = json!({
        "states": n,
        "n_paths": batch.n_paths(),
        "max_martingale_z": max_m_z,
        "max_qv_z": max_d_z,
    });
    (violations, report)
}

/// Driver and claim regularity: declared Lipschitz constant, declared
/// structural flags, balanced growth (for sublinear drivers), claim growth.
fn verify_driver(r: &Resolved) -> (Vec<Violation>, serde_json::Value) {
    let mut violations = Vec::new();
    let opts = check_options(r);
    let driver = &*r.driver;

    let lipschitz = check_lipschitz(driver, &r.a, &opts);
    if !lipschitz.passes() {
        violations.push(Violation {
            source: "verify driver".to_string(),
            check: "lipschitz".to_string(),
            detail: format!(
                "{} ratio and {} kernel violations against declared mu {} (worst ratio {:.4})",
                lipschitz.violations,
                lipschitz.kernel_violations,
                lipschitz.declared_mu,
                lipschitz.max_ratio
            ),
        });
    }
    let flags = check_sublinear_flags(driver, &r.a, &opts);
    if !flags.passes() {
        violations.push(Violation {
            source: "verify driver".to_string(),
            check: "declared flags".to_string(),
            detail: format!(
                "{} subadditivity, {} homogeneity, {} zero-on-constant failures over {} samples",
                flags.subadditivity_failures,
                flags.homogeneity_failures,
                flags.zero_at_zero_failures,
                flags.n
            ),
        });
    }
    let declared = driver.flags();
    let balance = if declared.subadditive && declared.positively_homogeneous && declared.zero_at_zero_z
    {
        let balance = check_balanced(driver, &r.a, None, &opts);
        if !balance.passes() {
            violations.push(Violation {
                source: "verify driver".to_string(),
                check: "balanced growth".to_string(),
                detail: format!(
                    "{} violations, {} boundary hits at epsilon {:.3e}",
                    balance.violations, balance.boundary, balance.epsilon
                ),
            });
        }
        Some(balance)
    } else {
        None
    };
    if let Err(e) = r.claim.check_growth(r.a.n_states(), r.space.half_width(), 201) {
        violations.push(Violation {
            source: "verify driver".to_string(),
            check: "claim growth bound".to_string(),
            detail: e.to_string(),
        });
    }
    let report = json!({
        "driver": driver.name(),
        "lipschitz": serde_json::to_value(&lipschitz).expect("report serializes"),
        "flags": serde_json::to_value(&flags).expect("report serializes"),
        "balance": balance.map(|b| serde_json::to_value(&b).expect("report serializes")),
    });
    (violations, report)
}

/// Closed-form linear estimate of the configured problem, as JSON.
fn verify_linear(cfg: &ExperimentConfig, r: &Resolved) -> Result<serde_json::Value, RunError> {
    let spec = cfg
        .driver
        .affine_spec(&r.a, r.time.horizon())?
        .ok_or_else(|| {
            ConfigError::Invalid {
                field: "driver",
                detail: "the linear oracle needs an affine driver".to_string(),
            }
        })?;
    let batch = make_batch(cfg, r);
    let est = linear_bsde_mc(&spec, &r.claim, &r.a, &batch);
    Ok(json!({
        "y0": est.value,
        "se": est.std_error,
        "n_paths": est.n_paths,
        "warnings": {
            "non_positive_jump_factors": est.warnings.non_positive_jump_factors,
            "beta_outside_range": est.warnings.beta_outside_range,
        },
    }))
}

fn cmd_compare(cfg: &ExperimentConfig, r: &Resolved, out_dir: &Path) -> Result<(), RunError> {
    let driver2_cfg = cfg.driver2.as_ref().ok_or_else(|| {
        ConfigError::Invalid {
            field: "driver2",
            detail: "compare needs a second driver".to_string(),
        }
    })?;
    let driver2 = driver2_cfg.build(&r.a, r.time.horizon())?;
    let claim2 = match &cfg.claim2 {
        Some(c) => c.build(r.a.n_states())?,
        None => r.claim.clone(),
    };
    let pair1 = StandardPair::new(r.driver.clone(), r.claim.clone());
    let pair2 = StandardPair::new(driver2, claim2);
    let compare_cfg = CompareConfig {
        check: check_options(r),
        ..CompareConfig::default()
    };
    match compare_solutions(
        &pair1,
        &pair2,
        &r.a,
        r.x0,
        &r.time,
        &pde_config(cfg, r),
        &compare_cfg,
    ) {
        Ok(report) => {
            let value = serde_json::to_value(&report).expect("report serializes");
            write_json(&out_dir.join("comparison.json"), &value)?;
            write_summary(out_dir, "compare", cfg, value)?;
            println!(
                "order holds: min margin {:.3e} (tolerance {:.3e}), y0 gap {:.6}",
                report.min_margin, report.tol, report.y0_margin
            );
            Ok(())
        }
        Err(CompareError::PremiseViolated { which, detail }) => Err(fail_with(
            out_dir,
            vec![Violation {
                source: "compare".to_string(),
                check: format!("premise: {which}"),
                detail,
            }],
        )),
        Err(CompareError::ComparisonViolated {
            location,
            magnitude,
        }) => Err(fail_with(
            out_dir,
            vec![Violation {
                source: "compare".to_string(),
                check: "pointwise order".to_string(),
                detail: format!(
                    "margin {magnitude:.3e} at t-index {}, state {}, w-index {}",
                    location.time_index, location.state, location.space_index
                ),
            }],
        )),
        Err(CompareError::Solve(e)) => Err(RunError::Numeric(e.to_string())),
    }
}
