//! Sublinear valuation: bid/ask quotes and the axioms behind them.
//!
//! A driver that is subadditive and positively homogeneous in `(y, z1, z2)`
//! and vanishes on constant solutions turns the backward solution map into a
//! sublinear conditional expectation.  Its value at `t = 0` is the ask price
//! of the terminal claim; the bid is `-E(-Q)`.  [`SublinearSpec::verify`]
//! gates a driver behind the structural checks, [`quote`] prices claims on
//! either backend, [`axiom_suite`] validates the six defining properties
//! numerically, and [`supremum_crosscheck`] compares the solver against a
//! brute-force supremum over constant measure changes.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chain::{simulate_chain, RateMatrix};
use crate::claim::TerminalClaim;
use crate::driver::{
    check_balanced, check_sublinear_flags, BalancedReport, BrownianAmbiguityDriver, CheckOptions,
    Driver, SublinearFlagsReport,
};
use crate::paths::{stream_rng, PathBatch, TimeGrid};
use crate::solver::{
    regress, solve_lsmc, solve_lsmc_estimated, solve_pde, solve_pde_estimated, LsmcConfig,
    PdeConfig, SolveError, SolveReport, TerminalData,
};

/// Shift applied to the chain substream tag so the cross-check's samples are
/// independent of any path batch built from the same seed.
const CROSSCHECK_CHAIN_TAG: u64 = 21;
const CROSSCHECK_NORMAL_TAG: u64 = 22;

#[derive(Debug, Error)]
pub enum PricingError {
    #[error(
        "driver '{name}' does not declare the sublinear flags \
         (subadditive, positively homogeneous, zero on constants)"
    )]
    NotSublinear { name: String },
    #[error("driver '{name}' failed its {check} check: {detail}")]
    SpecRejected {
        name: String,
        check: &'static str,
        detail: String,
    },
    #[error("bid {bid} exceeds ask {ask} beyond the combined tolerance {tolerance:.3e}")]
    QuoteOrderViolated { bid: f64, ask: f64, tolerance: f64 },
    #[error("axiom suite failed: {}", .report.summary())]
    AxiomViolationBeyondTolerance { report: AxiomReport },
    #[error("restart checks need an even number of time steps, got {0}")]
    OddTimeSteps(usize),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// A driver admitted for sublinear valuation: the structural flags are
/// declared *and* confirmed on sampled inputs, and the balanced-growth probe
/// passes, so the induced evaluation is monotone, constant-preserving and
/// sublinear up to scheme error.  The check reports stay attached.
#[derive(Clone)]
pub struct SublinearSpec {
    driver: Arc<dyn Driver>,
    flags_report: SublinearFlagsReport,
    balance_report: BalancedReport,
}

impl SublinearSpec {
    pub fn verify(
        driver: Arc<dyn Driver>,
        a: &RateMatrix,
        opts: &CheckOptions,
    ) -> Result<Self, PricingError> {
        let flags = driver.flags();
        if !(flags.subadditive && flags.positively_homogeneous && flags.zero_at_zero_z) {
            return Err(PricingError::NotSublinear {
                name: driver.name().to_string(),
            });
        }
        let flags_report = check_sublinear_flags(&*driver, a, opts);
        if !flags_report.passes() {
            return Err(PricingError::SpecRejected {
                name: driver.name().to_string(),
                check: "declared-flags",
                detail: format!(
                    "{} subadditivity, {} homogeneity, {} zero-on-constant failures over {} samples",
                    flags_report.subadditivity_failures,
                    flags_report.homogeneity_failures,
                    flags_report.zero_at_zero_failures,
                    flags_report.n
                ),
            });
        }
        let balance_report = check_balanced(&*driver, a, None, opts);
        if !balance_report.passes() {
            return Err(PricingError::SpecRejected {
                name: driver.name().to_string(),
                check: "balanced-growth",
                detail: format!(
                    "{} violations and {} boundary hits at epsilon {:.3e}",
                    balance_report.violations, balance_report.boundary, balance_report.epsilon
                ),
            });
        }
        Ok(Self {
            driver,
            flags_report,
            balance_report,
        })
    }

    /// `kappa |z1|` ambiguity pricing, verified against the given chain.
    pub fn brownian_ambiguity(kappa: f64, a: &RateMatrix) -> Result<Self, PricingError> {
        Self::verify(
            Arc::new(BrownianAmbiguityDriver::new(kappa)),
            a,
            &CheckOptions::default(),
        )
    }

    pub fn driver(&self) -> &dyn Driver {
        &*self.driver
    }

    pub fn name(&self) -> &str {
        self.driver.name()
    }

    pub fn flags_report(&self) -> &SublinearFlagsReport {
        &self.flags_report
    }

    pub fn balance_report(&self) -> &BalancedReport {
        &self.balance_report
    }
}

impl fmt::Debug for SublinearSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SublinearSpec")
            .field("driver", &self.driver.name())
            .finish()
    }
}

/// Numerical backend for valuation: the deterministic finite-difference
/// scheme, or regression Monte Carlo over a fixed path batch.
#[derive(Clone)]
pub enum PricingBackend {
    Pde {
        time: TimeGrid,
        config: PdeConfig,
    },
    /// The batch must come from the same rate matrix and initial state the
    /// quotes are asked for.  Sharing one batch across claims and across the
    /// two quote legs prices everything on common random numbers.
    Lsmc {
        batch: Arc<PathBatch>,
        config: LsmcConfig,
    },
}

/// One solved leg: value plus its two error components (either may be zero).
#[derive(Debug, Clone, Copy)]
struct Leg {
    value: f64,
    se: f64,
    scheme: f64,
}

impl Leg {
    fn err(&self) -> f64 {
        self.se + self.scheme
    }
}

impl PricingBackend {
    pub fn pde(time: TimeGrid, config: PdeConfig) -> Self {
        Self::Pde { time, config }
    }

    pub fn lsmc(batch: Arc<PathBatch>, config: LsmcConfig) -> Self {
        Self::Lsmc { batch, config }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            Self::Pde { time, .. } => time.horizon(),
            Self::Lsmc { batch, .. } => batch.grid.horizon(),
        }
    }

    fn solve_leg(
        &self,
        a: &RateMatrix,
        x0: usize,
        driver: &dyn Driver,
        claim: &TerminalClaim,
    ) -> Result<Leg, SolveError> {
        match self {
            Self::Pde { time, config } => {
                let sol = solve_pde_estimated(
                    a,
                    x0,
                    driver,
                    &TerminalData::Claim(claim.clone()),
                    time,
                    config,
                )?;
                Ok(Leg {
                    value: sol.report.y0,
                    se: 0.0,
                    scheme: sol.report.error_estimate.unwrap_or(0.0),
                })
            }
            Self::Lsmc { batch, config } => {
                debug_assert_eq!(
                    batch.paths.first().map(|p| p.chain.initial_state()),
                    Some(x0),
                    "batch was generated from a different initial state"
                );
                let sol = solve_lsmc_estimated(a, driver, claim, batch, config)?;
                Ok(Leg {
                    value: sol.report.y0,
                    se: sol.report.std_error.unwrap_or(0.0),
                    scheme: sol.report.error_estimate.unwrap_or(0.0),
                })
            }
        }
    }
}

/// Two-sided price of a claim under a sublinear evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct Quote {
    pub claim: String,
    pub spec: String,
    pub bid: f64,
    pub ask: f64,
    /// Worst Monte Carlo standard error of the two legs (0 for the
    /// deterministic backend).
    pub std_error: f64,
    /// Worst scheme-error estimate of the two legs.
    pub scheme_error: f64,
}

impl Quote {
    pub fn spread(&self) -> f64 {
        self.ask - self.bid
    }

    /// Combined tolerance `2 (SE + scheme error)`, floored at roundoff scale.
    pub fn tolerance(&self) -> f64 {
        floored(
            2.0 * (self.std_error + self.scheme_error),
            self.ask.abs().max(self.bid.abs()),
        )
    }
}

fn floored(tol: f64, scale: f64) -> f64 {
    tol.max(1e-12 * scale.abs().max(1.0))
}

/// Prices `ask = E(Q)`, `bid = -E(-Q)` from the same backend.  Subadditivity
/// makes `ask >= bid` up to scheme error; a violation beyond the combined
/// tolerance is reported as an error rather than returned as a quote.
pub fn quote(
    spec: &SublinearSpec,
    claim: &TerminalClaim,
    a: &RateMatrix,
    x0: usize,
    backend: &PricingBackend,
) -> Result<Quote, PricingError> {
    let ask_leg = backend.solve_leg(a, x0, spec.driver(), claim)?;
    let bid_leg = backend.solve_leg(a, x0, spec.driver(), &-claim)?;
    let q = Quote {
        claim: claim.name().to_string(),
        spec: spec.name().to_string(),
        bid: -bid_leg.value,
        ask: ask_leg.value,
        std_error: ask_leg.se.max(bid_leg.se),
        scheme_error: ask_leg.scheme.max(bid_leg.scheme),
    };
    if q.bid > q.ask + q.tolerance() {
        return Err(PricingError::QuoteOrderViolated {
            bid: q.bid,
            ask: q.ask,
            tolerance: q.tolerance(),
        });
    }
    Ok(q)
}

/// Quotes a batch of claims; claims are independent work items and run in
/// parallel.
pub fn quote_table(
    spec: &SublinearSpec,
    claims: &[TerminalClaim],
    a: &RateMatrix,
    x0: usize,
    backend: &PricingBackend,
) -> Result<Vec<Quote>, PricingError> {
    claims
        .par_iter()
        .map(|q| quote(spec, q, a, x0, backend))
        .collect()
}

/// Per-state values over a set of `w` points at one time node.
#[derive(Debug, Clone)]
pub struct ValueSlice {
    /// Time node the requested evaluation time snapped to.
    pub t: f64,
    pub ws: Vec<f64>,
    /// `n_states x ws.len()`.  NaN marks states the Monte Carlo backend has
    /// no observations for at this node (e.g. everything but the initial
    /// state at `t = 0`).
    pub values: DMatrix<f64>,
    pub report: SolveReport,
}

impl ValueSlice {
    /// Linear interpolation in `w`, clamped at the ends.
    pub fn value_at(&self, state: usize, w: f64) -> f64 {
        let n = self.ws.len();
        if n == 1 || w <= self.ws[0] {
            return self.values[(state, 0)];
        }
        if w >= self.ws[n - 1] {
            return self.values[(state, n - 1)];
        }
        let j = self.ws.partition_point(|&x| x <= w).min(n - 1);
        let (w0, w1) = (self.ws[j - 1], self.ws[j]);
        let lambda = (w - w0) / (w1 - w0);
        (1.0 - lambda) * self.values[(state, j - 1)] + lambda * self.values[(state, j)]
    }
}

fn nearest_node(time: &TimeGrid, t: f64) -> usize {
    let mut best = 0;
    let mut gap = f64::INFINITY;
    for (k, &node) in time.nodes().iter().enumerate() {
        let d = (node - t).abs();
        if d < gap {
            gap = d;
            best = k;
        }
    }
    best
}

/// Evaluates `E(Q | F_t)` as the per-state value surface at the grid node
/// nearest `t`.  The finite-difference backend returns the scheme surface;
/// the Monte Carlo backend re-fits its sampled backward values per state
/// with the configured polynomial degree.
pub fn sublinear_expectation(
    spec: &SublinearSpec,
    claim: &TerminalClaim,
    t: f64,
    a: &RateMatrix,
    x0: usize,
    backend: &PricingBackend,
) -> Result<ValueSlice, PricingError> {
    match backend {
        PricingBackend::Pde { time, config } => {
            let sol = solve_pde_estimated(
                a,
                x0,
                spec.driver(),
                &TerminalData::Claim(claim.clone()),
                time,
                config,
            )?;
            let k = nearest_node(time, t);
            Ok(ValueSlice {
                t: time.node(k),
                ws: config.space.nodes(),
                values: sol.surface.values()[k].clone(),
                report: sol.report,
            })
        }
        PricingBackend::Lsmc { batch, config } => {
            let cfg = LsmcConfig {
                store_paths: true,
                ..config.clone()
            };
            let sol = solve_lsmc(a, spec.driver(), claim, batch, &cfg)?;
            let sampled = sol.sampled.expect("paths were requested");
            let k = nearest_node(&batch.grid, t);
            let t_k = batch.grid.node(k);
            let n_states = batch.n_states;
            let mut ws_by_state: Vec<Vec<f64>> = vec![Vec::new(); n_states];
            let mut ys_by_state: Vec<Vec<f64>> = vec![Vec::new(); n_states];
            for (p, path) in batch.paths.iter().enumerate() {
                let w = path.brownian_nodes()[k];
                let s = path.chain.state_at(t_k);
                ws_by_state[s].push(w);
                ys_by_state[s].push(sampled.y[(k, p)]);
            }
            let w_max = ws_by_state
                .iter()
                .flatten()
                .fold(0.0f64, |m, w| m.max(w.abs()));
            let ws: Vec<f64> = if w_max == 0.0 {
                vec![0.0]
            } else {
                (0..81)
                    .map(|j| -w_max + 2.0 * w_max * j as f64 / 80.0)
                    .collect()
            };
            let mut values = DMatrix::from_element(n_states, ws.len(), f64::NAN);
            for s in 0..n_states {
                if ws_by_state[s].is_empty() {
                    continue;
                }
                let fit = regress(&ws_by_state[s], &ys_by_state[s], config.degree).fit;
                for (j, &w) in ws.iter().enumerate() {
                    values[(s, j)] = fit.eval(w);
                }
            }
            Ok(ValueSlice {
                t: t_k,
                ws,
                values,
                report: sol.report,
            })
        }
    }
}

/// The six defining properties of the induced evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    Monotonicity,
    ConstantPreservation,
    TimeConsistency,
    Locality,
    Subadditivity,
    PositiveHomogeneity,
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axiom::Monotonicity => "monotonicity",
            Axiom::ConstantPreservation => "constant preservation",
            Axiom::TimeConsistency => "time consistency",
            Axiom::Locality => "locality",
            Axiom::Subadditivity => "subadditivity",
            Axiom::PositiveHomogeneity => "positive homogeneity",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Check passes when `lhs >= rhs - tolerance`.
    GreaterEq,
    /// Check passes when `|lhs - rhs| <= tolerance`.
    Eq,
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomCheck {
    pub axiom: Axiom,
    pub relation: Relation,
    /// Witness inputs, e.g. the claims the check was run on.
    pub witness: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomReport {
    pub spec: String,
    pub checks: Vec<AxiomCheck>,
}

impl AxiomReport {
    pub fn passes(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&AxiomCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn summary(&self) -> String {
        let failed = self.failures();
        if failed.is_empty() {
            format!("all {} checks passed", self.checks.len())
        } else {
            let f = failed[0];
            format!(
                "{}/{} checks failed; first: {} [{}] lhs {:.6e} rhs {:.6e} tol {:.1e}",
                failed.len(),
                self.checks.len(),
                f.axiom,
                f.witness,
                f.lhs,
                f.rhs,
                f.tolerance
            )
        }
    }
}

struct Checks(Vec<AxiomCheck>);

impl Checks {
    fn push(
        &mut self,
        axiom: Axiom,
        relation: Relation,
        witness: String,
        lhs: f64,
        rhs: f64,
        tolerance: f64,
    ) {
        let passed = match relation {
            Relation::GreaterEq => lhs >= rhs - tolerance,
            Relation::Eq => (lhs - rhs).abs() <= tolerance,
        };
        self.0.push(AxiomCheck {
            axiom,
            relation,
            witness,
            lhs,
            rhs,
            tolerance,
            passed,
        });
    }
}

/// Evaluates the wrapped driver on a clock shifted forward by `offset`:
/// restart sub-solves on `[s, T]` run on a local clock starting at zero.
struct TimeShiftedDriver<'a> {
    inner: &'a dyn Driver,
    offset: f64,
    name: String,
}

impl<'a> TimeShiftedDriver<'a> {
    fn new(inner: &'a dyn Driver, offset: f64) -> Self {
        let name = format!("{} from t={offset}", inner.name());
        Self {
            inner,
            offset,
            name,
        }
    }
}

impl Driver for TimeShiftedDriver<'_> {
    fn evaluate(
        &self,
        t: f64,
        y: f64,
        z1: f64,
        z2: &nalgebra::DVector<f64>,
        state: usize,
    ) -> f64 {
        self.inner.evaluate(t + self.offset, y, z1, z2, state)
    }

    fn lipschitz_mu(&self) -> f64 {
        self.inner.lipschitz_mu()
    }

    fn flags(&self) -> crate::driver::DriverFlags {
        self.inner.flags()
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Splits a grid at its midpoint node.  For a uniform even-step grid the
/// midpoint is exactly `T/2` and every tail node lies in `[s, 2s]`, so the
/// `-s` shift is exact in floating point and the tail step sizes are bitwise
/// the parent's: composed restart solves replay the same arithmetic.
fn split_at_midpoint(time: &TimeGrid) -> Result<(TimeGrid, TimeGrid, f64), PricingError> {
    let n = time.n_steps();
    if n % 2 != 0 {
        return Err(PricingError::OddTimeSteps(n));
    }
    let k = n / 2;
    let s = time.node(k);
    let nodes = time.nodes();
    let head = TimeGrid::from_nodes(nodes[..=k].to_vec()).expect("prefix of a valid grid");
    let tail = TimeGrid::from_nodes(nodes[k..].iter().map(|t| t - s).collect())
        .expect("shifted suffix of a valid grid");
    Ok((head, tail, s))
}

/// Restart parameters for the checks that need the finite-difference
/// machinery regardless of the quoting backend.
fn pde_params(backend: &PricingBackend, claims: &[TerminalClaim]) -> (TimeGrid, PdeConfig) {
    match backend {
        PricingBackend::Pde { time, config } => (time.clone(), config.clone()),
        PricingBackend::Lsmc { batch, .. } => {
            let horizon = batch.grid.horizon();
            let scale = claims
                .iter()
                .map(|q| q.growth_scale())
                .fold(0.0f64, f64::max);
            (
                TimeGrid::uniform(horizon, 200),
                PdeConfig::new(crate::solver::WGrid::auto(horizon, scale)),
            )
        }
    }
}

/// `E(Q)` at `t = 0` for the nested restart checks, via a plain solve.
fn pde_value(
    a: &RateMatrix,
    x0: usize,
    driver: &dyn Driver,
    terminal: &TerminalData,
    time: &TimeGrid,
    config: &PdeConfig,
) -> Result<f64, SolveError> {
    Ok(solve_pde(a, x0, driver, terminal, time, config)?.report.y0)
}

/// Numerically checks the six properties of the induced evaluation on a
/// claim family.  Order relations between claims are established pointwise
/// on a probe grid; restart-based checks (time consistency, locality) run on
/// the finite-difference backend, where composition is exact at scheme
/// level.  Fails with the witness inputs when any check misses its
/// tolerance `2 (SE + scheme error)`.
pub fn axiom_suite(
    spec: &SublinearSpec,
    claims: &[TerminalClaim],
    a: &RateMatrix,
    x0: usize,
    backend: &PricingBackend,
) -> Result<AxiomReport, PricingError> {
    let n_states = a.n_states();
    let horizon = backend.horizon();
    let mut checks = Checks(Vec::new());

    let base: Vec<Leg> = claims
        .iter()
        .map(|q| backend.solve_leg(a, x0, spec.driver(), q))
        .collect::<Result<_, _>>()?;

    // Pointwise probe table over w and states, for order and constancy.
    let scale = claims
        .iter()
        .map(|q| q.growth_scale())
        .fold(0.0f64, f64::max);
    let w_max = 4.0 * horizon.sqrt() * (1.0 + scale);
    let probes: Vec<f64> = (0..81)
        .map(|j| -w_max + 2.0 * w_max * j as f64 / 80.0)
        .collect();
    let table: Vec<DMatrix<f64>> = claims
        .iter()
        .map(|q| DMatrix::from_fn(n_states, probes.len(), |i, j| q.evaluate(probes[j], i)))
        .collect();

    // 1. Monotonicity: a shifted claim dominates its original, and any pair
    // ordered everywhere on the probe grid must price in the same order.
    let delta = 0.3;
    for (i, q) in claims.iter().enumerate() {
        let shifted = q.shifted(delta);
        let leg = backend.solve_leg(a, x0, spec.driver(), &shifted)?;
        checks.push(
            Axiom::Monotonicity,
            Relation::GreaterEq,
            format!("E({}) >= E({})", shifted.name(), q.name()),
            leg.value,
            base[i].value,
            floored(2.0 * (leg.err() + base[i].err()), base[i].value),
        );
    }
    for i in 0..claims.len() {
        for j in 0..claims.len() {
            if i == j {
                continue;
            }
            let dominates = table[i] >= table[j];
            let strict = table[i].iter().zip(table[j].iter()).any(|(a, b)| a > b);
            if dominates && strict {
                checks.push(
                    Axiom::Monotonicity,
                    Relation::GreaterEq,
                    format!("{} >= {} on probes", claims[i].name(), claims[j].name()),
                    base[i].value,
                    base[j].value,
                    floored(2.0 * (base[i].err() + base[j].err()), base[i].value),
                );
            }
        }
    }

    // 2. Constant preservation, for the claims that are constant on probes.
    for (i, q) in claims.iter().enumerate() {
        let first = table[i][(0, 0)];
        if table[i].iter().all(|&v| v == first) {
            checks.push(
                Axiom::ConstantPreservation,
                Relation::Eq,
                format!("E({}) = {}", q.name(), first),
                base[i].value,
                first,
                floored(2.0 * base[i].err(), first),
            );
        }
    }

    // 3./4. Restart checks on the finite-difference machinery.
    let (time, pde_config) = pde_params(backend, claims);
    let (head, tail, s) = split_at_midpoint(&time)?;
    let shifted_driver = TimeShiftedDriver::new(spec.driver(), s);
    let direct: Vec<f64> = match backend {
        PricingBackend::Pde { .. } => base.iter().map(|l| l.value).collect(),
        PricingBackend::Lsmc { .. } => claims
            .iter()
            .map(|q| {
                pde_value(
                    a,
                    x0,
                    spec.driver(),
                    &TerminalData::Claim(q.clone()),
                    &time,
                    &pde_config,
                )
            })
            .collect::<Result<_, _>>()?,
    };
    let direct_scheme: Vec<f64> = match backend {
        PricingBackend::Pde { .. } => base.iter().map(|l| l.scheme).collect(),
        PricingBackend::Lsmc { .. } => vec![0.05 * time.max_dt().max(pde_config.space.dw()); claims.len()],
    };

    // Zero branch of the locality partition: the sub-solve of the zero claim
    // must be the zero surface (exact for drivers vanishing on constants).
    let zero_tail = solve_pde(
        a,
        x0,
        &shifted_driver,
        &TerminalData::Claim(TerminalClaim::constant(0.0)),
        &tail,
        &pde_config,
    )?;
    let zero_sup = zero_tail.surface.values()[0].amax();
    checks.push(
        Axiom::Locality,
        Relation::Eq,
        "E over [s,T] of the zero claim is the zero surface".to_string(),
        zero_sup,
        0.0,
        1e-12,
    );

    for (i, q) in claims.iter().enumerate() {
        let tail_sol = solve_pde(
            a,
            x0,
            &shifted_driver,
            &TerminalData::Claim(q.clone()),
            &tail,
            &pde_config,
        )?;
        let surface_at_s = tail_sol.surface.values()[0].clone();

        // Time consistency: restarting the head solve from the sub-solve's
        // surface replays the direct solve bit for bit (uniform grids; see
        // the midpoint-split note).
        let restarted = pde_value(
            a,
            x0,
            spec.driver(),
            &TerminalData::GridValues(surface_at_s.clone()),
            &head,
            &pde_config,
        )?;
        checks.push(
            Axiom::TimeConsistency,
            Relation::Eq,
            format!("{}: restart at t={s} equals the direct solve", q.name()),
            restarted,
            direct[i],
            0.0,
        );

        // Locality on the partition {X_s = e_i}: the masked restart is the
        // evaluation of 1_A Q, so the masked prices must sum above the full
        // price (subadditivity over the partition) and, for nonnegative
        // claims, sit below it (monotonicity).  Composition doubles the
        // number of solves the scheme error can accumulate over.
        let tol_loc = floored(
            2.0 * (n_states as f64 + 1.0) * direct_scheme[i],
            direct[i],
        );
        let nonnegative = table[i].iter().all(|&v| v >= 0.0);
        let mut masked_sum = 0.0;
        for ev in 0..n_states {
            let mut masked = DMatrix::zeros(n_states, surface_at_s.ncols());
            masked.set_row(ev, &surface_at_s.row(ev));
            let nested = pde_value(
                a,
                x0,
                spec.driver(),
                &TerminalData::GridValues(masked),
                &head,
                &pde_config,
            )?;
            masked_sum += nested;
            if nonnegative {
                checks.push(
                    Axiom::Locality,
                    Relation::GreaterEq,
                    format!("{}: full price >= state-{ev} masked price", q.name()),
                    direct[i],
                    nested,
                    tol_loc,
                );
            }
        }
        checks.push(
            Axiom::Locality,
            Relation::GreaterEq,
            format!("{}: sum of state-masked prices >= full price", q.name()),
            masked_sum,
            direct[i],
            tol_loc,
        );
    }

    // 5. Subadditivity over all claim pairs.
    for i in 0..claims.len() {
        for j in (i + 1)..claims.len() {
            let sum = &claims[i] + &claims[j];
            let leg = backend.solve_leg(a, x0, spec.driver(), &sum)?;
            checks.push(
                Axiom::Subadditivity,
                Relation::GreaterEq,
                format!(
                    "E({}) + E({}) >= E({})",
                    claims[i].name(),
                    claims[j].name(),
                    sum.name()
                ),
                base[i].value + base[j].value,
                leg.value,
                floored(
                    2.0 * (base[i].err() + base[j].err() + leg.err()),
                    leg.value,
                ),
            );
        }
    }

    // 6. Positive homogeneity; lambda = 1 re-solves a bitwise-identical
    // problem, so it is held to zero tolerance.
    for (i, q) in claims.iter().enumerate() {
        for lambda in [0.0, 0.5, 1.0, 2.0] {
            let scaled = q.scaled(lambda);
            let leg = backend.solve_leg(a, x0, spec.driver(), &scaled)?;
            let tol = if lambda == 1.0 {
                0.0
            } else {
                floored(
                    2.0 * (leg.err() + lambda * base[i].err()),
                    lambda * base[i].value,
                )
            };
            checks.push(
                Axiom::PositiveHomogeneity,
                Relation::Eq,
                format!("E({}) = {}*E({})", scaled.name(), lambda, q.name()),
                leg.value,
                lambda * base[i].value,
                tol,
            );
        }
    }

    let report = AxiomReport {
        spec: spec.name().to_string(),
        checks: checks.0,
    };
    if report.passes() {
        Ok(report)
    } else {
        Err(PricingError::AxiomViolationBeyondTolerance { report })
    }
}

/// A drift point of the brute-force supremum: the constant measure change
/// `theta` and the Monte Carlo mean of the claim under it.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DriftValue {
    pub theta: f64,
    pub mean: f64,
    pub std_error: f64,
}

/// Outcome of [`supremum_crosscheck`].
#[derive(Debug, Clone, Serialize)]
pub struct SupremumReport {
    pub solver_value: f64,
    pub grid_max: f64,
    pub best_drift: f64,
    pub drift_values: Vec<DriftValue>,
    /// Worst per-drift Monte Carlo standard error.
    pub std_error: f64,
    pub scheme_error: f64,
    /// Largest gap between adjacent drift means, a bound on what the finite
    /// grid can miss.
    pub grid_resolution: f64,
    pub tolerance: f64,
    /// `solver_value >= grid_max - tolerance`.  Strict excess is expected
    /// for claims whose optimal drift is not constant.
    pub consistent: bool,
}

/// Compares `E(Q)` under `kappa |z1|` against the maximum over a grid of
/// constant drifts `theta in [-kappa, kappa]` of the drifted Monte Carlo
/// mean of `Q`.  The solver optimizes over adapted drifts, so it may
/// legitimately exceed the grid maximum; it must never fall below it by more
/// than the combined tolerance.
#[allow(clippy::too_many_arguments)]
pub fn supremum_crosscheck(
    kappa: f64,
    claim: &TerminalClaim,
    a: &RateMatrix,
    x0: usize,
    backend: &PricingBackend,
    n_drifts: usize,
    n_samples: usize,
    seed: u64,
) -> Result<SupremumReport, PricingError> {
    assert!(n_drifts >= 2, "need at least the two endpoint drifts");
    assert!(n_samples >= 2);
    let spec = SublinearSpec::verify(
        Arc::new(BrownianAmbiguityDriver::new(kappa)),
        a,
        &CheckOptions::default(),
    )?;
    let leg = backend.solve_leg(a, x0, spec.driver(), claim)?;
    let horizon = backend.horizon();

    // The chain is untouched by the Brownian measure change, so terminal
    // states and normal draws are shared across every drift.
    let samples: Vec<(usize, f64)> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut chain_rng = stream_rng(seed, i, CROSSCHECK_CHAIN_TAG);
            let state = simulate_chain(a, x0, horizon, &mut chain_rng).terminal_state();
            let mut normal_rng = stream_rng(seed, i, CROSSCHECK_NORMAL_TAG);
            let xi: f64 = normal_rng.sample(StandardNormal);
            (state, xi)
        })
        .collect();

    let sqrt_t = horizon.sqrt();
    let drift_values: Vec<DriftValue> = (0..n_drifts)
        .map(|j| {
            let theta = -kappa + 2.0 * kappa * j as f64 / (n_drifts - 1) as f64;
            let mut sum = 0.0;
            let mut sq = 0.0;
            for &(state, xi) in &samples {
                let v = claim.evaluate(sqrt_t * xi + theta * horizon, state);
                sum += v;
                sq += v * v;
            }
            let mean = sum / n_samples as f64;
            let var = (sq - n_samples as f64 * mean * mean).max(0.0) / (n_samples - 1) as f64;
            DriftValue {
                theta,
                mean,
                std_error: (var / n_samples as f64).sqrt(),
            }
        })
        .collect();

    let best = drift_values
        .iter()
        .fold(&drift_values[0], |m, d| if d.mean > m.mean { d } else { m });
    let grid_resolution = drift_values
        .windows(2)
        .map(|w| (w[1].mean - w[0].mean).abs())
        .fold(0.0f64, f64::max);
    let std_error = drift_values
        .iter()
        .map(|d| d.std_error)
        .fold(0.0f64, f64::max);
    let tolerance = 3.0 * (std_error + leg.se) + leg.scheme + grid_resolution;
    Ok(SupremumReport {
        solver_value: leg.value,
        grid_max: best.mean,
        best_drift: best.theta,
        drift_values: drift_values.clone(),
        std_error,
        scheme_error: leg.scheme,
        grid_resolution,
        tolerance,
        consistent: leg.value >= best.mean - tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{AffineDriver, ZeroDriver};
    use crate::paths::generate_batch;
    use crate::solver::WGrid;
    use nalgebra::DVector;

    fn two_state() -> RateMatrix {
        RateMatrix::two_state_symmetric(1.0, 0.5).unwrap()
    }

    fn pde_backend(n_steps: usize, half_width: f64, nodes: usize) -> PricingBackend {
        PricingBackend::pde(
            TimeGrid::uniform(1.0, n_steps),
            PdeConfig::new(WGrid::new(half_width, nodes).unwrap()),
        )
    }

    struct LyingDriver;

    impl Driver for LyingDriver {
        fn evaluate(&self, _t: f64, _y: f64, z1: f64, _z2: &DVector<f64>, _state: usize) -> f64 {
            z1 * z1
        }

        fn lipschitz_mu(&self) -> f64 {
            100.0
        }

        fn flags(&self) -> crate::driver::DriverFlags {
            crate::driver::DriverFlags {
                subadditive: true,
                positively_homogeneous: true,
                zero_at_zero_z: true,
            }
        }

        fn name(&self) -> &str {
            "z1^2 (misdeclared)"
        }
    }

    #[test]
    fn verification_gates_on_flags_and_behavior() {
        let a = two_state();
        let affine = AffineDriver::from_constants(
            &a,
            1.0,
            0.3,
            0.2,
            DVector::from_element(2, 0.0),
            0.0,
            0.1,
        );
        match SublinearSpec::verify(Arc::new(affine), &a, &CheckOptions::default()) {
            Err(PricingError::NotSublinear { .. }) => {}
            other => panic!("expected flag rejection, got {other:?}"),
        }
        match SublinearSpec::verify(Arc::new(LyingDriver), &a, &CheckOptions::default()) {
            Err(PricingError::SpecRejected { check, .. }) => assert_eq!(check, "declared-flags"),
            other => panic!("expected behavior rejection, got {other:?}"),
        }
        assert!(SublinearSpec::verify(Arc::new(ZeroDriver), &a, &CheckOptions::default()).is_ok());
        assert!(SublinearSpec::brownian_ambiguity(0.2, &a).is_ok());
    }

    #[test]
    fn ambiguity_quote_is_exact_for_linear_claims() {
        let a = two_state();
        let spec = SublinearSpec::brownian_ambiguity(0.2, &a).unwrap();
        let backend = pde_backend(250, 8.0, 241);
        let q = quote(&spec, &TerminalClaim::brownian(), &a, 0, &backend).unwrap();
        // Linear-in-w solutions are exact on the scheme, so the drift bound
        // is attained to roundoff: ask = kappa T, bid = -kappa T.
        assert!((q.ask - 0.2).abs() < 1e-9, "ask {}", q.ask);
        assert!((q.bid + 0.2).abs() < 1e-9, "bid {}", q.bid);
        assert!((q.spread() - 0.4).abs() < 1e-8);
        assert_eq!(q.spec, spec.name());
        assert!(q.std_error == 0.0);
    }

    #[test]
    fn zero_driver_collapses_the_spread() {
        let a = two_state();
        let spec =
            SublinearSpec::verify(Arc::new(ZeroDriver), &a, &CheckOptions::default()).unwrap();
        let backend = pde_backend(100, 12.0, 241);
        let q = quote(&spec, &TerminalClaim::brownian_squared(), &a, 0, &backend).unwrap();
        assert!((q.ask - 1.0).abs() < 1e-6, "E[W_1^2] = 1, got {}", q.ask);
        assert!(q.spread().abs() <= q.tolerance(), "spread {}", q.spread());
    }

    #[test]
    fn quotes_grow_with_ambiguity_and_scale_with_the_claim() {
        let a = two_state();
        let backend = pde_backend(64, 8.0, 121);
        let claim = TerminalClaim::brownian();
        let lo = quote(
            &SublinearSpec::brownian_ambiguity(0.1, &a).unwrap(),
            &claim,
            &a,
            0,
            &backend,
        )
        .unwrap();
        let hi_spec = SublinearSpec::brownian_ambiguity(0.3, &a).unwrap();
        let hi = quote(&hi_spec, &claim, &a, 0, &backend).unwrap();
        assert!(lo.ask <= hi.ask + lo.tolerance() + hi.tolerance());
        let doubled = quote(&hi_spec, &claim.scaled(2.0), &a, 0, &backend).unwrap();
        assert!(
            (doubled.ask - 2.0 * hi.ask).abs() <= doubled.tolerance() + 2.0 * hi.tolerance(),
            "{} vs {}",
            doubled.ask,
            2.0 * hi.ask
        );
    }

    #[test]
    fn monte_carlo_backend_prices_the_drift_bound() {
        let a = two_state();
        let spec = SublinearSpec::brownian_ambiguity(0.2, &a).unwrap();
        let batch = Arc::new(generate_batch(&a, 0, &TimeGrid::uniform(1.0, 32), 4000, 7));
        let backend = PricingBackend::lsmc(batch, LsmcConfig::default());
        let q = quote(&spec, &TerminalClaim::brownian(), &a, 0, &backend).unwrap();
        assert!(
            (q.ask - 0.2).abs() <= 3.0 * (q.std_error + q.scheme_error) + 0.02,
            "ask {} se {} scheme {}",
            q.ask,
            q.std_error,
            q.scheme_error
        );
        assert!(q.bid <= q.ask + q.tolerance());
    }

    #[test]
    fn quote_table_matches_individual_quotes() {
        let a = two_state();
        let spec = SublinearSpec::brownian_ambiguity(0.15, &a).unwrap();
        let backend = pde_backend(32, 8.0, 61);
        let claims = vec![
            TerminalClaim::brownian(),
            TerminalClaim::constant(0.5),
            TerminalClaim::state_indicator(1),
        ];
        let table = quote_table(&spec, &claims, &a, 0, &backend).unwrap();
        assert_eq!(table.len(), 3);
        for (q, c) in table.iter().zip(&claims) {
            let single = quote(&spec, c, &a, 0, &backend).unwrap();
            assert_eq!(q.ask.to_bits(), single.ask.to_bits());
            assert_eq!(q.bid.to_bits(), single.bid.to_bits());
        }
    }

    #[test]
    fn restart_at_the_midpoint_is_bitwise() {
        let a = two_state();
        let spec = SublinearSpec::brownian_ambiguity(0.2, &a).unwrap();
        let time = TimeGrid::uniform(1.0, 128);
        let config = PdeConfig::new(WGrid::new(12.0, 121).unwrap());
        let claim = TerminalClaim::brownian_squared();
        let direct = pde_value(
            &a,
            0,
            spec.driver(),
            &TerminalData::Claim(claim.clone()),
            &time,
            &config,
        )
        .unwrap();
        let (head, tail, s) = split_at_midpoint(&time).unwrap();
        let shifted = TimeShiftedDriver::new(spec.driver(), s);
        let tail_sol = solve_pde(
            &a,
            0,
            &shifted,
            &TerminalData::Claim(claim),
            &tail,
            &config,
        )
        .unwrap();
        let restarted = pde_value(
            &a,
            0,
            spec.driver(),
            &TerminalData::GridValues(tail_sol.surface.values()[0].clone()),
            &head,
            &config,
        )
        .unwrap();
        assert_eq!(direct.to_bits(), restarted.to_bits());
    }

    #[test]
    fn axiom_suite_passes_on_a_small_family() {
        let a = two_state();
        let spec = SublinearSpec::brownian_ambiguity(0.2, &a).unwrap();
        let backend = pde_backend(64, 8.0, 61);
        let claims = vec![
            TerminalClaim::brownian(),
            TerminalClaim::constant(0.7),
            TerminalClaim::state_indicator(1),
        ];
        let report = axiom_suite(&spec, &claims, &a, 0, &backend).unwrap();
        assert!(report.passes());
        for axiom in [
            Axiom::Monotonicity,
            Axiom::ConstantPreservation,
            Axiom::TimeConsistency,
            Axiom::Locality,
            Axiom::Subadditivity,
            Axiom::PositiveHomogeneity,
        ] {
            assert!(
                report.checks.iter().any(|c| c.axiom == axiom),
                "no check ran for {axiom}"
            );
        }
        assert!(report.summary().contains("passed"));
    }

    #[test]
    fn axiom_suite_runs_on_the_monte_carlo_backend() {
        let a = two_state();
        let spec = SublinearSpec::brownian_ambiguity(0.2, &a).unwrap();
        let batch = Arc::new(generate_batch(&a, 0, &TimeGrid::uniform(1.0, 32), 4000, 11));
        let backend = PricingBackend::lsmc(batch, LsmcConfig::default());
        let claims = vec![TerminalClaim::brownian(), TerminalClaim::constant(0.7)];
        let report = axiom_suite(&spec, &claims, &a, 0, &backend).unwrap();
        assert!(report.passes(), "{}", report.summary());
    }

    #[test]
    fn failed_checks_are_reported_with_witnesses() {
        let mut checks = Checks(Vec::new());
        checks.push(
            Axiom::Subadditivity,
            Relation::GreaterEq,
            "E(a) + E(b) >= E(a+b)".to_string(),
            1.0,
            2.0,
            0.1,
        );
        let report = AxiomReport {
            spec: "test".to_string(),
            checks: checks.0,
        };
        assert!(!report.passes());
        assert_eq!(report.failures().len(), 1);
        assert!(report.summary().contains("E(a) + E(b)"));
        let err = PricingError::AxiomViolationBeyondTolerance { report };
        assert!(err.to_string().contains("1/1 checks failed"));
    }

    #[test]
    fn crosscheck_attains_the_bound_for_linear_claims() {
        let a = two_state();
        let backend = pde_backend(100, 8.0, 241);
        let report = supremum_crosscheck(
            0.2,
            &TerminalClaim::brownian(),
            &a,
            0,
            &backend,
            9,
            20_000,
            123,
        )
        .unwrap();
        assert!(report.consistent);
        assert!((report.best_drift - 0.2).abs() < 1e-9, "best at the edge");
        assert!(
            (report.solver_value - report.grid_max).abs() <= report.tolerance,
            "linear claims attain the constant-drift bound: {} vs {}",
            report.solver_value,
            report.grid_max
        );
    }

    #[test]
    fn crosscheck_allows_strict_excess_for_convex_claims() {
        let a = two_state();
        let backend = pde_backend(100, 16.0, 241);
        let report = supremum_crosscheck(
            0.2,
            &TerminalClaim::brownian_squared(),
            &a,
            0,
            &backend,
            9,
            20_000,
            123,
        )
        .unwrap();
        // max over constant drifts is T + kappa^2 T^2; adapted drifts beat it.
        assert!(report.consistent);
        assert!(report.solver_value >= 1.0, "at least the driftless mean");
        assert!(report.grid_max > 1.0 && report.grid_max < 1.2);
    }

    #[test]
    fn value_slices_agree_between_backends() {
        let a = two_state();
        let spec =
            SublinearSpec::verify(Arc::new(ZeroDriver), &a, &CheckOptions::default()).unwrap();
        let claim = TerminalClaim::brownian_squared();
        let pde = pde_backend(100, 12.0, 241);
        let slice = sublinear_expectation(&spec, &claim, 0.5, &a, 0, &pde).unwrap();
        assert!((slice.t - 0.5).abs() < 1e-12);
        // E[W_1^2 | W_.5 = w] = w^2 + 0.5 under the zero driver.
        assert!((slice.value_at(0, 0.0) - 0.5).abs() < 1e-3);
        assert!((slice.value_at(1, 1.0) - 1.5).abs() < 1e-3);

        let batch = Arc::new(generate_batch(&a, 0, &TimeGrid::uniform(1.0, 32), 4000, 3));
        let lsmc = PricingBackend::lsmc(batch, LsmcConfig::default());
        let mc_slice = sublinear_expectation(&spec, &claim, 0.5, &a, 0, &lsmc).unwrap();
        for state in 0..2 {
            let v = mc_slice.value_at(state, 0.3);
            assert!(v.is_finite(), "state {state} unvisited at the midpoint");
            assert!((v - (0.09 + 0.5)).abs() < 0.15, "got {v}");
        }
        let origin = sublinear_expectation(&spec, &claim, 0.0, &a, 0, &lsmc).unwrap();
        assert_eq!(origin.ws, vec![0.0]);
        assert!(origin.values[(0, 0)].is_finite());
        assert!(origin.values[(1, 0)].is_nan(), "no paths start in state 1");
    }
}
