//! Closed-form Monte Carlo estimators used to cross-check the numerical
//! backends on analytically solvable problems.
//!
//! Two families are covered:
//!
//! * drivers independent of `(y, z1, z2)`, where
//!   `Y_0 = E[ Q + integral_0^T F(u, X_u) du ]`, and
//! * fully affine drivers, where `Y_0` has the adjoint representation
//!   `Y_0 = E[ E(G)_T Q + integral_0^T E(G)_{u-} phi_u du ]` with `E(G)` the
//!   stochastic exponential of
//!   `G_t = int rho du + int alpha dW + int gamma beta psi^+ dM`.
//!
//! Because `dM = dX - A X dt`, the exponential's continuous log-increment
//! carries the compensator drift `-gamma beta psi^+ A X` alongside
//! `rho - alpha^2 / 2`; jumps contribute exact factors
//! `1 + gamma beta psi^+ (e_j - e_i)` at each `i -> j` transition.  Time
//! integrals of the coefficient functions are evaluated by adaptive
//! quadrature per constant-state segment; stochastic integrals against `dW`
//! are discretised at the left grid node.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::chain::{unit_vector, RateMatrix};
use crate::claim::TerminalClaim;
use crate::driver::LinearDriverSpec;
use crate::paths::{JointPath, PathBatch};

/// Absolute tolerance of the per-segment time quadrature.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// Relative tolerance when testing whether `beta` lies in the range of `psi`.
pub const BETA_RANGE_TOL: f64 = 1e-8;

/// Adaptive Simpson integration of a smooth scalar function.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, 40)
}

/// Aggregated anomaly counters from a closed-form estimate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleWarnings {
    /// Jumps where the exponential's factor `1 + dG` was not positive; the
    /// positivity premise of the representation fails on those paths.
    pub non_positive_jump_factors: usize,
    /// First offending jump, as `(path index, jump time)`.
    pub first_non_positive: Option<(usize, f64)>,
    /// States where `beta` has a component outside the range of `psi`; the
    /// representation silently drops that component.
    pub beta_outside_range: Vec<usize>,
}

impl OracleWarnings {
    pub fn is_clean(&self) -> bool {
        self.non_positive_jump_factors == 0 && self.beta_outside_range.is_empty()
    }
}

/// A Monte Carlo value with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub warnings: OracleWarnings,
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 2, "need at least two paths for a standard error");
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var.max(0.0) / n as f64).sqrt())
}

/// Estimates `Y_0 = E[Q + integral_0^T f(u, X_u) du]` for a driver that
/// depends on `(t, state)` only.  The time integral is evaluated by adaptive
/// quadrature over each constant-state segment of the exact chain path.
pub fn simple_bsde_mc(
    f: &(dyn Fn(f64, usize) -> f64 + Sync),
    claim: &TerminalClaim,
    batch: &PathBatch,
) -> McEstimate {
    let values: Vec<f64> = batch
        .paths
        .par_iter()
        .map(|p| {
            let w_t: f64 = p.brownian_increments.iter().sum();
            let q = claim.evaluate(w_t, p.chain.terminal_state());
            let drift: f64 = p
                .chain
                .segments()
                .map(|(a, b, s)| integrate(&|u| f(u, s), a, b, QUADRATURE_TOL))
                .sum();
            q + drift
        })
        .collect();
    let (value, std_error) = mean_and_se(&values);
    McEstimate {
        value,
        std_error,
        n_paths: values.len(),
        warnings: OracleWarnings::default(),
    }
}

/// Per-state constants shared by all paths of a linear estimate.
struct LinearStateData {
    pinv: DMatrix<f64>,
    /// `psi^+ A e_i` — multiplies `gamma beta` in the compensator drift.
    pinv_drift: DVector<f64>,
}

/// The stochastic exponential `E(G)` evaluated along one joint path.
#[derive(Debug, Clone)]
pub struct DoleansPath {
    /// `E(G)` at the grid nodes (`node_values[0] = 1`).
    pub node_values: Vec<f64>,
    /// `(time, 1 + dG)` at each chain jump, in order.
    pub jump_factors: Vec<(f64, f64)>,
    /// `integral_0^T E(G)_{u-} phi_u du`, with `E(G)` frozen at the left grid
    /// node of each interval.
    pub forcing_integral: f64,
}

impl DoleansPath {
    pub fn terminal(&self) -> f64 {
        *self.node_values.last().unwrap()
    }
}

fn doleans_along(
    spec: &LinearDriverSpec,
    states: &[LinearStateData],
    path: &JointPath,
    grid_nodes: &[f64],
) -> DoleansPath {
    let n_steps = grid_nodes.len() - 1;
    let mut node_values = Vec::with_capacity(n_steps + 1);
    let mut jump_factors = Vec::new();
    let mut e = 1.0_f64;
    node_values.push(e);
    let mut forcing = 0.0;
    let mut w_left = 0.0;
    for k in 0..n_steps {
        let (t0, t1) = (grid_nodes[k], grid_nodes[k + 1]);
        let mut log_cont = 0.0;
        let mut phi_seg = 0.0;
        for (a, b, s) in path.chain.segments() {
            let (lo, hi) = (a.max(t0), b.min(t1));
            if hi <= lo {
                continue;
            }
            let sd = &states[s];
            log_cont += integrate(
                &|u| {
                    let beta = (spec.beta)(u, s);
                    let alpha = (spec.alpha)(u, s);
                    (spec.rho)(u, s) - (spec.gamma)(u, s) * beta.dot(&sd.pinv_drift)
                        - 0.5 * alpha * alpha
                },
                lo,
                hi,
                QUADRATURE_TOL,
            );
            phi_seg += integrate(&|u| (spec.phi)(u, w_left, s), lo, hi, QUADRATURE_TOL);
        }
        let mut jump_part = 1.0;
        for (tau, from, to) in path.chain.jumps() {
            if tau > t0 && tau <= t1 {
                let beta = (spec.beta)(tau, from);
                let d = unit_vector(spec.n_states, to) - unit_vector(spec.n_states, from);
                let factor = 1.0 + (spec.gamma)(tau, from) * beta.dot(&(&states[from].pinv * d));
                jump_factors.push((tau, factor));
                jump_part *= factor;
            }
        }
        forcing += e * phi_seg;
        let state_left = path.chain.state_at(t0);
        let alpha_left = (spec.alpha)(t0, state_left);
        let dw = path.brownian_increments[k];
        e *= (log_cont + alpha_left * dw).exp() * jump_part;
        node_values.push(e);
        w_left += dw;
    }
    DoleansPath {
        node_values,
        jump_factors,
        forcing_integral: forcing,
    }
}

/// Evaluates the stochastic exponential of one path; exposed for diagnostics
/// and tests.
pub fn doleans_exponential(
    spec: &LinearDriverSpec,
    a: &RateMatrix,
    path: &JointPath,
    grid_nodes: &[f64],
) -> DoleansPath {
    let states = linear_state_data(spec, a);
    doleans_along(spec, &states, path, grid_nodes)
}

fn linear_state_data(spec: &LinearDriverSpec, a: &RateMatrix) -> Vec<LinearStateData> {
    assert_eq!(spec.n_states, a.n_states());
    (0..a.n_states())
        .map(|i| {
            let pinv = a.psi(i).pinv();
            let pinv_drift = &pinv * a.drift_column(i);
            LinearStateData { pinv, pinv_drift }
        })
        .collect()
}

/// Closed-form Monte Carlo estimate of `Y_0` for an affine driver
/// `F = phi + rho y + alpha z1 + gamma beta . z2` via the adjoint
/// representation `Y_0 = E[E(G)_T Q + integral_0^T E(G)_{u-} phi_u du]`.
///
/// The estimate is always returned; paths with a non-positive jump factor or
/// a `beta` outside the range of `psi` (whose kernel component the
/// representation cannot see) are tallied in the warnings.
pub fn linear_bsde_mc(
    spec: &LinearDriverSpec,
    claim: &TerminalClaim,
    a: &RateMatrix,
    batch: &PathBatch,
) -> McEstimate {
    let states = linear_state_data(spec, a);
    let horizon = batch.grid.horizon();
    let mut warnings = OracleWarnings::default();
    // Range compatibility probed at a few times per state, once per call.
    for state in 0..a.n_states() {
        let psi = a.psi(state).matrix().clone();
        let out_of_range = [0.0, 0.5 * horizon, horizon].iter().any(|&t| {
            let beta = (spec.beta)(t, state);
            let residual = &psi * (&states[state].pinv * &beta) - &beta;
            residual.amax() > BETA_RANGE_TOL * beta.amax().max(1.0)
        });
        if out_of_range {
            warnings.beta_outside_range.push(state);
        }
    }
    let per_path: Vec<(f64, Option<f64>)> = batch
        .paths
        .par_iter()
        .map(|p| {
            let d = doleans_along(spec, &states, p, batch.grid.nodes());
            let w_t: f64 = p.brownian_increments.iter().sum();
            let q = claim.evaluate(w_t, p.chain.terminal_state());
            let bad = d
                .jump_factors
                .iter()
                .find(|&&(_, f)| f <= 0.0)
                .map(|&(t, _)| t);
            (d.terminal() * q + d.forcing_integral, bad)
        })
        .collect();
    for (idx, (_, bad)) in per_path.iter().enumerate() {
        if let Some(t) = bad {
            warnings.non_positive_jump_factors += 1;
            warnings.first_non_positive.get_or_insert((idx, *t));
        }
    }
    let values: Vec<f64> = per_path.iter().map(|(v, _)| *v).collect();
    let (value, std_error) = mean_and_se(&values);
    McEstimate {
        value,
        std_error,
        n_paths: values.len(),
        warnings,
    }
}

/// Mean of the terminal stochastic exponential over a batch; equals 1 in
/// expectation whenever `rho = 0` (the exponential is then a martingale).
pub fn doleans_terminal_mean(spec: &LinearDriverSpec, a: &RateMatrix, batch: &PathBatch) -> McEstimate {
    let states = linear_state_data(spec, a);
    let values: Vec<f64> = batch
        .paths
        .par_iter()
        .map(|p| doleans_along(spec, &states, p, batch.grid.nodes()).terminal())
        .collect();
    let (value, std_error) = mean_and_se(&values);
    McEstimate {
        value,
        std_error,
        n_paths: values.len(),
        warnings: OracleWarnings::default(),
    }
}
