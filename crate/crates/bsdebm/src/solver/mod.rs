//! Backward solvers for the value process `Y_t = u(t, W_t, X_t)`.
//!
//! Matching the backward equation against Ito's formula for Markovian data
//! turns it into the coupled parabolic system
//!
//! ```text
//! d_t u_i + 1/2 d_ww u_i + sum_j a_{ji} u_j + F(t, u_i, d_w u_i, U, e_i) = 0,
//! u_i(T, w) = q(w, i),                    U = (u_0, ..., u_{N-1}),
//! ```
//!
//! solved here by two independent backends: an implicit finite-difference
//! scheme ([`solve_pde`]) and least-squares Monte Carlo backward induction
//! along simulated joint paths ([`solve_lsmc`]).  Both report
//! `y0 = u(0, 0, x0)` plus scheme diagnostics.  [`picard_pde`] and
//! [`picard_lsmc`] expose the staged outer iteration that underlies the
//! solution theory, and [`compare_solutions`] checks order preservation of
//! the solution map under the premises that guarantee it.

mod compare;
mod lsmc;
mod pde;
mod picard;

pub use compare::{
    compare_solutions, CompareConfig, CompareError, ComparisonReport, GridLocation, Premise,
};
pub use lsmc::{solve_lsmc, solve_lsmc_with_terminal, LsmcConfig, LsmcSolution, SampledProcesses};
pub(crate) use lsmc::regress;
pub use pde::{solve_pde, PdeConfig, PdeSolution};
pub use picard::{picard_lsmc, picard_pde, PicardConfig, PicardStaging};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claim::TerminalClaim;
use crate::paths::TimeGrid;

/// How the driver (and chain coupling) enter each backward step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverMode {
    /// Single evaluation at the step-`k+1` surface; first order, cheap.
    Explicit,
    /// Inner fixed point until the step equation holds at the step-`k`
    /// surface; unconditionally stable for small `dt * mu`.
    Implicit,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("inner fixed point stalled at time step {step}: delta {delta:.3e} after {iterations} iterations")]
    NoConvergence {
        step: usize,
        iterations: usize,
        delta: f64,
    },
    #[error(
        "outer iteration did not converge: delta {last_delta:.3e} after {iterations} refinements (last ratio {last_ratio:.3})"
    )]
    OuterNoConvergence {
        iterations: usize,
        last_delta: f64,
        last_ratio: f64,
    },
    #[error("spatial half-width {half_width} too small for horizon: diffusion reaches the boundary (need >= {needed:.3})")]
    GridTooCoarse { half_width: f64, needed: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite values produced at time step {step}")]
    NonFinite { step: usize },
}

/// Uniform symmetric spatial grid on `[-L, L]` with an odd node count, so
/// that `w = 0` (the evaluation point) is a node.
#[derive(Debug, Clone, PartialEq)]
pub struct WGrid {
    half_width: f64,
    n_nodes: usize,
}

impl WGrid {
    pub fn new(half_width: f64, n_nodes: usize) -> Result<Self, SolveError> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(SolveError::InvalidGrid(format!(
                "half-width must be positive and finite, got {half_width}"
            )));
        }
        if n_nodes < 3 || n_nodes % 2 == 0 {
            return Err(SolveError::InvalidGrid(format!(
                "node count must be odd and at least 3, got {n_nodes}"
            )));
        }
        Ok(Self {
            half_width,
            n_nodes,
        })
    }

    /// Default truncation `L = 6 sqrt(T) (1 + payoff scale)` — a Gaussian
    /// tail bound keeps the mass beyond `L` negligible at the evaluation
    /// point — with 241 nodes (coarsenable twice for error estimation).
    pub fn auto(horizon: f64, payoff_scale: f64) -> Self {
        let l = 6.0 * horizon.sqrt() * (1.0 + payoff_scale.max(0.0));
        Self::new(l, 241).unwrap()
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn dw(&self) -> f64 {
        2.0 * self.half_width / (self.n_nodes - 1) as f64
    }

    pub fn node(&self, m: usize) -> f64 {
        -self.half_width + m as f64 * self.dw()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|m| self.node(m)).collect()
    }

    /// Index of the `w = 0` node.
    pub fn center(&self) -> usize {
        (self.n_nodes - 1) / 2
    }

    /// Every other node; requires `n_nodes = 1 mod 4` so the result is again
    /// odd.  Used for spatial error estimation.
    pub fn coarsen(&self) -> Option<WGrid> {
        if (self.n_nodes - 1) % 4 == 0 {
            Some(WGrid {
                half_width: self.half_width,
                n_nodes: (self.n_nodes + 1) / 2,
            })
        } else {
            None
        }
    }

    /// Clamped linear interpolation weights: returns `(m, lambda)` with the
    /// value approximated by `(1 - lambda) u_m + lambda u_{m+1}`.
    pub fn interp_weights(&self, w: f64) -> (usize, f64) {
        let x = (w + self.half_width) / self.dw();
        if x <= 0.0 {
            return (0, 0.0);
        }
        let max = (self.n_nodes - 2) as f64;
        if x >= max + 1.0 {
            return (self.n_nodes - 2, 1.0);
        }
        let m = (x.floor() as usize).min(self.n_nodes - 2);
        (m, x - m as f64)
    }
}

/// Terminal condition for a backward solve: either a claim evaluated on the
/// grid, or values supplied directly (used to restart a solve from an
/// intermediate surface, e.g. for nested evaluations).
#[derive(Clone)]
pub enum TerminalData {
    Claim(TerminalClaim),
    /// `n_states x n_nodes` values of `u_i(T, w_m)`.
    GridValues(DMatrix<f64>),
}

impl TerminalData {
    pub(crate) fn materialize(
        &self,
        n_states: usize,
        space: &WGrid,
    ) -> Result<DMatrix<f64>, SolveError> {
        match self {
            TerminalData::Claim(q) => Ok(DMatrix::from_fn(n_states, space.n_nodes(), |i, m| {
                q.evaluate(space.node(m), i)
            })),
            TerminalData::GridValues(v) => {
                if v.nrows() != n_states || v.ncols() != space.n_nodes() {
                    return Err(SolveError::InvalidGrid(format!(
                        "terminal values are {}x{}, grid needs {}x{}",
                        v.nrows(),
                        v.ncols(),
                        n_states,
                        space.n_nodes()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Finite-difference solution: per-state values and spatial gradients on the
/// full time x space grid.
///
/// The per-state value vector `U(t, w) = (u_0, ..., u_{N-1})` doubles as the
/// canonical jump-integrand representative: its component at the current
/// state is the value itself, which pins down the seminorm-kernel ambiguity.
#[derive(Debug, Clone)]
pub struct SolutionSurface {
    time: TimeGrid,
    space: WGrid,
    /// `values[k]` is `n_states x n_nodes` at time node `k`.
    values: Vec<DMatrix<f64>>,
    /// Spatial gradient per node, central differences inside, one-sided at
    /// the edges.
    z1: Vec<DMatrix<f64>>,
}

impl SolutionSurface {
    pub(crate) fn new(time: TimeGrid, space: WGrid, values: Vec<DMatrix<f64>>) -> Self {
        let dw = space.dw();
        let z1 = values.iter().map(|v| gradient_matrix(v, dw)).collect();
        Self {
            time,
            space,
            values,
            z1,
        }
    }

    pub fn n_states(&self) -> usize {
        self.values[0].nrows()
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn space(&self) -> &WGrid {
        &self.space
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn z1_surfaces(&self) -> &[DMatrix<f64>] {
        &self.z1
    }

    pub fn value(&self, k: usize, state: usize, m: usize) -> f64 {
        self.values[k][(state, m)]
    }

    pub fn z1(&self, k: usize, state: usize, m: usize) -> f64 {
        self.z1[k][(state, m)]
    }

    /// Per-state value vector `U(t_k, w_m)`.
    pub fn state_vector(&self, k: usize, m: usize) -> DVector<f64> {
        self.values[k].column(m).into_owned()
    }

    /// Linear interpolation in `w` at time node `k` (clamped at the edges).
    pub fn interpolate(&self, k: usize, state: usize, w: f64) -> f64 {
        let (m, lambda) = self.space.interp_weights(w);
        (1.0 - lambda) * self.values[k][(state, m)] + lambda * self.values[k][(state, m + 1)]
    }

    /// Value at `t = 0`, `w = 0` in the given state.
    pub fn y0(&self, state: usize) -> f64 {
        self.values[0][(state, self.space.center())]
    }
}

pub(crate) fn gradient_matrix(v: &DMatrix<f64>, dw: f64) -> DMatrix<f64> {
    let (n, m) = v.shape();
    DMatrix::from_fn(n, m, |i, j| {
        if j == 0 {
            (v[(i, 1)] - v[(i, 0)]) / dw
        } else if j == m - 1 {
            (v[(i, m - 1)] - v[(i, m - 2)]) / dw
        } else {
            (v[(i, j + 1)] - v[(i, j - 1)]) / (2.0 * dw)
        }
    })
}

/// Mean of the one-step representation residual
/// `Y_{k+1} - Y_k + F dt - Z1 dW - Z2' dM` across paths.
///
/// `std_error` is the standard error of the sample-averaged martingale term
/// `Z1 dW + Z2' dM`, which is the stochastic part of the mean residual: the
/// regression forces the per-bucket value residuals to average to zero, so
/// the residual's own spread can collapse far below the fluctuation that the
/// mean actually carries.
#[derive(Debug, Clone, Serialize)]
pub struct StepResidual {
    pub step: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// Backend bookkeeping attached to a [`SolveReport`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub n_time_steps: usize,
    pub n_space_nodes: Option<usize>,
    pub n_paths: Option<usize>,
    /// Worst inner fixed-point iteration count over all time steps.
    pub max_inner_iterations: usize,
    /// Worst regression condition number (full-rank fits only).
    pub max_condition_number: Option<f64>,
    /// `(time step, state)` of regressions that fell back to a lower rank.
    pub singular_regressions: Vec<(usize, usize)>,
    /// `(time step, state)` of empty regression buckets (previous-step
    /// coefficients reused).
    pub empty_buckets: Vec<(usize, usize)>,
    /// Per-step martingale residuals (Monte Carlo backend only).
    pub step_residuals: Vec<StepResidual>,
}

/// Summary of a backward solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    /// Value at `t = 0`, `w = 0`, the initial state.
    pub y0: f64,
    /// Monte Carlo standard error of `y0` (Monte Carlo backend only).
    pub std_error: Option<f64>,
    /// Sup-norm deltas of successive outer refinements (outer iteration
    /// entry points only).
    pub picard_deltas: Vec<f64>,
    /// Ratio of the last two deltas, when two or more refinements ran.
    pub contraction_ratio: Option<f64>,
    /// Scheme-error estimate from coarsened re-solves, when requested.
    pub error_estimate: Option<f64>,
    pub diagnostics: Diagnostics,
}

/// Solves with the finite-difference backend and attaches a scheme-error
/// estimate from one re-solve with doubled `dt` (first order in time) and,
/// when the grid is coarsenable, one with doubled `dw` (second order, hence
/// the factor 3).
pub fn solve_pde_estimated(
    a: &crate::chain::RateMatrix,
    x0: usize,
    driver: &dyn crate::driver::Driver,
    terminal: &TerminalData,
    time: &TimeGrid,
    config: &PdeConfig,
) -> Result<PdeSolution, SolveError> {
    let mut solution = solve_pde(a, x0, driver, terminal, time, config)?;
    let mut estimate = 0.0;
    let mut have_any = false;
    if time.n_steps() % 2 == 0 {
        let coarse = solve_pde(a, x0, driver, terminal, &time.coarsen(2), config)?;
        estimate += (solution.report.y0 - coarse.report.y0).abs();
        have_any = true;
    }
    if let Some(space) = config.space.coarsen() {
        // GridValues terminals are tied to one node set; only claims can be
        // re-evaluated on the coarser grid.
        if matches!(terminal, TerminalData::Claim(_)) {
            let cfg = PdeConfig {
                space,
                ..config.clone()
            };
            let coarse = solve_pde(a, x0, driver, terminal, time, &cfg)?;
            estimate += (solution.report.y0 - coarse.report.y0).abs() / 3.0;
            have_any = true;
        }
    }
    solution.report.error_estimate = have_any.then_some(estimate);
    Ok(solution)
}

/// Solves with the Monte Carlo backend and attaches a time-discretisation
/// error estimate from a re-solve on the pairwise-coarsened batch (same
/// Brownian paths, doubled `dt`).  Regression bias is not captured.
pub fn solve_lsmc_estimated(
    a: &crate::chain::RateMatrix,
    driver: &dyn crate::driver::Driver,
    claim: &TerminalClaim,
    batch: &crate::paths::PathBatch,
    config: &LsmcConfig,
) -> Result<LsmcSolution, SolveError> {
    let mut solution = solve_lsmc(a, driver, claim, batch, config)?;
    if batch.grid.n_steps() % 2 == 0 {
        let coarse = solve_lsmc(a, driver, claim, &batch.coarsen(2), config)?;
        solution.report.error_estimate = Some((solution.report.y0 - coarse.report.y0).abs());
    }
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w_grid_center_is_zero() {
        let g = WGrid::new(3.0, 7).unwrap();
        assert_eq!(g.node(g.center()), 0.0);
        assert_eq!(g.n_nodes(), 7);
        assert!((g.dw() - 1.0).abs() < 1e-15);
        assert_eq!(g.nodes().len(), 7);
    }

    #[test]
    fn w_grid_rejects_even_or_degenerate() {
        assert!(WGrid::new(1.0, 4).is_err());
        assert!(WGrid::new(1.0, 1).is_err());
        assert!(WGrid::new(0.0, 5).is_err());
        assert!(WGrid::new(f64::NAN, 5).is_err());
    }

    #[test]
    fn w_grid_coarsening_preserves_nodes() {
        let g = WGrid::new(2.0, 9).unwrap();
        let c = g.coarsen().unwrap();
        assert_eq!(c.n_nodes(), 5);
        for m in 0..c.n_nodes() {
            assert!((c.node(m) - g.node(2 * m)).abs() < 1e-15);
        }
        assert!(WGrid::new(2.0, 7).unwrap().coarsen().is_none());
    }

    #[test]
    fn interpolation_weights_are_clamped() {
        let g = WGrid::new(1.0, 5).unwrap();
        assert_eq!(g.interp_weights(-2.0), (0, 0.0));
        let (m, l) = g.interp_weights(2.0);
        assert_eq!(m, 3);
        assert!((l - 1.0).abs() < 1e-15);
        let (m, l) = g.interp_weights(0.25);
        assert_eq!(m, 2);
        assert!((l - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auto_grid_scales_with_horizon_and_payoff() {
        let g = WGrid::auto(1.0, 0.0);
        assert!((g.half_width() - 6.0).abs() < 1e-12);
        let g = WGrid::auto(0.25, 1.0);
        assert!((g.half_width() - 6.0).abs() < 1e-12);
        assert_eq!(g.n_nodes() % 4, 1);
    }

    #[test]
    fn gradient_matrix_is_exact_on_linear_data() {
        let v = DMatrix::from_fn(2, 5, |_, m| 2.0 * m as f64 - 1.0);
        let g = gradient_matrix(&v, 0.5);
        for x in g.iter() {
            assert!((x - 4.0).abs() < 1e-12);
        }
    }
}
