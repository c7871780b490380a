//! Implicit finite-difference backend.
//!
//! Each backward step solves, per state, the tridiagonal system of the
//! implicit diffusion
//!
//! ```text
//! (I - dt/2 D_ww) u^k = u^{k+1} + dt (A' u + F(t_k, u, D_w u, U, .)),
//! ```
//!
//! with the chain coupling `A' u` and the driver evaluated either at the
//! step-`k+1` surface (explicit mode) or at the step-`k` surface through an
//! inner fixed point (implicit mode).  The boundary rows drop the diffusion
//! term — zero curvature, i.e. linear continuation beyond the grid — which
//! also makes solutions that are linear in `w` exact for the scheme.
//!
//! The inner fixed point contracts when `dt * (|A| + mu^(1/2) / dw)` is
//! small; grossly violating that shows up as [`SolveError::NoConvergence`].

use nalgebra::{DMatrix, DVector};

use super::{
    gradient_matrix, Diagnostics, DriverMode, SolutionSurface, SolveError, SolveReport,
    TerminalData, WGrid,
};
use crate::chain::RateMatrix;
use crate::driver::Driver;
use crate::paths::TimeGrid;

/// Finite-difference backend settings.
#[derive(Debug, Clone)]
pub struct PdeConfig {
    pub space: WGrid,
    pub mode: DriverMode,
    /// Inner fixed-point tolerance, relative to `1 + sup |u|`.
    pub inner_tol: f64,
    pub max_inner: usize,
}

impl PdeConfig {
    pub fn new(space: WGrid) -> Self {
        Self {
            space,
            mode: DriverMode::Implicit,
            inner_tol: 1e-10,
            max_inner: 100,
        }
    }
}

/// Surface plus report from the finite-difference backend.
#[derive(Debug, Clone)]
pub struct PdeSolution {
    pub surface: SolutionSurface,
    pub report: SolveReport,
}

/// Driver arguments pinned to a previously computed surface, for the staged
/// outer iteration.  Skipped arguments come from the current iterate.
pub(crate) enum Frozen<'a> {
    None,
    /// `y` from these per-node surfaces.
    Y(&'a [DMatrix<f64>]),
    /// `z1` and the per-state vector from these surfaces.
    Z {
        values: &'a [DMatrix<f64>],
        z1: &'a [DMatrix<f64>],
    },
}

enum FrozenAt<'a> {
    None,
    Y(&'a DMatrix<f64>),
    Z {
        values: &'a DMatrix<f64>,
        z1: &'a DMatrix<f64>,
    },
}

impl<'a> Frozen<'a> {
    fn at(&self, k: usize) -> FrozenAt<'_> {
        match self {
            Frozen::None => FrozenAt::None,
            Frozen::Y(v) => FrozenAt::Y(&v[k]),
            Frozen::Z { values, z1 } => FrozenAt::Z {
                values: &values[k],
                z1: &z1[k],
            },
        }
    }
}

/// Solves `T x = rhs` for a tridiagonal `T` (Thomas algorithm).  `sub[m]`,
/// `diag[m]`, `sup[m]` are the entries of row `m`; `sub[0]` and the last
/// `sup` are ignored.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = rhs.len();
    scratch[0] = sup[0] / diag[0];
    rhs[0] /= diag[0];
    for m in 1..n {
        let denom = diag[m] - sub[m] * scratch[m - 1];
        scratch[m] = sup[m] / denom;
        rhs[m] = (rhs[m] - sub[m] * rhs[m - 1]) / denom;
    }
    for m in (0..n - 1).rev() {
        rhs[m] -= scratch[m] * rhs[m + 1];
    }
}

/// Fills `out[(i, m)] = F(t, y, z1, U, i)` with arguments taken from the
/// surface `v` (gradient `z1v`) except where `frozen` overrides them.
fn fill_driver_values(
    driver: &dyn Driver,
    t: f64,
    v: &DMatrix<f64>,
    z1v: &DMatrix<f64>,
    frozen: &FrozenAt<'_>,
    out: &mut DMatrix<f64>,
    z2_scratch: &mut DVector<f64>,
) {
    let (n_states, m_nodes) = v.shape();
    for m in 0..m_nodes {
        let z2_source = match frozen {
            FrozenAt::Z { values, .. } => *values,
            _ => v,
        };
        for i in 0..n_states {
            z2_scratch[i] = z2_source[(i, m)];
        }
        for i in 0..n_states {
            let y = match frozen {
                FrozenAt::Y(fy) => fy[(i, m)],
                _ => v[(i, m)],
            };
            let z1 = match frozen {
                FrozenAt::Z { z1, .. } => z1[(i, m)],
                _ => z1v[(i, m)],
            };
            out[(i, m)] = driver.evaluate(t, y, z1, z2_scratch, i);
        }
    }
}

pub(crate) fn solve_with_frozen(
    a: &RateMatrix,
    x0: usize,
    driver: &dyn Driver,
    terminal: &TerminalData,
    time: &TimeGrid,
    config: &PdeConfig,
    frozen: Frozen<'_>,
) -> Result<PdeSolution, SolveError> {
    let n_states = a.n_states();
    assert!(x0 < n_states, "initial state out of range");
    let space = &config.space;
    let needed = 3.0 * time.horizon().sqrt();
    if space.half_width() < needed {
        return Err(SolveError::GridTooCoarse {
            half_width: space.half_width(),
            needed,
        });
    }
    let m_nodes = space.n_nodes();
    let dw = space.dw();
    let n_steps = time.n_steps();

    let mut values = vec![DMatrix::zeros(n_states, m_nodes); n_steps + 1];
    values[n_steps] = terminal.materialize(n_states, space)?;

    let a_t = a.entries().transpose();
    let mut f_vals = DMatrix::zeros(n_states, m_nodes);
    let mut z2_scratch = DVector::zeros(n_states);
    let mut row = vec![0.0; m_nodes];
    let mut thomas_scratch = vec![0.0; m_nodes];
    let mut max_inner_seen = 0usize;

    for k in (0..n_steps).rev() {
        let dt = time.dt(k);
        let t_k = time.node(k);
        let frozen_k = frozen.at(k);

        // Row coefficients of (I - dt/2 D_ww); boundary rows are identity.
        let c = 0.5 * dt / (dw * dw);
        let mut sub = vec![-c; m_nodes];
        let mut diag = vec![1.0 + 2.0 * c; m_nodes];
        let mut sup = vec![-c; m_nodes];
        sub[0] = 0.0;
        sup[0] = 0.0;
        diag[0] = 1.0;
        sub[m_nodes - 1] = 0.0;
        sup[m_nodes - 1] = 0.0;
        diag[m_nodes - 1] = 1.0;

        let u_next = values[k + 1].clone();
        let mut solve_for_source = |v: &DMatrix<f64>,
                                    z1v: &DMatrix<f64>,
                                    f_vals: &mut DMatrix<f64>,
                                    z2_scratch: &mut DVector<f64>|
         -> DMatrix<f64> {
            fill_driver_values(driver, t_k, v, z1v, &frozen_k, f_vals, z2_scratch);
            let source = &a_t * v + &*f_vals;
            let mut out = DMatrix::zeros(n_states, m_nodes);
            for i in 0..n_states {
                for m in 0..m_nodes {
                    row[m] = u_next[(i, m)] + dt * source[(i, m)];
                }
                solve_tridiagonal(&sub, &diag, &sup, &mut row, &mut thomas_scratch);
                for m in 0..m_nodes {
                    out[(i, m)] = row[m];
                }
            }
            out
        };

        let new_values = match config.mode {
            DriverMode::Explicit => {
                max_inner_seen = max_inner_seen.max(1);
                let z1_next = gradient_matrix(&u_next, dw);
                solve_for_source(&u_next, &z1_next, &mut f_vals, &mut z2_scratch)
            }
            DriverMode::Implicit => {
                let mut v = u_next.clone();
                let mut iters = 0usize;
                loop {
                    iters += 1;
                    let z1v = gradient_matrix(&v, dw);
                    let cand = solve_for_source(&v, &z1v, &mut f_vals, &mut z2_scratch);
                    let delta = (&cand - &v).amax();
                    v = cand;
                    if !delta.is_finite() {
                        return Err(SolveError::NoConvergence {
                            step: k,
                            iterations: iters,
                            delta,
                        });
                    }
                    if delta <= config.inner_tol * (1.0 + v.amax()) {
                        break;
                    }
                    if iters >= config.max_inner {
                        return Err(SolveError::NoConvergence {
                            step: k,
                            iterations: iters,
                            delta,
                        });
                    }
                }
                max_inner_seen = max_inner_seen.max(iters);
                v
            }
        };
        if !new_values.iter().all(|x| x.is_finite()) {
            return Err(SolveError::NonFinite { step: k });
        }
        values[k] = new_values;
    }

    let surface = SolutionSurface::new(time.clone(), space.clone(), values);
    let y0 = surface.y0(x0);
    let report = SolveReport {
        y0,
        std_error: None,
        picard_deltas: Vec::new(),
        contraction_ratio: None,
        error_estimate: None,
        diagnostics: Diagnostics {
            n_time_steps: n_steps,
            n_space_nodes: Some(m_nodes),
            n_paths: None,
            max_inner_iterations: max_inner_seen,
            ..Diagnostics::default()
        },
    };
    Ok(PdeSolution { surface, report })
}

/// Solves the coupled value system on the given grids and reports
/// `y0 = u(0, 0, x0)`.
pub fn solve_pde(
    a: &RateMatrix,
    x0: usize,
    driver: &dyn Driver,
    terminal: &TerminalData,
    time: &TimeGrid,
    config: &PdeConfig,
) -> Result<PdeSolution, SolveError> {
    solve_with_frozen(a, x0, driver, terminal, time, config, Frozen::None)
}
