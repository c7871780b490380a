//! Least-squares Monte Carlo backend.
//!
//! Backward induction along simulated joint paths: at each time node the
//! one-step-ahead values are regressed on a polynomial basis in `W_{t_k}`,
//! separately per chain state.  The regressed per-state surface provides all
//! three unknowns at once — the continuation value, the `z1` slope from the
//! martingale-increment regression `E[Y_{k+1} dW] / dt`, and the per-state
//! value vector standing in for the jump integrand.  The driver is then
//! applied per path, either in one explicit evaluation or through a
//! pointwise fixed point across states.
//!
//! Degenerate designs (e.g. the first node, where every path sits at
//! `w = 0`) fall back to the minimum-norm fit — a per-bucket mean — and are
//! recorded; empty state buckets reuse the previous step's coefficients.

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;

use super::picard::PicardStaging;
use super::{Diagnostics, DriverMode, SolveError, SolveReport, StepResidual};
use crate::chain::{martingale_increments, RateMatrix};
use crate::claim::TerminalClaim;
use crate::driver::Driver;
use crate::paths::PathBatch;

/// Monte Carlo backend settings.
#[derive(Debug, Clone)]
pub struct LsmcConfig {
    /// Polynomial degree of the regression basis (0 to 3).
    pub degree: usize,
    pub mode: DriverMode,
    /// Pointwise fixed-point tolerance, relative to `1 + |v|`.
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Keep the sampled `(Y, Z1, Z2)` processes in the solution.
    pub store_paths: bool,
}

impl Default for LsmcConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            mode: DriverMode::Implicit,
            inner_tol: 1e-10,
            max_inner: 100,
            store_paths: false,
        }
    }
}

impl LsmcConfig {
    pub fn new() -> Self {
        Self::default()
    }
}

/// The sampled backward processes along all paths of the batch.
#[derive(Debug, Clone)]
pub struct SampledProcesses {
    /// `(n_steps + 1) x n_paths` values `Y_{t_k}`.
    pub y: DMatrix<f64>,
    /// `n_steps x n_paths` values `Z1(t_k)`.
    pub z1: DMatrix<f64>,
    /// Per step `k`: `n_states x n_paths` per-state value vectors `Z2(t_k)`.
    pub z2: Vec<DMatrix<f64>>,
}

impl SampledProcesses {
    pub(crate) fn zeros(n_states: usize, n_steps: usize, n_paths: usize) -> Self {
        Self {
            y: DMatrix::zeros(n_steps + 1, n_paths),
            z1: DMatrix::zeros(n_steps, n_paths),
            z2: vec![DMatrix::zeros(n_states, n_paths); n_steps],
        }
    }
}

/// Report plus (optionally) the sampled processes.
#[derive(Debug, Clone)]
pub struct LsmcSolution {
    pub report: SolveReport,
    pub sampled: Option<SampledProcesses>,
}

/// One polynomial fit in the standardised variable `(w - shift) / scale`.
#[derive(Debug, Clone)]
pub(crate) struct Fit {
    shift: f64,
    scale: f64,
    coef: DVector<f64>,
}

impl Fit {
    fn constant(c: f64) -> Self {
        Self {
            shift: 0.0,
            scale: 1.0,
            coef: DVector::from_element(1, c),
        }
    }

    pub(crate) fn eval(&self, w: f64) -> f64 {
        let z = (w - self.shift) / self.scale;
        let mut acc = 0.0;
        for &c in self.coef.iter().rev() {
            acc = acc * z + c;
        }
        acc
    }
}

pub(crate) struct RegOutcome {
    pub(crate) fit: Fit,
    /// Ratio of extreme singular values, for full-rank fits.
    pub(crate) condition: Option<f64>,
    pub(crate) deficient: bool,
}

/// Least squares of `ys` on polynomials in `ws` up to `degree`, solved by
/// SVD with small singular values dropped (minimum-norm fallback).
pub(crate) fn regress(ws: &[f64], ys: &[f64], degree: usize) -> RegOutcome {
    let n = ws.len();
    let p = degree + 1;
    let mean = ws.iter().sum::<f64>() / n as f64;
    let var = ws.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    let scale = if sd > 1e-12 { sd } else { 1.0 };
    let design = DMatrix::from_fn(n, p, |r, c| ((ws[r] - mean) / scale).powi(c as i32));
    let rhs = DVector::from_column_slice(ys);
    let fallback = || RegOutcome {
        fit: Fit {
            shift: mean,
            scale,
            coef: DVector::from_element(1, ys.iter().sum::<f64>() / n as f64),
        },
        condition: None,
        deficient: true,
    };
    let Some(svd) = SVD::try_new(design, true, true, f64::EPSILON, 0) else {
        return fallback();
    };
    let smax = svd.singular_values.max();
    if !(smax.is_finite() && smax > 0.0) {
        return fallback();
    }
    let eps = smax * 1e-10;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let Ok(coef) = svd.solve(&rhs, eps) else {
        return fallback();
    };
    let deficient = rank < p;
    let condition = (!deficient).then(|| smax / svd.singular_values.min());
    RegOutcome {
        fit: Fit {
            shift: mean,
            scale,
            coef,
        },
        condition,
        deficient,
    }
}

struct PathCache {
    /// Brownian value at each time node.
    w: Vec<f64>,
    /// Chain state at each time node.
    state: Vec<usize>,
    /// `n_states x n_steps` chain-martingale increments.
    dm: DMatrix<f64>,
}

struct StepOut {
    y_new: f64,
    f_used: f64,
    z1: f64,
    z2: DVector<f64>,
    inner_iters: usize,
}

fn mean_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var.max(0.0) / n as f64).sqrt())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_pass(
    a: &RateMatrix,
    driver: &dyn Driver,
    terminal_values: &[f64],
    claim: Option<&TerminalClaim>,
    batch: &PathBatch,
    config: &LsmcConfig,
    frozen: Option<(&SampledProcesses, PicardStaging)>,
) -> Result<(SolveReport, SampledProcesses), SolveError> {
    let n_paths = batch.n_paths();
    assert!(n_paths >= 2, "need at least two paths");
    assert_eq!(terminal_values.len(), n_paths);
    assert!(config.degree <= 3, "regression basis capped at cubics");
    let n_steps = batch.grid.n_steps();
    let n_states = a.n_states();

    let caches: Vec<PathCache> = batch
        .paths
        .par_iter()
        .map(|jp| {
            let w = jp.brownian_nodes();
            let state = batch
                .grid
                .nodes()
                .iter()
                .map(|&t| jp.chain.state_at(t))
                .collect();
            let increments = martingale_increments(&jp.chain, a, &batch.grid);
            let mut dm = DMatrix::zeros(n_states, n_steps);
            for (k, v) in increments.iter().enumerate() {
                dm.set_column(k, v);
            }
            PathCache { w, state, dm }
        })
        .collect();

    let mut sampled = SampledProcesses::zeros(n_states, n_steps, n_paths);
    for p in 0..n_paths {
        sampled.y[(n_steps, p)] = terminal_values[p];
    }
    let mut cv: Vec<f64> = terminal_values.to_vec();

    // Terminal-node fits, used only as the fallback when a state bucket is
    // empty at the first backward step.  With a claim the per-state payoff
    // can be regressed over every path's terminal point; with raw terminal
    // values only the realised states are informative.
    let terminal_w: Vec<f64> = caches.iter().map(|c| c.w[n_steps]).collect();
    let mut value_fits: Vec<Fit> = match claim {
        Some(q) => (0..n_states)
            .map(|i| {
                let ys: Vec<f64> = terminal_w.iter().map(|&w| q.evaluate(w, i)).collect();
                regress(&terminal_w, &ys, config.degree).fit
            })
            .collect(),
        None => (0..n_states)
            .map(|i| {
                let idx: Vec<usize> =
                    (0..n_paths).filter(|&p| caches[p].state[n_steps] == i).collect();
                if idx.is_empty() {
                    return Fit::constant(0.0);
                }
                let ws: Vec<f64> = idx.iter().map(|&p| terminal_w[p]).collect();
                let ys: Vec<f64> = idx.iter().map(|&p| terminal_values[p]).collect();
                regress(&ws, &ys, config.degree).fit
            })
            .collect(),
    };
    let mut z1_fits: Vec<Fit> = vec![Fit::constant(0.0); n_states];

    let mut diagnostics = Diagnostics {
        n_time_steps: n_steps,
        n_paths: Some(n_paths),
        ..Diagnostics::default()
    };
    let mut max_cond: Option<f64> = None;
    let mut residuals = Vec::with_capacity(n_steps);

    for k in (0..n_steps).rev() {
        let t_k = batch.grid.node(k);
        let dt = batch.grid.dt(k);

        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n_states];
        for (p, cache) in caches.iter().enumerate() {
            buckets[cache.state[k]].push(p);
        }
        for i in 0..n_states {
            if buckets[i].is_empty() {
                diagnostics.empty_buckets.push((k, i));
                continue;
            }
            let ws: Vec<f64> = buckets[i].iter().map(|&p| caches[p].w[k]).collect();
            let ys: Vec<f64> = buckets[i].iter().map(|&p| sampled.y[(k + 1, p)]).collect();
            let out = regress(&ws, &ys, config.degree);
            if out.deficient {
                diagnostics.singular_regressions.push((k, i));
            }
            if let Some(c) = out.condition {
                max_cond = Some(max_cond.map_or(c, |m: f64| m.max(c)));
            }
            value_fits[i] = out.fit;
            // Centering the value by its fitted continuation before taking
            // the product with dW leaves the regression target unchanged
            // (E[g(w) dW | w] = 0) but drops the value-level noise, which
            // would otherwise enter at scale 1 / sqrt(n dt).  A constant
            // claim then yields exactly zero gradients.
            let zt: Vec<f64> = buckets[i]
                .iter()
                .zip(&ws)
                .map(|(&p, &w)| {
                    (sampled.y[(k + 1, p)] - value_fits[i].eval(w))
                        * batch.paths[p].brownian_increments[k]
                        / dt
                })
                .collect();
            z1_fits[i] = regress(&ws, &zt, config.degree).fit;
        }

        let step_results: Result<Vec<StepOut>, SolveError> = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let wv = caches[p].w[k];
                let i = caches[p].state[k];
                let cont = value_fits[i].eval(wv);
                let b_vec = DVector::from_fn(n_states, |j, _| value_fits[j].eval(wv));
                let z1_vec = DVector::from_fn(n_states, |j, _| z1_fits[j].eval(wv));
                let step = match config.mode {
                    DriverMode::Explicit => {
                        let (y_arg, z1_arg, z2_arg) = match frozen {
                            None => (cont, z1_vec[i], b_vec.clone()),
                            Some((prev, PicardStaging::FreezeY)) => {
                                (prev.y[(k, p)], z1_vec[i], b_vec.clone())
                            }
                            Some((prev, PicardStaging::FreezeZ)) => {
                                (cont, prev.z1[(k, p)], prev.z2[k].column(p).into_owned())
                            }
                        };
                        let f = driver.evaluate(t_k, y_arg, z1_arg, &z2_arg, i);
                        StepOut {
                            y_new: cont + dt * f,
                            f_used: f,
                            z1: z1_vec[i],
                            z2: b_vec,
                            inner_iters: 1,
                        }
                    }
                    DriverMode::Implicit => {
                        // Fixed point for the per-state value vector v:
                        // v_j = b_j + dt F(t, v_j, z1_j, v, j), with frozen
                        // arguments substituted from the previous outer
                        // iterate where staged.
                        let mut v = b_vec.clone();
                        let frozen_z2 = match frozen {
                            Some((prev, PicardStaging::FreezeZ)) => {
                                Some(prev.z2[k].column(p).into_owned())
                            }
                            _ => None,
                        };
                        let mut iters = 0usize;
                        loop {
                            iters += 1;
                            let z2_arg = frozen_z2.as_ref().unwrap_or(&v).clone();
                            let next = DVector::from_fn(n_states, |j, _| {
                                let (y_arg, z1_arg) = match frozen {
                                    None => (v[j], z1_vec[j]),
                                    Some((prev, PicardStaging::FreezeY)) => {
                                        (prev.z2[k][(j, p)], z1_vec[j])
                                    }
                                    Some((prev, PicardStaging::FreezeZ)) => {
                                        (v[j], prev.z1[(k, p)])
                                    }
                                };
                                b_vec[j] + dt * driver.evaluate(t_k, y_arg, z1_arg, &z2_arg, j)
                            });
                            let delta = (&next - &v).amax();
                            v = next;
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
                        StepOut {
                            y_new: v[i],
                            f_used: (v[i] - cont) / dt,
                            z1: z1_vec[i],
                            z2: v,
                            inner_iters: iters,
                        }
                    }
                };
                Ok(step)
            })
            .collect();
        let steps = step_results?;

        let mut res_sum = 0.0;
        let mut mart_sum = 0.0;
        let mut mart_sq = 0.0;
        for (p, s) in steps.iter().enumerate() {
            if !s.y_new.is_finite() {
                return Err(SolveError::NonFinite { step: k });
            }
            let mart =
                s.z1 * batch.paths[p].brownian_increments[k] + s.z2.dot(&caches[p].dm.column(k));
            res_sum += sampled.y[(k + 1, p)] - s.y_new + s.f_used * dt - mart;
            mart_sum += mart;
            mart_sq += mart * mart;
            cv[p] += s.f_used * dt - mart;
            sampled.y[(k, p)] = s.y_new;
            sampled.z1[(k, p)] = s.z1;
            sampled.z2[k].set_column(p, &s.z2);
            diagnostics.max_inner_iterations = diagnostics.max_inner_iterations.max(s.inner_iters);
        }
        // The regression makes the per-bucket value residuals sum to zero,
        // so the stochastic part of the mean residual is the sample average
        // of the subtracted martingale increments; its spread is the right
        // standard error for the residual mean (the residual's own spread
        // collapses wherever the fit absorbs the pathwise noise).
        let mart_mean = mart_sum / n_paths as f64;
        let mart_var =
            (mart_sq - n_paths as f64 * mart_mean * mart_mean).max(0.0) / (n_paths - 1) as f64;
        residuals.push(StepResidual {
            step: k,
            mean: res_sum / n_paths as f64,
            std_error: (mart_var / n_paths as f64).sqrt(),
        });
    }
    residuals.reverse();
    diagnostics.step_residuals = residuals;
    diagnostics.max_condition_number = max_cond;

    // The pathwise replication `Q + sum F dt - sum Z1 dW - sum Z2' dM`
    // telescopes to the backward value plus the accumulated bucket-mean
    // corrections, i.e. it is the backward estimate with the empirical
    // martingale fluctuation subtracted out.  Its mean is the reported
    // value, so the quoted standard error describes the quoted number.
    let (y0, se) = mean_se(cv.iter().copied(), n_paths);
    let report = SolveReport {
        y0,
        std_error: Some(se),
        picard_deltas: Vec::new(),
        contraction_ratio: None,
        error_estimate: None,
        diagnostics,
    };
    Ok((report, sampled))
}

/// Solves by regression backward induction; `y0` is the sample mean of the
/// pathwise replication `Q + sum F dt - sum Z1 dW - sum Z2' dM` (the
/// backward value at `t = 0` with the empirical martingale noise subtracted
/// out), and the standard error is that mean's.
pub fn solve_lsmc(
    a: &RateMatrix,
    driver: &dyn Driver,
    claim: &TerminalClaim,
    batch: &PathBatch,
    config: &LsmcConfig,
) -> Result<LsmcSolution, SolveError> {
    let terminal: Vec<f64> = batch
        .paths
        .iter()
        .map(|p| {
            claim.evaluate(
                p.brownian_increments.iter().sum(),
                p.chain.terminal_state(),
            )
        })
        .collect();
    let (report, sampled) = backward_pass(a, driver, &terminal, Some(claim), batch, config, None)?;
    Ok(LsmcSolution {
        report,
        sampled: config.store_paths.then_some(sampled),
    })
}

/// As [`solve_lsmc`], but with an arbitrary per-path terminal value (not
/// necessarily a function of the terminal point), e.g. a claim masked by a
/// path event.
pub fn solve_lsmc_with_terminal(
    a: &RateMatrix,
    driver: &dyn Driver,
    terminal_values: &[f64],
    batch: &PathBatch,
    config: &LsmcConfig,
) -> Result<LsmcSolution, SolveError> {
    let (report, sampled) = backward_pass(a, driver, terminal_values, None, batch, config, None)?;
    Ok(LsmcSolution {
        report,
        sampled: config.store_paths.then_some(sampled),
    })
}
