//! Staged outer iteration.
//!
//! Each refinement is a full backward solve with one group of driver
//! arguments pinned to the previous iterate: either the value argument
//! (`FreezeY`) or the two integrand arguments (`FreezeZ`).  The first solve
//! pins the frozen group to zero.  Under the Lipschitz bound the refinement
//! map contracts for short horizons, which shows up as geometrically
//! shrinking sup-norm deltas; the last solve's report is returned with the
//! delta history and the final contraction ratio attached.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lsmc::{backward_pass, LsmcConfig, LsmcSolution, SampledProcesses};
use super::pde::{solve_with_frozen, Frozen, PdeConfig, PdeSolution};
use super::{SolveError, TerminalData};
use crate::chain::RateMatrix;
use crate::claim::TerminalClaim;
use crate::driver::Driver;
use crate::paths::{PathBatch, TimeGrid};

/// Which driver arguments are pinned to the previous refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PicardStaging {
    /// Pin `y`; solve for the integrands within each refinement.
    FreezeY,
    /// Pin `z1` and the per-state vector; solve for `y`.
    FreezeZ,
}

#[derive(Debug, Clone)]
pub struct PicardConfig {
    pub staging: PicardStaging,
    /// Sup-norm tolerance on successive refinements, relative to
    /// `1 + sup |u|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            staging: PicardStaging::FreezeY,
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

fn ratio_of(deltas: &[f64]) -> Option<f64> {
    if deltas.len() < 2 {
        return None;
    }
    let prev = deltas[deltas.len() - 2];
    (prev > f64::MIN_POSITIVE).then(|| deltas[deltas.len() - 1] / prev)
}

/// Outer iteration over the finite-difference backend.
pub fn picard_pde(
    a: &RateMatrix,
    x0: usize,
    driver: &dyn Driver,
    terminal: &TerminalData,
    time: &TimeGrid,
    pde_config: &PdeConfig,
    picard: &PicardConfig,
) -> Result<PdeSolution, SolveError> {
    let n_states = a.n_states();
    let zeros = vec![
        DMatrix::zeros(n_states, pde_config.space.n_nodes());
        time.n_steps() + 1
    ];
    let frozen0 = match picard.staging {
        PicardStaging::FreezeY => Frozen::Y(&zeros),
        PicardStaging::FreezeZ => Frozen::Z {
            values: &zeros,
            z1: &zeros,
        },
    };
    let mut current = solve_with_frozen(a, x0, driver, terminal, time, pde_config, frozen0)?;
    let mut deltas = Vec::new();
    for _ in 0..picard.max_iter {
        let frozen = match picard.staging {
            PicardStaging::FreezeY => Frozen::Y(current.surface.values()),
            PicardStaging::FreezeZ => Frozen::Z {
                values: current.surface.values(),
                z1: current.surface.z1_surfaces(),
            },
        };
        let next = solve_with_frozen(a, x0, driver, terminal, time, pde_config, frozen)?;
        let delta = next
            .surface
            .values()
            .iter()
            .zip(current.surface.values())
            .map(|(n, c)| (n - c).amax())
            .fold(0.0, f64::max);
        deltas.push(delta);
        let scale = 1.0
            + next
                .surface
                .values()
                .iter()
                .map(|v| v.amax())
                .fold(0.0, f64::max);
        current = next;
        if delta <= picard.tol * scale {
            current.report.contraction_ratio = ratio_of(&deltas);
            current.report.picard_deltas = deltas;
            return Ok(current);
        }
    }
    Err(SolveError::OuterNoConvergence {
        iterations: picard.max_iter,
        last_delta: *deltas.last().unwrap(),
        last_ratio: ratio_of(&deltas).unwrap_or(f64::NAN),
    })
}

/// Outer iteration over the Monte Carlo backend.  The per-path sampled
/// processes of the previous refinement supply the frozen arguments; deltas
/// are sup-norms over all paths and steps.
pub fn picard_lsmc(
    a: &RateMatrix,
    driver: &dyn Driver,
    claim: &TerminalClaim,
    batch: &PathBatch,
    lsmc_config: &LsmcConfig,
    picard: &PicardConfig,
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
    let zeros = SampledProcesses::zeros(a.n_states(), batch.grid.n_steps(), batch.n_paths());
    let (mut report, mut sampled) = backward_pass(
        a,
        driver,
        &terminal,
        Some(claim),
        batch,
        lsmc_config,
        Some((&zeros, picard.staging)),
    )?;
    let mut deltas = Vec::new();
    let mut converged = picard.max_iter == 0;
    for _ in 0..picard.max_iter {
        let (next_report, next_sampled) = backward_pass(
            a,
            driver,
            &terminal,
            Some(claim),
            batch,
            lsmc_config,
            Some((&sampled, picard.staging)),
        )?;
        let delta = (&next_sampled.y - &sampled.y).amax();
        deltas.push(delta);
        let scale = 1.0 + next_sampled.y.amax();
        report = next_report;
        sampled = next_sampled;
        if delta <= picard.tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SolveError::OuterNoConvergence {
            iterations: picard.max_iter,
            last_delta: *deltas.last().unwrap(),
            last_ratio: ratio_of(&deltas).unwrap_or(f64::NAN),
        });
    }
    report.contraction_ratio = ratio_of(&deltas);
    report.picard_deltas = deltas;
    Ok(LsmcSolution {
        report,
        sampled: lsmc_config.store_paths.then_some(sampled),
    })
}
