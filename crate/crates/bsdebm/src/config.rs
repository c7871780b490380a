//! Experiment configuration: a single TOML file describing the chain, the
//! grids, the problem pair and the run parameters.
//!
//! Unknown keys are rejected everywhere — a typo like `n_stpes` fails the
//! parse instead of silently running with a default.  [`ExperimentConfig`]
//! round-trips through TOML, so the resolved config emitted next to every
//! artifact can be fed straight back to reproduce a run.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::RateMatrix;
use crate::claim::TerminalClaim;
use crate::driver::{
    AffineDriver, BrownianAmbiguityDriver, ChainAmbiguityDriver, Driver, LinearDriverSpec,
    RegimeSwitchedDriver, ZeroDriver,
};
use crate::paths::TimeGrid;
use crate::solver::{DriverMode, WGrid};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config at `{field}`: {detail}")]
    Invalid { field: &'static str, detail: String },
}

fn invalid(field: &'static str, detail: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        detail: detail.into(),
    }
}

/// The chain generator and where it starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Generator by rows: `rates[j][i]` is the transition rate from state
    /// `i` to state `j`, so every column sums to zero and the diagonal is
    /// nonpositive.
    pub rates: Vec<Vec<f64>>,
    /// Rate band: off-diagonal entries must lie in `[c, 1/c]`.
    pub c: f64,
    /// Zero-based initial state.
    #[serde(default)]
    pub initial_state: usize,
}

impl ChainConfig {
    pub fn build(&self) -> Result<RateMatrix, ConfigError> {
        let n = self.rates.len();
        if n == 0 || self.rates.iter().any(|row| row.len() != n) {
            return Err(invalid(
                "chain.rates",
                format!("expected a square matrix, got {n} rows"),
            ));
        }
        let entries = DMatrix::from_fn(n, n, |j, i| self.rates[j][i]);
        let a = RateMatrix::new(entries, self.c)
            .map_err(|e| invalid("chain.rates", e.to_string()))?;
        if self.initial_state >= n {
            return Err(invalid(
                "chain.initial_state",
                format!("state {} out of range for {n} states", self.initial_state),
            ));
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeConfig {
    pub fn build(&self) -> Result<TimeGrid, ConfigError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("time.horizon", "must be positive and finite"));
        }
        if self.n_steps == 0 {
            return Err(invalid("time.n_steps", "must be at least 1"));
        }
        Ok(TimeGrid::uniform(self.horizon, self.n_steps))
    }
}

/// Spatial grid for the finite-difference backend.  Omit the section (or
/// both fields) to size the grid automatically from the horizon and the
/// claim's growth scale.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_nodes: Option<usize>,
}

impl SpaceConfig {
    pub fn build(&self, horizon: f64, payoff_scale: f64) -> Result<WGrid, ConfigError> {
        match (self.half_width, self.n_nodes) {
            (None, None) => Ok(WGrid::auto(horizon, payoff_scale)),
            (Some(hw), Some(n)) => WGrid::new(hw, n).map_err(|e| invalid("space", e.to_string())),
            _ => Err(invalid(
                "space",
                "half_width and n_nodes must be given together (or both omitted)",
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub n_paths: usize,
    pub master_seed: u64,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            n_paths: 4096,
            master_seed: 0,
        }
    }
}

impl PathsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_paths < 2 {
            return Err(invalid("paths.n_paths", "need at least 2 paths"));
        }
        Ok(())
    }
}

/// Driver selection.  In TOML the variant is the key:
///
/// ```toml
/// driver = "zero"
/// # or
/// [driver.brownian_ambiguity]
/// kappa = 0.2
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverConfig {
    /// `F = 0`: the evaluation is a plain conditional expectation.
    Zero,
    /// `F = kappa |z1|`, drift ambiguity on the Brownian component.
    BrownianAmbiguity { kappa: f64 },
    /// `F = kappa ||z2||_x`, rate ambiguity on the chain component.
    ChainAmbiguity { kappa: f64 },
    /// `F = c_i y + d_i z1` with per-state coefficients.
    RegimeSwitched {
        y_coeffs: Vec<f64>,
        z1_coeffs: Vec<f64>,
    },
    /// `F = rho y + alpha z1 + gamma (beta . z2) + phi` with constant
    /// coefficients; `beta` is built range-compatible from `beta_base`
    /// (default: the zero vector, i.e. no jump coupling).
    Affine {
        #[serde(default)]
        rho: f64,
        #[serde(default)]
        alpha: f64,
        #[serde(default)]
        gamma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta_base: Option<Vec<f64>>,
        #[serde(default)]
        phi: f64,
    },
}

impl DriverConfig {
    fn check_coeff_lengths(&self, n: usize) -> Result<(), ConfigError> {
        match self {
            Self::RegimeSwitched {
                y_coeffs,
                z1_coeffs,
            } if y_coeffs.len() != n || z1_coeffs.len() != n => Err(invalid(
                "driver",
                format!("coefficient vectors must have {n} entries"),
            )),
            Self::Affine {
                beta_base: Some(b), ..
            } if b.len() != n => Err(invalid(
                "driver.beta_base",
                format!("expected {n} entries, got {}", b.len()),
            )),
            _ => Ok(()),
        }
    }

    pub fn build(&self, a: &RateMatrix, horizon: f64) -> Result<Arc<dyn Driver>, ConfigError> {
        let n = a.n_states();
        self.check_coeff_lengths(n)?;
        match self {
            Self::Zero => Ok(Arc::new(ZeroDriver)),
            Self::BrownianAmbiguity { kappa } => {
                if !(*kappa >= 0.0 && kappa.is_finite()) {
                    return Err(invalid("driver.kappa", "must be finite and nonnegative"));
                }
                Ok(Arc::new(BrownianAmbiguityDriver::new(*kappa)))
            }
            Self::ChainAmbiguity { kappa } => {
                if !(*kappa >= 0.0 && kappa.is_finite()) {
                    return Err(invalid("driver.kappa", "must be finite and nonnegative"));
                }
                Ok(Arc::new(ChainAmbiguityDriver::new(a, *kappa)))
            }
            Self::RegimeSwitched {
                y_coeffs,
                z1_coeffs,
            } => Ok(Arc::new(RegimeSwitchedDriver::new(
                y_coeffs.clone(),
                z1_coeffs.clone(),
            ))),
            Self::Affine {
                rho,
                alpha,
                gamma,
                beta_base,
                phi,
            } => {
                let base = beta_base
                    .as_ref()
                    .map_or_else(|| DVector::zeros(n), |b| DVector::from_column_slice(b));
                Ok(Arc::new(AffineDriver::from_constants(
                    a, horizon, *rho, *alpha, base, *gamma, *phi,
                )))
            }
        }
    }

    /// The ambiguity level, when the driver has one (for the quote CSV).
    pub fn kappa(&self) -> Option<f64> {
        match self {
            Self::BrownianAmbiguity { kappa } | Self::ChainAmbiguity { kappa } => Some(*kappa),
            _ => None,
        }
    }

    /// Whether the closed-form linear oracle applies to this driver.
    pub fn is_affine(&self) -> bool {
        matches!(
            self,
            Self::Zero | Self::RegimeSwitched { .. } | Self::Affine { .. }
        )
    }

    /// The driver as an affine coefficient set, for the closed-form oracle;
    /// `None` for the genuinely nonlinear drivers.
    pub fn affine_spec(
        &self,
        a: &RateMatrix,
        horizon: f64,
    ) -> Result<Option<LinearDriverSpec>, ConfigError> {
        let n = a.n_states();
        self.check_coeff_lengths(n)?;
        let spec = match self {
            Self::Zero => Some(LinearDriverSpec::constant(
                n,
                0.0,
                0.0,
                DVector::zeros(n),
                0.0,
                0.0,
            )),
            Self::Affine {
                rho,
                alpha,
                gamma,
                beta_base,
                phi,
            } => {
                let base = beta_base
                    .as_ref()
                    .map_or_else(|| DVector::zeros(n), |b| DVector::from_column_slice(b));
                Some(
                    AffineDriver::from_constants(a, horizon, *rho, *alpha, base, *gamma, *phi)
                        .spec()
                        .clone(),
                )
            }
            Self::RegimeSwitched {
                y_coeffs,
                z1_coeffs,
            } => {
                let (yc, zc) = (y_coeffs.clone(), z1_coeffs.clone());
                Some(LinearDriverSpec {
                    n_states: n,
                    rho: Arc::new(move |_, i| yc[i]),
                    alpha: Arc::new(move |_, i| zc[i]),
                    beta: Arc::new(move |_, _| DVector::zeros(n)),
                    gamma: Arc::new(|_, _| 0.0),
                    phi: Arc::new(|_, _, _| 0.0),
                })
            }
            _ => None,
        };
        Ok(spec)
    }
}

/// Terminal claim selection, same TOML shape as [`DriverConfig`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ClaimConfig {
    /// `Q = W_T`.
    Brownian,
    /// `Q = W_T^2`.
    BrownianSquared,
    /// `Q = 1{X_T = e_state}` (zero-based).
    StateIndicator { state: usize },
    Constant { value: f64 },
    /// `Q = max(W_T - strike, 0)`.
    Call { strike: f64 },
}

impl ClaimConfig {
    pub fn build(&self, n_states: usize) -> Result<TerminalClaim, ConfigError> {
        match self {
            Self::Brownian => Ok(TerminalClaim::brownian()),
            Self::BrownianSquared => Ok(TerminalClaim::brownian_squared()),
            Self::StateIndicator { state } => {
                if *state >= n_states {
                    return Err(invalid(
                        "claim.state",
                        format!("state {state} out of range for {n_states} states"),
                    ));
                }
                Ok(TerminalClaim::state_indicator(*state))
            }
            Self::Constant { value } => Ok(TerminalClaim::constant(*value)),
            Self::Call { strike } => Ok(TerminalClaim::call(*strike)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Pde,
    Lsmc,
}

impl std::fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pde => "pde",
            Self::Lsmc => "lsmc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeChoice {
    Implicit,
    Explicit,
}

impl ModeChoice {
    pub fn driver_mode(self) -> DriverMode {
        match self {
            Self::Implicit => DriverMode::Implicit,
            Self::Explicit => DriverMode::Explicit,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub backend: BackendChoice,
    pub mode: ModeChoice,
    /// Regression polynomial degree for the Monte Carlo backend.
    pub degree: usize,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendChoice::Pde,
            mode: ModeChoice::Implicit,
            degree: 3,
            workers: 0,
        }
    }
}

/// The whole experiment file.  `driver2`/`claim2` describe the second
/// problem of the `compare` subcommand; `extra_claims` adds quote rows to
/// `price`.
///
/// Fields that can serialize as plain values (the tagged enums) are
/// declared before the table sections so the emitted TOML is always valid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub driver: DriverConfig,
    pub claim: ClaimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver2: Option<DriverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim2: Option<ClaimConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_claims: Vec<ClaimConfig>,
    pub chain: ChainConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub space: SpaceConfig,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub run: RunConfig,
}

/// Library objects built from a validated config.
pub struct Resolved {
    pub a: RateMatrix,
    pub x0: usize,
    pub time: TimeGrid,
    pub space: WGrid,
    pub driver: Arc<dyn Driver>,
    pub claim: TerminalClaim,
    pub extra_claims: Vec<TerminalClaim>,
}

impl std::fmt::Debug for Resolved {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Resolved")
            .field("n_states", &self.a.n_states())
            .field("x0", &self.x0)
            .field("horizon", &self.time.horizon())
            .field("driver", &self.driver.name())
            .field("claim", &self.claim.name())
            .finish()
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Validates every section and builds the library objects.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let a = self.chain.build()?;
        let time = self.time.build()?;
        self.paths.validate()?;
        if self.run.degree > 3 {
            return Err(invalid("run.degree", "regression basis is capped at cubics"));
        }
        let claim = self.claim.build(a.n_states())?;
        let extra_claims: Vec<TerminalClaim> = self
            .extra_claims
            .iter()
            .map(|c| c.build(a.n_states()))
            .collect::<Result<_, _>>()?;
        let mut scale = claim.growth_scale();
        for c in &extra_claims {
            scale = scale.max(c.growth_scale());
        }
        if let Some(c2) = &self.claim2 {
            scale = scale.max(c2.build(a.n_states())?.growth_scale());
        }
        let space = self.space.build(time.horizon(), scale)?;
        let driver = self.driver.build(&a, time.horizon())?;
        Ok(Resolved {
            x0: self.chain.initial_state,
            a,
            time,
            space,
            driver,
            claim,
            extra_claims,
        })
    }
}
