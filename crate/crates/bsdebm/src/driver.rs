//! Driver functions `F(t, y, z1, z2, state)` and their structural checkers.
//!
//! A driver closes the backward equation
//!
//! ```text
//! Y_t = Q + integral_t^T F(u, Y_u, Z1_u, Z2_u, X_u) du
//!         - integral_t^T Z1_u dW_u - integral_t^T Z2_u' dM_u
//! ```
//!
//! The `z2` argument is an `N`-vector read through the state seminorm, whose
//! kernel contains the constant vector; well-posed drivers must therefore be
//! insensitive to shifts of `z2` along constants.  Checkers in this module
//! probe the declared Lipschitz constant, the sublinearity flags, and the
//! balanced-growth condition in `z2` that the comparison theorem needs.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::chain::RateMatrix;
use crate::claim::TerminalClaim;
use crate::paths::stream_rng;

/// Relative tolerance used when verifying declared structural flags.
pub const FLAG_REL_TOL: f64 = 1e-9;
/// Absolute tolerance for kernel-direction insensitivity.
pub const KERNEL_TOL: f64 = 1e-10;

/// Structural properties a driver may declare.  They are promises, verified
/// by [`check_sublinear_flags`], not derived from the implementation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct DriverFlags {
    /// `F(a + b) <= F(a) + F(b)` jointly in `(y, z1, z2)`.
    pub subadditive: bool,
    /// `F(lambda a) = lambda F(a)` for `lambda >= 0`, jointly in `(y, z1, z2)`.
    pub positively_homogeneous: bool,
    /// `F(t, c, 0, c 1, state) = 0`: the driver vanishes on constant
    /// solutions, so constants are preserved by the induced expectation.
    pub zero_at_zero_z: bool,
}

/// A backward-equation driver.
pub trait Driver: Send + Sync {
    /// Evaluates `F(t, y, z1, z2, state)`.
    fn evaluate(&self, t: f64, y: f64, z1: f64, z2: &DVector<f64>, state: usize) -> f64;

    /// Declared Lipschitz constant: `|dF|^2 <= mu (|dy|^2 + |dz1|^2 + |dz2|_psi^2)`.
    fn lipschitz_mu(&self) -> f64;

    /// Declared structural flags.
    fn flags(&self) -> DriverFlags {
        DriverFlags::default()
    }

    fn name(&self) -> &str;
}

/// The trivial driver `F = 0`.
#[derive(Debug, Clone, Default)]
pub struct ZeroDriver;

impl Driver for ZeroDriver {
    fn evaluate(&self, _t: f64, _y: f64, _z1: f64, _z2: &DVector<f64>, _state: usize) -> f64 {
        0.0
    }

    fn lipschitz_mu(&self) -> f64 {
        1e-12
    }

    fn flags(&self) -> DriverFlags {
        DriverFlags {
            subadditive: true,
            positively_homogeneous: true,
            zero_at_zero_z: true,
        }
    }

    fn name(&self) -> &str {
        "zero"
    }
}

/// Coefficient of `(t, state)`.
pub type StateCoeff = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;
/// Vector coefficient of `(t, state)` (the row multiplying `z2`, stored as a column).
pub type StateVectorCoeff = Arc<dyn Fn(f64, usize) -> DVector<f64> + Send + Sync>;
/// Forcing term of `(t, w, state)`.
pub type SpaceCoeff = Arc<dyn Fn(f64, f64, usize) -> f64 + Send + Sync>;

/// Wraps a constant into a [`StateCoeff`].
pub fn const_coeff(v: f64) -> StateCoeff {
    Arc::new(move |_, _| v)
}

/// Coefficient functions of an affine driver
/// `F = phi + rho y + alpha z1 + gamma (beta . z2)`.
///
/// `beta(t, i)` is stored as a column vector; the driver reads `z2` through
/// the dot product `beta . z2`.  For the closed-form representation to hold,
/// `beta` must lie in the range of the state's quadratic-variation matrix;
/// [`LinearDriverSpec::range_compatible_beta`] builds such a coefficient from
/// a free base vector.
#[derive(Clone)]
pub struct LinearDriverSpec {
    pub n_states: usize,
    pub rho: StateCoeff,
    pub alpha: StateCoeff,
    pub beta: StateVectorCoeff,
    pub gamma: StateCoeff,
    /// Forcing `phi(t, w, state)`.
    pub phi: SpaceCoeff,
}

impl LinearDriverSpec {
    /// Spec with constant scalar coefficients and a fixed `beta` vector.
    pub fn constant(n_states: usize, rho: f64, alpha: f64, beta: DVector<f64>, gamma: f64, phi: f64) -> Self {
        assert_eq!(beta.len(), n_states);
        Self {
            n_states,
            rho: const_coeff(rho),
            alpha: const_coeff(alpha),
            beta: Arc::new(move |_, _| beta.clone()),
            gamma: const_coeff(gamma),
            phi: Arc::new(move |_, _, _| phi),
        }
    }

    /// Builds the state-dependent coefficient `beta(t, i) = psi_i base`,
    /// which lies in the range of `psi_i` by construction and is therefore
    /// insensitive to kernel shifts of `z2`.
    pub fn range_compatible_beta(a: &RateMatrix, base: DVector<f64>) -> StateVectorCoeff {
        assert_eq!(base.len(), a.n_states());
        let columns: Vec<DVector<f64>> = (0..a.n_states())
            .map(|i| a.psi(i).matrix() * &base)
            .collect();
        Arc::new(move |_, state| columns[state].clone())
    }

    /// Drift term `gamma (beta . z2)` at `(t, state)`.
    pub fn z2_term(&self, t: f64, z2: &DVector<f64>, state: usize) -> f64 {
        (self.gamma)(t, state) * (self.beta)(t, state).dot(z2)
    }
}

/// Affine driver usable by the numerical backends (forcing depends on
/// `(t, state)` only, since the driver interface carries no `w` argument).
#[derive(Clone)]
pub struct AffineDriver {
    spec: LinearDriverSpec,
    mu: f64,
    zero_at_zero_z: bool,
}

impl AffineDriver {
    /// Wraps the coefficient set, deriving a valid Lipschitz constant by
    /// sampling the coefficients on `[0, horizon]`.
    ///
    /// The `phi` component of `spec` must not depend on `w`; the library
    /// constructors guarantee this.
    pub fn new(a: &RateMatrix, horizon: f64, spec: LinearDriverSpec) -> Self {
        assert_eq!(spec.n_states, a.n_states());
        let pinvs: Vec<DMatrix<f64>> = (0..a.n_states()).map(|i| a.psi(i).pinv()).collect();
        let mut sup_rho2: f64 = 0.0;
        let mut sup_alpha2: f64 = 0.0;
        let mut sup_gb: f64 = 0.0;
        let mut zero_at_zero = true;
        let samples = 101;
        for k in 0..=samples {
            let t = horizon * k as f64 / samples as f64;
            for i in 0..a.n_states() {
                let rho = (spec.rho)(t, i);
                let alpha = (spec.alpha)(t, i);
                let gamma = (spec.gamma)(t, i);
                let beta = (spec.beta)(t, i);
                sup_rho2 = sup_rho2.max(rho * rho);
                sup_alpha2 = sup_alpha2.max(alpha * alpha);
                sup_gb = sup_gb.max(gamma * gamma * (beta.transpose() * &pinvs[i] * &beta)[(0, 0)]);
                if rho != 0.0 || (spec.phi)(t, 0.0, i) != 0.0 {
                    zero_at_zero = false;
                }
            }
        }
        let mu = (3.0 * (sup_rho2 + sup_alpha2 + sup_gb)).max(1e-12);
        Self {
            spec,
            mu,
            zero_at_zero_z: zero_at_zero,
        }
    }

    /// Convenience constructor with constant coefficients and a
    /// range-compatible `beta` built from `beta_base`.
    pub fn from_constants(
        a: &RateMatrix,
        horizon: f64,
        rho: f64,
        alpha: f64,
        beta_base: DVector<f64>,
        gamma: f64,
        phi: f64,
    ) -> Self {
        let beta = LinearDriverSpec::range_compatible_beta(a, beta_base);
        let spec = LinearDriverSpec {
            n_states: a.n_states(),
            rho: const_coeff(rho),
            alpha: const_coeff(alpha),
            beta,
            gamma: const_coeff(gamma),
            phi: Arc::new(move |_, _, _| phi),
        };
        Self::new(a, horizon, spec)
    }

    /// The coefficient set, reusable by the closed-form estimator.
    pub fn spec(&self) -> &LinearDriverSpec {
        &self.spec
    }
}

impl Driver for AffineDriver {
    fn evaluate(&self, t: f64, y: f64, z1: f64, z2: &DVector<f64>, state: usize) -> f64 {
        (self.spec.phi)(t, 0.0, state)
            + (self.spec.rho)(t, state) * y
            + (self.spec.alpha)(t, state) * z1
            + self.spec.z2_term(t, z2, state)
    }

    fn lipschitz_mu(&self) -> f64 {
        self.mu
    }

    fn flags(&self) -> DriverFlags {
        DriverFlags {
            subadditive: false,
            positively_homogeneous: false,
            zero_at_zero_z: self.zero_at_zero_z,
        }
    }

    fn name(&self) -> &str {
        "affine"
    }
}

/// Drift-uncertainty driver `F = kappa |z1|`, the canonical sublinear driver.
#[derive(Debug, Clone)]
pub struct BrownianAmbiguityDriver {
    kappa: f64,
}

impl BrownianAmbiguityDriver {
    pub fn new(kappa: f64) -> Self {
        assert!(kappa >= 0.0);
        Self { kappa }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl Driver for BrownianAmbiguityDriver {
    fn evaluate(&self, _t: f64, _y: f64, z1: f64, _z2: &DVector<f64>, _state: usize) -> f64 {
        self.kappa * z1.abs()
    }

    fn lipschitz_mu(&self) -> f64 {
        (self.kappa * self.kappa).max(1e-12)
    }

    fn flags(&self) -> DriverFlags {
        DriverFlags {
            subadditive: true,
            positively_homogeneous: true,
            zero_at_zero_z: true,
        }
    }

    fn name(&self) -> &str {
        "brownian_ambiguity"
    }
}

/// Regime-uncertainty driver penalising exposure to chain jumps:
///
/// ```text
/// F(z2, i) = kappa2 * max(0, max_j z2' psi_i e_j  -  z2' psi_i e_i)
/// ```
///
/// A maximum of linear functionals of `z2`, hence convex, positively
/// homogeneous, subadditive, and insensitive to kernel shifts (each
/// functional reads `z2` through `psi_i`).
#[derive(Debug, Clone)]
pub struct ChainAmbiguityDriver {
    kappa2: f64,
    psis: Vec<DMatrix<f64>>,
    mu: f64,
}

impl ChainAmbiguityDriver {
    pub fn new(a: &RateMatrix, kappa2: f64) -> Self {
        assert!(kappa2 >= 0.0);
        let n = a.n_states();
        let psis: Vec<DMatrix<f64>> = (0..n).map(|i| a.psi(i).matrix().clone()).collect();
        // |dF| <= kappa2 max_j |dz2' psi (e_j - e_i)| <= kappa2 |dz2|_psi max_j |e_j - e_i|_psi.
        let mut worst: f64 = 0.0;
        for (i, psi) in psis.iter().enumerate() {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = crate::chain::unit_vector(n, j) - crate::chain::unit_vector(n, i);
                worst = worst.max((d.transpose() * psi * &d)[(0, 0)]);
            }
        }
        let mu = (kappa2 * kappa2 * worst).max(1e-12);
        Self { kappa2, psis, mu }
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }
}

impl Driver for ChainAmbiguityDriver {
    fn evaluate(&self, _t: f64, _y: f64, _z1: f64, z2: &DVector<f64>, state: usize) -> f64 {
        let v = &self.psis[state] * z2;
        let best = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.kappa2 * (best - v[state]).max(0.0)
    }

    fn lipschitz_mu(&self) -> f64 {
        self.mu
    }

    fn flags(&self) -> DriverFlags {
        DriverFlags {
            subadditive: true,
            positively_homogeneous: true,
            zero_at_zero_z: true,
        }
    }

    fn name(&self) -> &str {
        "chain_ambiguity"
    }
}

/// Piecewise-linear regime-switched driver `F = c_i y + d_i z1` with
/// per-state coefficients.
#[derive(Debug, Clone)]
pub struct RegimeSwitchedDriver {
    y_coeffs: Vec<f64>,
    z1_coeffs: Vec<f64>,
    mu: f64,
}

impl RegimeSwitchedDriver {
    pub fn new(y_coeffs: Vec<f64>, z1_coeffs: Vec<f64>) -> Self {
        assert_eq!(y_coeffs.len(), z1_coeffs.len());
        assert!(!y_coeffs.is_empty());
        let mu = y_coeffs
            .iter()
            .zip(&z1_coeffs)
            .map(|(c, d)| c * c + d * d)
            .fold(1e-12_f64, f64::max);
        Self {
            y_coeffs,
            z1_coeffs,
            mu,
        }
    }
}

impl Driver for RegimeSwitchedDriver {
    fn evaluate(&self, _t: f64, y: f64, z1: f64, _z2: &DVector<f64>, state: usize) -> f64 {
        self.y_coeffs[state] * y + self.z1_coeffs[state] * z1
    }

    fn lipschitz_mu(&self) -> f64 {
        self.mu
    }

    fn flags(&self) -> DriverFlags {
        DriverFlags {
            subadditive: true,
            positively_homogeneous: true,
            zero_at_zero_z: self.y_coeffs.iter().all(|&c| c == 0.0),
        }
    }

    fn name(&self) -> &str {
        "regime_switched"
    }
}

/// A driver plus a constant forcing term — the simplest way to build an
/// ordered driver pair.  The offset breaks the structural flags, so none
/// are declared.
#[derive(Clone)]
pub struct OffsetDriver {
    inner: Arc<dyn Driver>,
    offset: f64,
    name: String,
}

impl OffsetDriver {
    pub fn new(inner: Arc<dyn Driver>, offset: f64) -> Self {
        let name = format!("{}{:+}", inner.name(), offset);
        Self {
            inner,
            offset,
            name,
        }
    }
}

impl Driver for OffsetDriver {
    fn evaluate(&self, t: f64, y: f64, z1: f64, z2: &DVector<f64>, state: usize) -> f64 {
        self.inner.evaluate(t, y, z1, z2, state) + self.offset
    }

    fn lipschitz_mu(&self) -> f64 {
        self.inner.lipschitz_mu()
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// The shipped driver library, instantiated for a given chain.
pub fn standard_library(a: &RateMatrix, horizon: f64) -> Vec<Arc<dyn Driver>> {
    let n = a.n_states();
    let beta_base = DVector::from_fn(n, |i, _| 0.3 + 0.1 * i as f64);
    let y_coeffs: Vec<f64> = (0..n).map(|i| 0.2 - 0.15 * i as f64).collect();
    let z1_coeffs: Vec<f64> = (0..n).map(|i| 0.1 + 0.05 * i as f64).collect();
    vec![
        Arc::new(ZeroDriver),
        Arc::new(AffineDriver::from_constants(
            a, horizon, 0.3, 0.2, beta_base, 0.5, 0.1,
        )),
        Arc::new(BrownianAmbiguityDriver::new(0.2)),
        Arc::new(ChainAmbiguityDriver::new(a, 0.15)),
        Arc::new(RegimeSwitchedDriver::new(y_coeffs, z1_coeffs)),
    ]
}

/// A driver together with a terminal claim: one well-posed backward problem.
#[derive(Clone)]
pub struct StandardPair {
    pub driver: Arc<dyn Driver>,
    pub claim: TerminalClaim,
}

impl StandardPair {
    pub fn new(driver: Arc<dyn Driver>, claim: TerminalClaim) -> Self {
        Self { driver, claim }
    }
}

/// Sampling ranges for the structural checkers.
#[derive(Debug, Clone)]
pub struct CheckOptions {
    /// Number of sampled inputs (or input pairs).
    pub n: usize,
    /// RNG seed; checks are deterministic given the seed.
    pub seed: u64,
    /// Time arguments are drawn from `[0, horizon]`.
    pub horizon: f64,
    /// Scale of the sampled `y`, `z1`, `z2` values.
    pub amplitude: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            n: 2000,
            seed: 0x5eed,
            horizon: 1.0,
            amplitude: 2.0,
        }
    }
}

struct SampledInput {
    t: f64,
    state: usize,
    y: f64,
    z1: f64,
    z2: DVector<f64>,
}

fn sample_input<R: Rng>(rng: &mut R, n_states: usize, opts: &CheckOptions) -> SampledInput {
    let t = rng.gen::<f64>() * opts.horizon;
    let state = rng.gen_range(0..n_states);
    let y = opts.amplitude * rng.sample::<f64, _>(StandardNormal);
    let z1 = opts.amplitude * rng.sample::<f64, _>(StandardNormal);
    let z2 =
        DVector::from_fn(n_states, |_, _| opts.amplitude * rng.sample::<f64, _>(StandardNormal));
    SampledInput { t, state, y, z1, z2 }
}

/// Outcome of [`check_lipschitz`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct LipschitzReport {
    pub declared_mu: f64,
    /// Largest observed `|dF|^2 / (|dy|^2 + |dz1|^2 + |dz2|_psi^2)`.
    pub max_ratio: f64,
    /// Sampled pairs whose ratio exceeded the declared constant.
    pub violations: usize,
    /// Pairs with zero denominator but a visibly different `F` value:
    /// the driver is sensitive to seminorm-null directions.
    pub kernel_violations: usize,
    /// Zero-denominator pairs where `F` agreed (skipped from the ratio).
    pub skipped: usize,
    pub n: usize,
}

impl LipschitzReport {
    pub fn passes(&self) -> bool {
        self.violations == 0 && self.kernel_violations == 0
    }
}

/// Estimates the Lipschitz ratio of `F` in `(y, z1, z2)` over sampled input
/// pairs, measuring `z2` differences in the state seminorm.
///
/// Pairs whose difference is seminorm-null (and equal in `y`, `z1`) carry no
/// ratio information; they are skipped, unless `F` visibly differs across
/// them, which is reported as a kernel violation.  One fifth of the sampled
/// pairs differ by a pure constant shift of `z2` to probe exactly that.
pub fn check_lipschitz(driver: &dyn Driver, a: &RateMatrix, opts: &CheckOptions) -> LipschitzReport {
    let n_states = a.n_states();
    let psis: Vec<_> = (0..n_states).map(|i| a.psi(i)).collect();
    let mut rng = stream_rng(opts.seed, 0, 11);
    let mu = driver.lipschitz_mu();
    let mut report = LipschitzReport {
        declared_mu: mu,
        max_ratio: 0.0,
        violations: 0,
        kernel_violations: 0,
        skipped: 0,
        n: opts.n,
    };
    for trial in 0..opts.n {
        let x = sample_input(&mut rng, n_states, opts);
        let (y2, z12, z22) = if trial % 5 == 0 {
            // Kernel-direction pair: same y and z1, z2 shifted by a constant.
            let shift = opts.amplitude * rng.sample::<f64, _>(StandardNormal);
            (x.y, x.z1, &x.z2 + DVector::from_element(n_states, shift))
        } else {
            let other = sample_input(&mut rng, n_states, opts);
            (other.y, other.z1, other.z2)
        };
        let f1 = driver.evaluate(x.t, x.y, x.z1, &x.z2, x.state);
        let f2 = driver.evaluate(x.t, y2, z12, &z22, x.state);
        let dz2 = &x.z2 - &z22;
        let sem = psis[x.state]
            .seminorm_sq(&dz2)
            .expect("psi quadratic form must be PSD");
        let den = (x.y - y2).powi(2) + (x.z1 - z12).powi(2) + sem;
        let num = (f1 - f2).powi(2);
        // Constant shifts of z2 leave a roundoff-sized residual in the
        // denominator; anything below this floor is a seminorm-null pair.
        let den_floor = (1e-10 * opts.amplitude.max(1.0)).powi(2);
        if den <= den_floor {
            let scale = f1.abs().max(f2.abs()).max(1.0);
            if (f1 - f2).abs() > KERNEL_TOL * scale {
                report.kernel_violations += 1;
            } else {
                report.skipped += 1;
            }
        } else {
            let ratio = num / den;
            report.max_ratio = report.max_ratio.max(ratio);
            if ratio > mu * (1.0 + FLAG_REL_TOL) {
                report.violations += 1;
            }
        }
    }
    report
}

/// Outcome of [`check_sublinear_flags`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct SublinearFlagsReport {
    pub declared: DriverFlags,
    pub subadditivity_failures: usize,
    pub homogeneity_failures: usize,
    pub zero_at_zero_failures: usize,
    /// Largest relative homogeneity error observed.
    pub max_homogeneity_err: f64,
    pub n: usize,
}

impl SublinearFlagsReport {
    /// All declared flags were confirmed on every sample.
    pub fn passes(&self) -> bool {
        (!self.declared.subadditive || self.subadditivity_failures == 0)
            && (!self.declared.positively_homogeneous || self.homogeneity_failures == 0)
            && (!self.declared.zero_at_zero_z || self.zero_at_zero_failures == 0)
    }
}

/// Verifies each declared structural flag on sampled inputs, at relative
/// tolerance [`FLAG_REL_TOL`].  Undeclared flags are not policed.
pub fn check_sublinear_flags(
    driver: &dyn Driver,
    a: &RateMatrix,
    opts: &CheckOptions,
) -> SublinearFlagsReport {
    let n_states = a.n_states();
    let mut rng = stream_rng(opts.seed, 0, 13);
    let flags = driver.flags();
    let mut report = SublinearFlagsReport {
        declared: flags,
        subadditivity_failures: 0,
        homogeneity_failures: 0,
        zero_at_zero_failures: 0,
        max_homogeneity_err: 0.0,
        n: opts.n,
    };
    let lambdas = [0.0, 0.5, 1.0, 2.0];
    for _ in 0..opts.n {
        let x = sample_input(&mut rng, n_states, opts);
        let fx = driver.evaluate(x.t, x.y, x.z1, &x.z2, x.state);
        if flags.subadditive {
            let b = sample_input(&mut rng, n_states, opts);
            let fb = driver.evaluate(x.t, b.y, b.z1, &b.z2, x.state);
            let fsum = driver.evaluate(x.t, x.y + b.y, x.z1 + b.z1, &(&x.z2 + &b.z2), x.state);
            let scale = fx.abs().max(fb.abs()).max(fsum.abs()).max(1.0);
            if fsum > fx + fb + FLAG_REL_TOL * scale {
                report.subadditivity_failures += 1;
            }
        }
        if flags.positively_homogeneous {
            for &lambda in &lambdas {
                let fl = driver.evaluate(
                    x.t,
                    lambda * x.y,
                    lambda * x.z1,
                    &(&x.z2 * lambda),
                    x.state,
                );
                let scale = fx.abs().max(fl.abs()).max(1.0);
                let err = (fl - lambda * fx).abs() / scale;
                report.max_homogeneity_err = report.max_homogeneity_err.max(err);
                if err > FLAG_REL_TOL {
                    report.homogeneity_failures += 1;
                }
            }
        }
        if flags.zero_at_zero_z {
            let c = x.y;
            let f0 = driver.evaluate(
                x.t,
                c,
                0.0,
                &DVector::from_element(n_states, c),
                x.state,
            );
            if f0.abs() > FLAG_REL_TOL * c.abs().max(1.0) {
                report.zero_at_zero_failures += 1;
            }
        }
    }
    report
}

/// Outcome of [`check_balanced`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct BalancedReport {
    pub epsilon: f64,
    pub n: usize,
    /// Pairs satisfying the premise (all seminorm-null differences do).
    pub premise_held: usize,
    /// Premise-holding pairs where the conclusion failed outright.
    pub violations: usize,
    /// Premise-holding pairs with equality despite a nonzero seminorm; the
    /// comparison theorem requires strictness there.
    pub boundary: usize,
}

impl BalancedReport {
    pub fn passes(&self) -> bool {
        self.violations == 0 && self.boundary == 0
    }
}

/// Default threshold for the balanced-growth condition: half the admissible
/// upper bound `c^{3/2} N^{-3/2}` derived from the rate bounds.
pub fn default_balance_epsilon(a: &RateMatrix) -> f64 {
    0.5 * a.c().powf(1.5) * (a.n_states() as f64).powf(-1.5)
}

/// Probes the balanced-growth condition the comparison theorem imposes on the
/// `z2` dependence of a driver: whenever a difference `d = z2_1 - z2_2`
/// satisfies `d' psi e_j >= -eps |d|_psi` for every state `j`, the driver gap
/// must dominate `d' psi e_i` (with `i` the current state), strictly unless
/// `|d|_psi = 0`.
///
/// For `eps` inside the admissible band, the only directions satisfying the
/// premise are seminorm-null ones — a direct consequence of the inequality
/// `d' psi X <= -eps |d|_psi` that holds under the premise — so with the
/// default `eps` this check mostly polices kernel behaviour.  Passing a
/// larger `eps` widens the premise set and stresses the condition away from
/// the kernel; drivers ignoring `z2` will then surface genuine violations,
/// which is the expected outcome, not a bug.
pub fn check_balanced(
    driver: &dyn Driver,
    a: &RateMatrix,
    epsilon: Option<f64>,
    opts: &CheckOptions,
) -> BalancedReport {
    let eps = epsilon.unwrap_or_else(|| default_balance_epsilon(a));
    let n_states = a.n_states();
    let psis: Vec<_> = (0..n_states).map(|i| a.psi(i)).collect();
    let mut rng = stream_rng(opts.seed, 0, 17);
    let mut report = BalancedReport {
        epsilon: eps,
        n: opts.n,
        premise_held: 0,
        violations: 0,
        boundary: 0,
    };
    for trial in 0..opts.n {
        let x = sample_input(&mut rng, n_states, opts);
        let z2b = match trial % 3 {
            // Pure kernel shift: the premise always holds.
            0 => {
                let shift = opts.amplitude * rng.sample::<f64, _>(StandardNormal);
                &x.z2 + DVector::from_element(n_states, shift)
            }
            // Kernel shift plus a small transverse part.
            1 => {
                let shift = opts.amplitude * rng.sample::<f64, _>(StandardNormal);
                let noise = DVector::from_fn(n_states, |_, _| {
                    0.05 * opts.amplitude * rng.sample::<f64, _>(StandardNormal)
                });
                &x.z2 + DVector::from_element(n_states, shift) + noise
            }
            // Fully independent second argument.
            _ => sample_input(&mut rng, n_states, opts).z2,
        };
        let d = &x.z2 - &z2b;
        let psi = &psis[x.state];
        let sem = psi.seminorm(&d).expect("psi quadratic form must be PSD");
        let grad = psi.matrix() * &d;
        let premise = (0..n_states).all(|j| grad[j] >= -eps * sem - 1e-12 * opts.amplitude);
        if !premise {
            continue;
        }
        report.premise_held += 1;
        let lhs = driver.evaluate(x.t, x.y, x.z1, &x.z2, x.state)
            - driver.evaluate(x.t, x.y, x.z1, &z2b, x.state);
        let rhs = grad[x.state];
        let tol = 1e-9 * (lhs.abs().max(rhs.abs()).max(1.0));
        if lhs < rhs - tol {
            report.violations += 1;
        } else if sem > 1e-9 * opts.amplitude && (lhs - rhs).abs() <= tol {
            report.boundary += 1;
        }
    }
    report
}
