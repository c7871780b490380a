//! Finite-state Markov chain primitives.
//!
//! The chain `X` lives on the unit vectors `e_0, ..., e_{N-1}` of `R^N` and is
//! described by a rate matrix `A` in column convention: `a[(j, i)]` is the jump
//! intensity from state `i` to state `j`, and each column sums to zero.  With
//! that convention the chain decomposes as
//!
//! ```text
//! X_t = X_0 + integral_0^t A X_s ds + M_t
//! ```
//!
//! where `M` is a pure-jump martingale.  This module provides exact simulation
//! of `X`, the grid increments of `M`, the per-jump counting processes with
//! their compensators, and the state-dependent quadratic-variation matrix
//!
//! ```text
//! psi_t = diag(A X_t) - A diag(X_t) - diag(X_t) A^T
//! ```
//!
//! which is symmetric positive semidefinite with `psi * 1 = 0` and induces the
//! seminorm `|v|_psi^2 = v^T psi v` used by the solver and driver layers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::paths::TimeGrid;

/// Relative tolerance on the column sums of a rate matrix.
pub const COLUMN_SUM_REL_TOL: f64 = 1e-12;

/// Tolerance below which a slightly negative quadratic form is clamped to zero.
pub const SEMINORM_CLAMP_TOL: f64 = 1e-10;

/// A single constraint violated by a candidate rate matrix.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateMatrixViolation {
    /// The matrix is not square or has fewer than two states.
    #[error("rate matrix must be square with at least 2 states, got {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },
    /// The uniform rate bound must satisfy `0 < c < 1`.
    #[error("rate bound c must lie strictly inside (0, 1), got {c}")]
    InvalidC { c: f64 },
    /// An off-diagonal intensity fell outside `[c, 1/c]`.
    #[error("rate a[({to},{from})] = {value} outside [{lo}, {hi}]")]
    OffDiagonalOutOfBounds {
        to: usize,
        from: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    /// A column failed to sum to zero within relative tolerance.
    #[error("column {col} sums to {sum:e}, beyond relative tolerance {tol:e}")]
    ColumnSumNonzero { col: usize, sum: f64, tol: f64 },
}

/// Validation failure for a rate matrix; lists every violated constraint.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid rate matrix: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct RateMatrixError {
    pub violations: Vec<RateMatrixViolation>,
}

/// Validated generator of a finite-state chain, in column convention:
/// `rate(j, i) = a[(j, i)]` is the intensity of jumps `i -> j`, every
/// off-diagonal entry lies in `[c, 1/c]`, and columns sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    entries: DMatrix<f64>,
    c: f64,
}

impl RateMatrix {
    /// Validates `entries` against the rate-bound `c` and returns the matrix.
    ///
    /// All violated constraints are reported at once: shape, the range of `c`,
    /// each out-of-bounds off-diagonal entry, and each column whose sum is not
    /// zero within [`COLUMN_SUM_REL_TOL`] relative to the column's magnitude.
    pub fn new(entries: DMatrix<f64>, c: f64) -> Result<Self, RateMatrixError> {
        let mut violations = Vec::new();
        let (rows, cols) = entries.shape();
        if rows != cols || rows < 2 {
            violations.push(RateMatrixViolation::BadShape { rows, cols });
            return Err(RateMatrixError { violations });
        }
        if !(c > 0.0 && c < 1.0) || !c.is_finite() {
            violations.push(RateMatrixViolation::InvalidC { c });
        } else {
            let (lo, hi) = (c, 1.0 / c);
            for from in 0..cols {
                for to in 0..rows {
                    if to == from {
                        continue;
                    }
                    let value = entries[(to, from)];
                    if !(value >= lo && value <= hi) {
                        violations.push(RateMatrixViolation::OffDiagonalOutOfBounds {
                            to,
                            from,
                            value,
                            lo,
                            hi,
                        });
                    }
                }
            }
        }
        for col in 0..cols {
            let sum: f64 = entries.column(col).iter().sum();
            let scale = entries
                .column(col)
                .iter()
                .fold(1.0_f64, |m, v| m.max(v.abs()));
            let tol = COLUMN_SUM_REL_TOL * scale;
            if sum.abs() > tol {
                violations.push(RateMatrixViolation::ColumnSumNonzero { col, sum, tol });
            }
        }
        if violations.is_empty() {
            Ok(Self { entries, c })
        } else {
            Err(RateMatrixError { violations })
        }
    }

    /// Builds the two-state matrix `[[-r, r], [r, -r]]` with symmetric rate `r`.
    pub fn two_state_symmetric(r: f64, c: f64) -> Result<Self, RateMatrixError> {
        Self::new(DMatrix::from_row_slice(2, 2, &[-r, r, r, -r]), c)
    }

    /// Number of states `N`.
    pub fn n_states(&self) -> usize {
        self.entries.nrows()
    }

    /// Rate bound parameter `c`.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Raw generator entries.
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Intensity of jumps `from -> to` (off-diagonal of the generator).
    pub fn rate(&self, to: usize, from: usize) -> f64 {
        self.entries[(to, from)]
    }

    /// Total exit intensity out of `state`, i.e. `-a[(state, state)]`.
    pub fn exit_rate(&self, state: usize) -> f64 {
        -self.entries[(state, state)]
    }

    /// The drift vector `A e_state` (column `state` of the generator).
    pub fn drift_column(&self, state: usize) -> DVector<f64> {
        self.entries.column(state).into_owned()
    }

    /// Quadratic-variation matrix `psi` of the chain martingale while the
    /// chain sits in `state`:
    /// `psi = diag(A e_i) - A diag(e_i) - diag(e_i) A^T` with `i = state`.
    pub fn psi(&self, state: usize) -> PsiMatrix {
        let n = self.n_states();
        let col = self.entries.column(state);
        let mut m = DMatrix::zeros(n, n);
        for k in 0..n {
            m[(k, k)] += col[k];
            m[(k, state)] -= col[k];
            m[(state, k)] -= col[k];
        }
        PsiMatrix { matrix: m, state }
    }

    /// Column `j` of `psi(state)` from the closed form, without assembling the
    /// full matrix: `(e_j^T A e_i)(e_j - e_i)` when `j != i`, and `-A e_i`
    /// when `j == i`.
    pub fn psi_column(&self, state: usize, j: usize) -> DVector<f64> {
        let n = self.n_states();
        if j == state {
            -self.drift_column(state)
        } else {
            let mut v = DVector::zeros(n);
            let r = self.rate(j, state);
            v[j] = r;
            v[state] = -r;
            v
        }
    }
}

/// Seminorm evaluation failure: the quadratic form came out negative beyond
/// the clamping tolerance, indicating a matrix that is not PSD.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("quadratic form v^T psi v = {value:e} negative beyond tolerance {tol:e}")]
pub struct NegativeBeyondTolerance {
    pub value: f64,
    pub tol: f64,
}

/// The symmetric PSD matrix `psi` attached to one chain state.
///
/// Its kernel always contains the constant vector, so the induced seminorm
/// identifies vectors that differ by a multiple of `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiMatrix {
    matrix: DMatrix<f64>,
    state: usize,
}

impl PsiMatrix {
    /// State this matrix was evaluated at.
    pub fn state(&self) -> usize {
        self.state
    }

    /// Matrix entries.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Dimension `N`.
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Squared seminorm `v^T psi v`, clamped to zero when roundoff drives it
    /// slightly negative.  Values negative beyond the tolerance (relative to
    /// `|psi| * |v|^2`) are reported as an error instead of clamped.
    pub fn seminorm_sq(&self, v: &DVector<f64>) -> Result<f64, NegativeBeyondTolerance> {
        let q = (v.transpose() * &self.matrix * v)[(0, 0)];
        if q >= 0.0 {
            return Ok(q);
        }
        let scale = self.matrix.amax().max(1.0) * v.norm_squared().max(1.0);
        let tol = SEMINORM_CLAMP_TOL * scale;
        if -q <= tol {
            Ok(0.0)
        } else {
            Err(NegativeBeyondTolerance { value: q, tol })
        }
    }

    /// Seminorm `sqrt(v^T psi v)` with the same clamping as [`seminorm_sq`].
    ///
    /// [`seminorm_sq`]: PsiMatrix::seminorm_sq
    pub fn seminorm(&self, v: &DVector<f64>) -> Result<f64, NegativeBeyondTolerance> {
        self.seminorm_sq(v).map(f64::sqrt)
    }

    /// Moore-Penrose pseudoinverse via symmetric eigendecomposition.
    ///
    /// Eigenvalues below `N * eps * lambda_max` are treated as zero, so the
    /// kernel (which always contains the constant vector) is annihilated
    /// rather than amplified.  The zero matrix maps to the zero matrix.
    pub fn pinv(&self) -> DMatrix<f64> {
        let n = self.n();
        let eig = self.matrix.clone().symmetric_eigen();
        let lambda_max = eig.eigenvalues.amax();
        let thresh = n as f64 * f64::EPSILON * lambda_max;
        let mut out = DMatrix::zeros(n, n);
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda.abs() > thresh && lambda != 0.0 {
                let v = eig.eigenvectors.column(k);
                out += v * v.transpose() / lambda;
            }
        }
        out
    }

    /// Eigenvalues of `psi` in ascending order.
    pub fn eigenvalues(&self) -> DVector<f64> {
        let mut ev: Vec<f64> = self
            .matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        DVector::from_vec(ev)
    }
}

/// One trajectory of the chain on `[0, horizon]`.
///
/// `states` has one more entry than `jump_times`; `states[k]` is occupied on
/// `[jump_times[k-1], jump_times[k])` (with the obvious end intervals), and
/// the path is right-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    horizon: f64,
    jump_times: Vec<f64>,
    states: Vec<usize>,
}

impl ChainPath {
    /// Builds a path from raw data, checking basic consistency.
    pub fn from_parts(horizon: f64, jump_times: Vec<f64>, states: Vec<usize>) -> Self {
        assert_eq!(states.len(), jump_times.len() + 1, "states/jumps mismatch");
        assert!(
            jump_times.windows(2).all(|w| w[0] <= w[1]),
            "jump times must be sorted"
        );
        assert!(
            jump_times.iter().all(|&t| t > 0.0 && t < horizon),
            "jump times must lie strictly inside (0, horizon)"
        );
        Self {
            horizon,
            jump_times,
            states,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initial_state(&self) -> usize {
        self.states[0]
    }

    pub fn terminal_state(&self) -> usize {
        *self.states.last().unwrap()
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    /// State occupied at time `t` (right-continuous: at a jump time the new
    /// state is returned).
    pub fn state_at(&self, t: f64) -> usize {
        let idx = self.jump_times.partition_point(|&s| s <= t);
        self.states[idx]
    }

    /// Left limit `X_{t-}`: the state occupied just before `t`.
    pub fn state_before(&self, t: f64) -> usize {
        let idx = self.jump_times.partition_point(|&s| s < t);
        self.states[idx]
    }

    /// Jumps as `(time, from, to)` triples.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, usize, usize)> + '_ {
        self.jump_times
            .iter()
            .enumerate()
            .map(|(k, &t)| (t, self.states[k], self.states[k + 1]))
    }

    /// Constant-state segments `(start, end, state)` covering `[0, horizon]`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        (0..self.states.len()).map(|k| {
            let start = if k == 0 { 0.0 } else { self.jump_times[k - 1] };
            let end = if k == self.jump_times.len() {
                self.horizon
            } else {
                self.jump_times[k]
            };
            (start, end, self.states[k])
        })
    }

    /// Time spent in each state over `[0, horizon]`.
    pub fn occupation(&self, n_states: usize) -> DVector<f64> {
        self.occupation_on(0.0, self.horizon, n_states)
    }

    /// Time spent in each state over `[a, b] ∩ [0, horizon]`.
    pub fn occupation_on(&self, a: f64, b: f64, n_states: usize) -> DVector<f64> {
        let mut occ = DVector::zeros(n_states);
        for (start, end, state) in self.segments() {
            let lo = start.max(a);
            let hi = end.min(b);
            if hi > lo {
                occ[state] += hi - lo;
            }
        }
        occ
    }

    /// Indicator vector `e_{X_t}`.
    pub fn state_vector_at(&self, t: f64, n_states: usize) -> DVector<f64> {
        unit_vector(n_states, self.state_at(t))
    }
}

/// Unit vector `e_i` in `R^n`.
pub fn unit_vector(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}

/// Simulates the chain exactly: exponential holding times with the current
/// exit rate, next state drawn proportionally to the off-diagonal column
/// rates.  Identical RNG state yields an identical path.
pub fn simulate_chain<R: Rng + ?Sized>(
    a: &RateMatrix,
    x0: usize,
    horizon: f64,
    rng: &mut R,
) -> ChainPath {
    assert!(x0 < a.n_states(), "initial state out of range");
    assert!(horizon >= 0.0 && horizon.is_finite());
    let n = a.n_states();
    let mut t = 0.0;
    let mut state = x0;
    let mut jump_times = Vec::new();
    let mut states = vec![x0];
    loop {
        let rate = a.exit_rate(state);
        let hold = Exp::new(rate).expect("positive exit rate").sample(rng);
        t += hold;
        if t >= horizon {
            break;
        }
        let u: f64 = rng.gen::<f64>() * rate;
        let mut acc = 0.0;
        let mut next = usize::MAX;
        for j in 0..n {
            if j == state {
                continue;
            }
            acc += a.rate(j, state);
            if u < acc {
                next = j;
                break;
            }
        }
        if next == usize::MAX {
            // Roundoff in the cumulative sum; take the last admissible state.
            next = (0..n).rev().find(|&j| j != state).unwrap();
        }
        jump_times.push(t);
        states.push(next);
        state = next;
    }
    ChainPath {
        horizon,
        jump_times,
        states,
    }
}

/// Grid increments of the chain martingale:
/// `dM_k = X_{t_{k+1}} - X_{t_k} - integral_{t_k}^{t_{k+1}} A X_s ds`,
/// with the integral evaluated exactly from the piecewise-constant path.
pub fn martingale_increments(
    path: &ChainPath,
    a: &RateMatrix,
    grid: &TimeGrid,
) -> Vec<DVector<f64>> {
    assert!(
        grid.horizon() <= path.horizon() + 1e-12,
        "grid extends past the simulated horizon"
    );
    let n = a.n_states();
    let mut out = Vec::with_capacity(grid.n_steps());
    for k in 0..grid.n_steps() {
        let (t0, t1) = (grid.node(k), grid.node(k + 1));
        let occ = path.occupation_on(t0, t1, n);
        let dm = path.state_vector_at(t1, n) - path.state_vector_at(t0, n) - a.entries() * occ;
        out.push(dm);
    }
    out
}

/// Terminal value `M_T` of the chain martingale, computed exactly.
pub fn martingale_terminal(path: &ChainPath, a: &RateMatrix) -> DVector<f64> {
    let n = a.n_states();
    let occ = path.occupation(n);
    path.state_vector_at(path.horizon(), n) - unit_vector(n, path.initial_state())
        - a.entries() * occ
}

/// Exact integral of `psi_s` over `[0, horizon]` along a path: the sum of
/// `duration * psi(state)` over constant-state segments.  This is the
/// predictable quadratic variation of the chain martingale.
pub fn integrated_psi(path: &ChainPath, a: &RateMatrix) -> DMatrix<f64> {
    let n = a.n_states();
    let mut acc = DMatrix::zeros(n, n);
    for (start, end, state) in path.segments() {
        if end > start {
            acc += a.psi(state).matrix() * (end - start);
        }
    }
    acc
}

/// Per-pair jump counts and their compensators along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpCounts {
    /// `counts[(i, j)]` is the number of `i -> j` jumps on `[0, T]`.
    pub counts: DMatrix<u64>,
    /// `compensators[(i, j)] = rate(j, i) * occupation_i`, the predictable
    /// compensator of the corresponding counting process at `T`.
    pub compensators: DMatrix<f64>,
}

/// Counts each ordered jump pair along the path and evaluates the matching
/// compensators exactly from the occupation times.
pub fn count_jumps(path: &ChainPath, a: &RateMatrix) -> JumpCounts {
    let n = a.n_states();
    let mut counts = DMatrix::<u64>::zeros(n, n);
    for (_, from, to) in path.jumps() {
        counts[(from, to)] += 1;
    }
    let occ = path.occupation(n);
    let mut compensators = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                compensators[(i, j)] = a.rate(j, i) * occ[i];
            }
        }
    }
    JumpCounts {
        counts,
        compensators,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::stream_rng;
    use approx::assert_relative_eq;

    fn two_state() -> RateMatrix {
        RateMatrix::two_state_symmetric(1.0, 0.5).unwrap()
    }

    fn random_rate_matrix<R: Rng>(n: usize, c: f64, rng: &mut R) -> RateMatrix {
        let mut m = DMatrix::zeros(n, n);
        for from in 0..n {
            let mut sum = 0.0;
            for to in 0..n {
                if to != from {
                    // log-uniform on [c, 1/c]
                    let t: f64 = rng.gen();
                    let v = c * (1.0 / (c * c)).powf(t);
                    m[(to, from)] = v;
                    sum += v;
                }
            }
            m[(from, from)] = -sum;
        }
        RateMatrix::new(m, c).unwrap()
    }

    #[test]
    fn accepts_valid_two_state_matrix() {
        let a = two_state();
        assert_eq!(a.n_states(), 2);
        assert_eq!(a.rate(1, 0), 1.0);
        assert_eq!(a.exit_rate(0), 1.0);
    }

    #[test]
    fn rejects_rate_above_upper_bound() {
        let err = RateMatrix::two_state_symmetric(3.0, 0.5).unwrap_err();
        assert!(err.violations.iter().any(|v| matches!(
            v,
            RateMatrixViolation::OffDiagonalOutOfBounds { value, hi, .. }
            if *value == 3.0 && *hi == 2.0
        )));
    }

    #[test]
    fn rejects_nonzero_column_sum() {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.9, -1.0]);
        let err = RateMatrix::new(m, 0.5).unwrap_err();
        assert!(err
            .violations
            .iter()
            .any(|v| matches!(v, RateMatrixViolation::ColumnSumNonzero { col: 0, .. })));
    }

    #[test]
    fn rejects_c_outside_unit_interval() {
        for c in [1.5, 0.0, -0.25, 1.0] {
            let m = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
            let err = RateMatrix::new(m, c).unwrap_err();
            assert!(err
                .violations
                .iter()
                .any(|v| matches!(v, RateMatrixViolation::InvalidC { .. })));
        }
    }

    #[test]
    fn reports_all_violations_at_once() {
        // Bad c plus a bad column sum in one shot.
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.5, -1.0]);
        let err = RateMatrix::new(m, 2.0).unwrap_err();
        assert!(err.violations.len() >= 2);
    }

    #[test]
    fn zero_horizon_path_has_no_jumps() {
        let a = two_state();
        let mut rng = stream_rng(7, 0, 1);
        let p = simulate_chain(&a, 0, 0.0, &mut rng);
        assert_eq!(p.n_jumps(), 0);
        assert_eq!(p.initial_state(), 0);
        assert_eq!(p.state_at(0.0), 0);
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let a = random_rate_matrix(4, 0.4, &mut stream_rng(3, 0, 0));
        let p1 = simulate_chain(&a, 2, 5.0, &mut stream_rng(11, 42, 1));
        let p2 = simulate_chain(&a, 2, 5.0, &mut stream_rng(11, 42, 1));
        assert_eq!(p1, p2);
        let p3 = simulate_chain(&a, 2, 5.0, &mut stream_rng(11, 43, 1));
        assert_ne!(p1, p3);
    }

    #[test]
    fn alternating_states_for_two_state_chain() {
        let a = two_state();
        let p = simulate_chain(&a, 0, 50.0, &mut stream_rng(5, 1, 1));
        assert!(p.n_jumps() > 10);
        for (_, from, to) in p.jumps() {
            assert_ne!(from, to);
        }
    }

    #[test]
    fn psi_two_state_closed_form() {
        let a = two_state();
        let psi = a.psi(0);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(psi.matrix(), &expected);
        // Row and column sums vanish: the constant vector is in the kernel.
        let ones = DVector::from_element(2, 1.0);
        assert!((psi.matrix() * &ones).amax() < 1e-15);
    }

    #[test]
    fn psi_matches_column_formula_for_random_matrices() {
        let mut rng = stream_rng(17, 0, 0);
        for _ in 0..50 {
            let n = rng.gen_range(2..=6);
            let a = random_rate_matrix(n, 0.3, &mut rng);
            for state in 0..n {
                let psi = a.psi(state);
                for j in 0..n {
                    let col = a.psi_column(state, j);
                    let dense = psi.matrix().column(j).into_owned();
                    assert_relative_eq!(col, dense, epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn psi_is_symmetric_psd_with_constant_kernel() {
        let mut rng = stream_rng(19, 0, 0);
        for _ in 0..25 {
            let n = rng.gen_range(2..=6);
            let a = random_rate_matrix(n, 0.3, &mut rng);
            for state in 0..n {
                let psi = a.psi(state);
                let m = psi.matrix();
                assert!((m - m.transpose()).amax() < 1e-14);
                let evs = psi.eigenvalues();
                assert!(evs[0] > -1e-10 * evs[evs.len() - 1].max(1.0));
                let ones = DVector::from_element(n, 1.0);
                assert!((m * ones).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn seminorm_oracle_values() {
        let a = two_state();
        let psi = a.psi(0);
        // Constants sit in the kernel.
        let ones = DVector::from_element(2, 1.0);
        assert_eq!(psi.seminorm_sq(&ones).unwrap(), 0.0);
        // Second coordinate direction has squared seminorm psi[(1,1)] = 1.
        let e2 = unit_vector(2, 1);
        assert_relative_eq!(psi.seminorm_sq(&e2).unwrap(), 1.0);
        assert_eq!(psi.seminorm_sq(&DVector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn seminorm_rejects_genuinely_negative_forms() {
        // A fabricated non-PSD "psi" must be reported, not clamped.
        let bad = PsiMatrix {
            matrix: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]),
            state: 0,
        };
        let err = bad.seminorm_sq(&unit_vector(2, 0)).unwrap_err();
        assert!(err.value < 0.0);
    }

    #[test]
    fn pinv_two_state_oracle_value() {
        let a = two_state();
        let pinv = a.psi(0).pinv();
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert_relative_eq!(pinv, expected, epsilon = 1e-14);
    }

    #[test]
    fn pinv_satisfies_moore_penrose_identities() {
        let mut rng = stream_rng(23, 0, 0);
        for _ in 0..25 {
            let n = rng.gen_range(2..=6);
            let a = random_rate_matrix(n, 0.3, &mut rng);
            for state in 0..n {
                let psi = a.psi(state).matrix().clone();
                let pinv = a.psi(state).pinv();
                let scale = psi.amax();
                assert!((&psi * &pinv * &psi - &psi).amax() < 1e-12 * scale);
                assert!((&pinv * &psi * &pinv - &pinv).amax() < 1e-12 * scale);
                assert!(((&psi * &pinv).transpose() - &psi * &pinv).amax() < 1e-12);
                assert!(((&pinv * &psi).transpose() - &pinv * &psi).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn pinv_of_zero_matrix_is_zero() {
        let zero = PsiMatrix {
            matrix: DMatrix::zeros(3, 3),
            state: 0,
        };
        assert_eq!(zero.pinv(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn pinv_restores_jump_directions() {
        // psi psi^+ acts as the identity on e_j - e_i for every state j
        // reachable from the current state i (all of them here, since rates
        // are bounded below).
        let mut rng = stream_rng(29, 0, 0);
        for _ in 0..25 {
            let n = rng.gen_range(2..=6);
            let a = random_rate_matrix(n, 0.3, &mut rng);
            for state in 0..n {
                let psi = a.psi(state).matrix().clone();
                let pinv = a.psi(state).pinv();
                for j in 0..n {
                    if j == state {
                        continue;
                    }
                    let d = unit_vector(n, j) - unit_vector(n, state);
                    assert_relative_eq!(&psi * &pinv * &d, d, epsilon = 1e-11);
                    assert_relative_eq!(&pinv * &psi * &d, d, epsilon = 1e-11);
                }
            }
        }
    }

    #[test]
    fn martingale_increment_without_jumps_is_minus_drift() {
        let a = two_state();
        let path = ChainPath::from_parts(1.0, vec![], vec![0]);
        let grid = TimeGrid::uniform(1.0, 4);
        let dms = martingale_increments(&path, &a, &grid);
        for dm in &dms {
            // X constant: dM = -A e_0 * dt = (0.25, -0.25).
            assert_relative_eq!(dm[0], 0.25, epsilon = 1e-14);
            assert_relative_eq!(dm[1], -0.25, epsilon = 1e-14);
        }
    }

    #[test]
    fn martingale_increment_single_jump_closed_form() {
        let a = two_state();
        let tau = 0.3;
        let path = ChainPath::from_parts(1.0, vec![tau], vec![0, 1]);
        let grid = TimeGrid::uniform(1.0, 1);
        let dm = &martingale_increments(&path, &a, &grid)[0];
        // dM = (e_1 - e_0) - A (tau e_0 + (1 - tau) e_1)
        let expected = unit_vector(2, 1)
            - unit_vector(2, 0)
            - a.entries() * (unit_vector(2, 0) * tau + unit_vector(2, 1) * (1.0 - tau));
        assert_relative_eq!(dm, &expected, epsilon = 1e-14);
    }

    #[test]
    fn martingale_increments_sum_to_terminal_value() {
        let a = random_rate_matrix(3, 0.4, &mut stream_rng(31, 0, 0));
        let path = simulate_chain(&a, 1, 2.0, &mut stream_rng(31, 5, 1));
        let grid = TimeGrid::uniform(2.0, 13);
        let total: DVector<f64> = martingale_increments(&path, &a, &grid)
            .into_iter()
            .fold(DVector::zeros(3), |acc, dm| acc + dm);
        assert_relative_eq!(total, martingale_terminal(&path, &a), epsilon = 1e-12);
    }

    #[test]
    fn chain_martingale_has_near_zero_mean() {
        let a = two_state();
        let n_paths = 20_000;
        let mut sums = DVector::zeros(2);
        let mut sq = DVector::zeros(2);
        for i in 0..n_paths {
            let path = simulate_chain(&a, 0, 1.0, &mut stream_rng(1234, i, 1));
            let m = martingale_terminal(&path, &a);
            sums += &m;
            sq += m.map(|v| v * v);
        }
        for k in 0..2 {
            let mean = sums[k] / n_paths as f64;
            let var = sq[k] / n_paths as f64 - mean * mean;
            let se = (var / n_paths as f64).sqrt();
            assert!(
                mean.abs() <= 3.0 * se,
                "component {k}: mean {mean} exceeds 3 SE {se}"
            );
        }
    }

    #[test]
    fn count_jumps_on_constructed_path() {
        let a = two_state();
        let path = ChainPath::from_parts(1.0, vec![0.2, 0.7], vec![0, 1, 0]);
        let jc = count_jumps(&path, &a);
        assert_eq!(jc.counts[(0, 1)], 1);
        assert_eq!(jc.counts[(1, 0)], 1);
        assert_eq!(jc.counts[(0, 0)], 0);
        // Occupation: state 0 on [0,0.2) and [0.7,1.0) -> 0.5; state 1 -> 0.5.
        assert_relative_eq!(jc.compensators[(0, 1)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(jc.compensators[(1, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn jump_counts_match_compensator_in_expectation() {
        // For the symmetric two-state chain started in state 0 the occupation
        // probability is P(X_s = e_0) = (1 + exp(-2s)) / 2, so the expected
        // number of 0 -> 1 jumps on [0, 1] is 1/2 + (1 - exp(-2))/4.
        let a = two_state();
        let expected = 0.5 + (1.0 - (-2.0_f64).exp()) / 4.0;
        assert_relative_eq!(expected, 0.716_166_179, epsilon = 1e-9);
        let n_paths = 20_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for i in 0..n_paths {
            let path = simulate_chain(&a, 0, 1.0, &mut stream_rng(777, i, 1));
            let c = count_jumps(&path, &a).counts[(0, 1)] as f64;
            sum += c;
            sumsq += c * c;
        }
        let mean = sum / n_paths as f64;
        let var = sumsq / n_paths as f64 - mean * mean;
        let se = (var / n_paths as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "mean {mean} vs expected {expected} (3 SE = {})",
            3.0 * se
        );
    }

    #[test]
    fn integrated_psi_matches_segment_sum() {
        let a = two_state();
        let path = ChainPath::from_parts(1.0, vec![0.25], vec![0, 1]);
        let got = integrated_psi(&path, &a);
        let expected = a.psi(0).matrix() * 0.25 + a.psi(1).matrix() * 0.75;
        assert_relative_eq!(got, expected, epsilon = 1e-14);
    }
}
