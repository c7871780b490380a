//! Numerical laboratory for backward stochastic differential equations
//! driven jointly by Brownian motion and a finite-state Markov chain, with
//! regime-switching drivers, two independent solver backends, closed-form
//! oracles, an order-preservation harness, and conic bid/ask pricing via
//! sublinear expectations.
//!
//! The unknown triple `(Y, Z1, Z2)` solves
//!
//! ```text
//! Y_t = Q + int_t^T F(u, Y_u, Z1_u, Z2_u, X_u) du
//!         - int_t^T Z1_u dW_u - int_t^T Z2_u' dM_u
//! ```
//!
//! where `W` is a Brownian motion, `X` a continuous-time chain with
//! generator `A` (column convention: entry `(j, i)` is the jump rate from
//! state `i` to state `j`), and `M` the martingale part of `X`. States are
//! indexed from 0 throughout.
//!
//! # Modules
//!
//! - [`chain`]: rate matrices, exact chain simulation, the per-state
//!   jump-covariance matrix `psi` with its pseudoinverse and seminorm,
//!   martingale increments, and compensated jump counts.
//! - [`paths`]: time grids, joint Brownian/chain path batches with
//!   counter-based per-path substreams, and the versioned binary path
//!   store.
//! - [`claim`]: terminal payoffs `Q = q(W_T, X_T)` with declared growth
//!   bounds and combinators (scale, shift, add, negate).
//! - [`driver`]: the driver trait with declared structural flags, a
//!   library of concrete drivers (affine, drift-ambiguity, chain-ambiguity,
//!   regime-switched), and sampling-based checkers for Lipschitz constants,
//!   sublinearity flags, and balanced growth.
//! - [`solver`]: two backends — coupled finite differences on a truncated
//!   space grid and least-squares Monte Carlo with per-state regression —
//!   plus staged outer iteration and the order-preservation
//!   (comparison) harness.
//! - [`oracle`]: independent reference values from conditional-expectation
//!   sampling and the stochastic-exponential closed form for affine
//!   drivers.
//! - [`pricing`]: verified sublinear driver specs, bid/ask quotes, the
//!   sublinear-expectation axiom battery, and a brute-force drift-sweep
//!   cross-check.
//! - [`config`]: TOML experiment configuration with strict unknown-key
//!   rejection.
//! - [`runner`]: the command-line entry point (`simulate`, `solve`,
//!   `price`, `verify`, `compare`) with deterministic, replayable
//!   artifacts.
//!
//! # Examples
//!
//! Each capability has a runnable walk-through under `examples/`:
//!
//! - `simulate_chain` — trajectories, jump counts, compensators.
//! - `psi_algebra` — the jump-covariance matrix and its pseudoinverse.
//! - `joint_paths` — reproducible batches and the binary path store.
//! - `solve_pde` — the finite-difference backend against closed forms.
//! - `solve_lsmc` — the regression backend, diagnostics, sampled processes.
//! - `linear_closed_form` — the stochastic-exponential oracle.
//! - `comparison` — order preservation and premise rejection.
//! - `bid_ask` — two-price quotes under drift ambiguity.
//! - `sublinear_axioms` — the axiom battery and intermediate-time slices.
//!
//! Run one with `cargo run --release --example bid_ask`.

pub mod chain;
pub mod claim;
pub mod config;
pub mod driver;
pub mod oracle;
pub mod paths;
pub mod pricing;
pub mod runner;
pub mod solver;
