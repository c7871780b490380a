//! Terminal claims: payoffs of the form `q(W_T, X_T)`.
//!
//! A claim carries its payoff map together with a declared polynomial growth
//! bound `|q(w, i)| <= scale * (1 + |w|^power)`, which the PDE backend uses to
//! size its spatial domain.

use std::fmt;
use std::ops::{Add, Neg};
use std::sync::Arc;

use thiserror::Error;

type Payoff = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;

/// Declared growth bound violated at a sampled point.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("claim '{name}' violates its growth bound at w = {w}, state {state}: |q| = {value} > {bound}")]
pub struct GrowthBoundViolation {
    pub name: String,
    pub w: f64,
    pub state: usize,
    pub value: f64,
    pub bound: f64,
}

/// A terminal payoff `q(W_T, X_T)` with a declared growth bound.
#[derive(Clone)]
pub struct TerminalClaim {
    name: String,
    scale: f64,
    power: f64,
    payoff: Payoff,
}

impl fmt::Debug for TerminalClaim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalClaim")
            .field("name", &self.name)
            .field("scale", &self.scale)
            .field("power", &self.power)
            .finish()
    }
}

impl TerminalClaim {
    /// Claim from an arbitrary payoff with growth bound
    /// `|q(w, i)| <= scale * (1 + |w|^power)`.
    pub fn new(
        name: impl Into<String>,
        scale: f64,
        power: f64,
        payoff: impl Fn(f64, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        assert!(scale > 0.0 && power >= 0.0);
        Self {
            name: name.into(),
            scale,
            power,
            payoff: Arc::new(payoff),
        }
    }

    pub fn evaluate(&self, w: f64, state: usize) -> f64 {
        (self.payoff)(w, state)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Scale factor of the growth bound.
    pub fn growth_scale(&self) -> f64 {
        self.scale
    }

    /// Polynomial power of the growth bound.
    pub fn growth_power(&self) -> f64 {
        self.power
    }

    /// Samples the payoff over `[-w_max, w_max]` and all states, reporting the
    /// first point where the declared growth bound fails.
    pub fn check_growth(
        &self,
        n_states: usize,
        w_max: f64,
        n_samples: usize,
    ) -> Result<(), GrowthBoundViolation> {
        for k in 0..n_samples {
            let w = -w_max + 2.0 * w_max * k as f64 / (n_samples - 1).max(1) as f64;
            for state in 0..n_states {
                let value = self.evaluate(w, state).abs();
                let bound = self.scale * (1.0 + w.abs().powf(self.power)) * (1.0 + 1e-12);
                if value > bound {
                    return Err(GrowthBoundViolation {
                        name: self.name.clone(),
                        w,
                        state,
                        value,
                        bound,
                    });
                }
            }
        }
        Ok(())
    }

    /// The identity claim `W_T`.
    pub fn brownian() -> Self {
        Self::new("brownian", 1.0, 1.0, |w, _| w)
    }

    /// The claim `W_T^2`.
    pub fn brownian_squared() -> Self {
        Self::new("brownian_squared", 1.0, 2.0, |w, _| w * w)
    }

    /// Indicator `1{X_T = e_state}`.
    pub fn state_indicator(state: usize) -> Self {
        Self::new(
            format!("indicator_state_{state}"),
            1.0,
            0.0,
            move |_, s| if s == state { 1.0 } else { 0.0 },
        )
    }

    /// Constant claim.
    pub fn constant(value: f64) -> Self {
        Self::new(
            format!("constant_{value}"),
            value.abs().max(1e-12),
            0.0,
            move |_, _| value,
        )
    }

    /// Call payoff `max(W_T - strike, 0)`.
    pub fn call(strike: f64) -> Self {
        Self::new(
            format!("call_{strike}"),
            1.0 + strike.abs(),
            1.0,
            move |w, _| (w - strike).max(0.0),
        )
    }

    /// Per-state quadratic payoff `c0[i] + c1[i] w + c2[i] w^2`.
    pub fn state_polynomial(c0: Vec<f64>, c1: Vec<f64>, c2: Vec<f64>) -> Self {
        let scale = c0
            .iter()
            .chain(&c1)
            .chain(&c2)
            .fold(1e-12_f64, |m, v| m.max(v.abs()))
            * 3.0;
        Self::new("state_polynomial", scale, 2.0, move |w, s| {
            c0[s] + c1[s] * w + c2[s] * w * w
        })
    }

    /// Same payoff scaled by `lambda >= 0`.
    pub fn scaled(&self, lambda: f64) -> Self {
        assert!(lambda >= 0.0);
        let payoff = self.payoff.clone();
        Self {
            name: format!("{}*{}", lambda, self.name),
            scale: (self.scale * lambda).max(1e-12),
            power: self.power,
            payoff: Arc::new(move |w, s| lambda * payoff(w, s)),
        }
    }

    /// Payoff shifted by a constant.
    pub fn shifted(&self, delta: f64) -> Self {
        let payoff = self.payoff.clone();
        Self {
            name: format!("{}+{}", self.name, delta),
            scale: self.scale + delta.abs(),
            power: self.power,
            payoff: Arc::new(move |w, s| payoff(w, s) + delta),
        }
    }
}

impl Add for &TerminalClaim {
    type Output = TerminalClaim;

    fn add(self, other: &TerminalClaim) -> TerminalClaim {
        let (p, q) = (self.payoff.clone(), other.payoff.clone());
        TerminalClaim {
            name: format!("{}+{}", self.name, other.name),
            scale: self.scale + other.scale,
            power: self.power.max(other.power),
            payoff: Arc::new(move |w, s| p(w, s) + q(w, s)),
        }
    }
}

impl Neg for &TerminalClaim {
    type Output = TerminalClaim;

    fn neg(self) -> TerminalClaim {
        let p = self.payoff.clone();
        TerminalClaim {
            name: format!("-({})", self.name),
            scale: self.scale,
            power: self.power,
            payoff: Arc::new(move |w, s| -p(w, s)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_claims_evaluate_as_documented() {
        assert_eq!(TerminalClaim::brownian().evaluate(1.5, 0), 1.5);
        assert_eq!(TerminalClaim::brownian_squared().evaluate(-2.0, 1), 4.0);
        assert_eq!(TerminalClaim::state_indicator(1).evaluate(0.3, 1), 1.0);
        assert_eq!(TerminalClaim::state_indicator(1).evaluate(0.3, 0), 0.0);
        assert_eq!(TerminalClaim::constant(2.5).evaluate(-7.0, 0), 2.5);
        assert_eq!(TerminalClaim::call(1.0).evaluate(1.75, 0), 0.75);
        assert_eq!(TerminalClaim::call(1.0).evaluate(0.25, 0), 0.0);
    }

    #[test]
    fn combinators_compose_payoffs() {
        let q = TerminalClaim::brownian();
        assert_eq!(q.scaled(2.0).evaluate(3.0, 0), 6.0);
        assert_eq!(q.shifted(1.0).evaluate(3.0, 0), 4.0);
        assert_eq!((&q + &TerminalClaim::constant(1.0)).evaluate(3.0, 0), 4.0);
        assert_eq!((-&q).evaluate(3.0, 0), -3.0);
    }

    #[test]
    fn growth_check_accepts_library_and_rejects_liar() {
        TerminalClaim::brownian_squared()
            .check_growth(2, 10.0, 101)
            .unwrap();
        let liar = TerminalClaim::new("liar", 1.0, 1.0, |w, _| w * w * w);
        assert!(liar.check_growth(2, 10.0, 101).is_err());
    }
}
