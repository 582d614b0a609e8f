//! Two-state Gilbert-Elliott channel.
//!
//! An interface is `Good` in a slot when an update sent through it would
//! arrive before the deadline, `Bad` otherwise. The state follows a Markov
//! chain with `p = Pr(Good -> Bad)` and `r = Pr(Bad -> Good)`.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InterfaceState {
    Good,
    Bad,
}

impl InterfaceState {
    pub const ALL: [InterfaceState; 2] = [InterfaceState::Good, InterfaceState::Bad];

    pub fn index(self) -> usize {
        match self {
            InterfaceState::Good => 0,
            InterfaceState::Bad => 1,
        }
    }

    pub fn is_good(self) -> bool {
        self == InterfaceState::Good
    }

    pub fn symbol(self) -> char {
        match self {
            InterfaceState::Good => 'G',
            InterfaceState::Bad => 'B',
        }
    }
}

impl fmt::Display for InterfaceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// Transition pair `(p, r)` of one interface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeParams {
    p: f64,
    r: f64,
}

fn check_probability(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {value} is not a probability")))
    }
}

impl GeParams {
    pub fn new(p: f64, r: f64) -> Result<Self> {
        check_probability("p", p)?;
        check_probability("r", r)?;
        Ok(Self { p, r })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// One-slot transition probability `Pr(to | from)`.
    pub fn transition_prob(&self, from: InterfaceState, to: InterfaceState) -> f64 {
        use InterfaceState::*;
        match (from, to) {
            (Good, Good) => 1.0 - self.p,
            (Good, Bad) => self.p,
            (Bad, Good) => self.r,
            (Bad, Bad) => 1.0 - self.r,
        }
    }

    /// Row-major 2x2 kernel, rows indexed by the current state.
    pub fn kernel(&self) -> [[f64; 2]; 2] {
        [[1.0 - self.p, self.p], [self.r, 1.0 - self.r]]
    }

    /// Stationary probabilities `(pi_G, pi_B) = (r, p) / (p + r)`.
    pub fn steady_state(&self) -> Result<(f64, f64)> {
        let total = self.p + self.r;
        if total <= 0.0 {
            return Err(Error::DegenerateChain);
        }
        let good = self.r / total;
        Ok((good, 1.0 - good))
    }

    /// Distribution of the next state given a distribution `(good, bad)` of
    /// the current one.
    pub fn propagate(&self, dist: [f64; 2]) -> [f64; 2] {
        let good = (1.0 - self.p) * dist[0] + self.r * dist[1];
        [good, 1.0 - good]
    }

    /// Inverse-CDF sampler: leaves `Good` iff `draw < p`, leaves `Bad` iff
    /// `draw < r`. Deterministic in its arguments.
    #[inline]
    pub fn step(&self, current: InterfaceState, draw: f64) -> InterfaceState {
        match current {
            InterfaceState::Good if draw < self.p => InterfaceState::Bad,
            InterfaceState::Good => InterfaceState::Good,
            InterfaceState::Bad if draw < self.r => InterfaceState::Good,
            InterfaceState::Bad => InterfaceState::Bad,
        }
    }

    /// Scales both rates by `1 + delta`, which keeps `p / (p + r)` fixed.
    /// Used to model an agent whose channel estimate is off by `delta`.
    pub fn scaled(&self, delta: f64) -> Result<Self> {
        if !(delta > -1.0) {
            return Err(Error::InvalidParameter(format!("relative error {delta} must exceed -1")));
        }
        Self::new((1.0 + delta) * self.p, (1.0 + delta) * self.r)
    }
}
