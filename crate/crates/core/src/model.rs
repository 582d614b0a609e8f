//! Decision processes over the consecutive-miss counter.
//!
//! Three constructions share one tabular representation
//! ([`DecisionProcess`]):
//! - the fully observable process on `(s1, s2, n)`;
//! - the forgetful process, where an interface that was switched off keeps
//!   one slot of propagated belief and then falls back to its steady state;
//! - the hidden process, where an interface that was switched off is
//!   immediately treated as being at its steady state.
//!
//! States with `n = N` are absorbing and carry no transitions.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ge::{GeParams, InterfaceState};

/// Which interfaces transmit in a slot. Switching both off is not an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    /// `(0,1)`
    SecondOnly,
    /// `(1,0)`
    FirstOnly,
    /// `(1,1)`
    Both,
}

impl Action {
    /// Canonical order; also the tie-break order among equally priced actions.
    pub const ALL: [Action; 3] = [Action::SecondOnly, Action::FirstOnly, Action::Both];

    pub fn index(self) -> usize {
        match self {
            Action::SecondOnly => 0,
            Action::FirstOnly => 1,
            Action::Both => 2,
        }
    }

    pub fn from_bits(first: bool, second: bool) -> Result<Self> {
        match (first, second) {
            (false, true) => Ok(Action::SecondOnly),
            (true, false) => Ok(Action::FirstOnly),
            (true, true) => Ok(Action::Both),
            (false, false) => Err(Error::InvalidParameter(
                "action (0,0) is not allowed: at least one interface must transmit".into(),
            )),
        }
    }

    pub fn first(self) -> bool {
        matches!(self, Action::FirstOnly | Action::Both)
    }

    pub fn second(self) -> bool {
        matches!(self, Action::SecondOnly | Action::Both)
    }

    /// Whether interface `i` (0 or 1) transmits.
    pub fn transmits(self, i: usize) -> bool {
        if i == 0 {
            self.first()
        } else {
            self.second()
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.first() as u8, self.second() as u8)
    }
}

impl FromStr for Action {
    type Err = Error;

    /// Accepts `(1,0)`, `1,0` and `10`.
    fn from_str(s: &str) -> Result<Self> {
        let digits: Vec<char> = s
            .chars()
            .filter(|c| !matches!(c, '(' | ')' | ',' | ' '))
            .collect();
        let bit = |c: char| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::InvalidParameter(format!("bad action '{s}'"))),
        };
        match digits.as_slice() {
            [a, b] => Action::from_bits(bit(*a)?, bit(*b)?),
            _ => Err(Error::InvalidParameter(format!("bad action '{s}'"))),
        }
    }
}

/// Energy cost model: `c_i = eta * E_i / (E_1 + E_2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub eta: f64,
    /// Transmit power of interface 1 in mW.
    pub power1: f64,
    /// Transmit power of interface 2 in mW.
    pub power2: f64,
    pub success_reward: f64,
    pub miss_reward: f64,
}

impl CostModel {
    pub fn new(eta: f64, power1: f64, power2: f64) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::InvalidParameter(format!("eta = {eta} must be a non-negative real")));
        }
        if !(power1 >= 0.0 && power2 >= 0.0) {
            return Err(Error::InvalidParameter("interface powers must be non-negative".into()));
        }
        let model = Self { eta, power1, power2, success_reward: 1.0, miss_reward: -1.0 };
        model.interface_costs()?;
        Ok(model)
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        let mut next = Self::new(eta, self.power1, self.power2)?;
        next.success_reward = self.success_reward;
        next.miss_reward = self.miss_reward;
        Ok(next)
    }

    pub fn interface_costs(&self) -> Result<(f64, f64)> {
        let total = self.power1 + self.power2;
        if !(total > 0.0) {
            return Err(Error::ZeroTotalPower(total));
        }
        Ok((self.eta * self.power1 / total, self.eta * self.power2 / total))
    }

    /// `c(A) = a1 c1 + a2 c2`.
    pub fn action_cost(&self, action: Action) -> Result<f64> {
        let (c1, c2) = self.interface_costs()?;
        Ok(action.first() as u8 as f64 * c1 + action.second() as u8 as f64 * c2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    Miss,
}

/// An update gets through iff some transmitting interface is `Good` in the
/// slot it is sent.
pub fn transmission_outcome(next: (InterfaceState, InterfaceState), action: Action) -> Outcome {
    let first_ok = action.first() && next.0.is_good();
    let second_ok = action.second() && next.1.is_good();
    if first_ok || second_ok {
        Outcome::Success
    } else {
        Outcome::Miss
    }
}

/// Consecutive-miss counter update; `max_misses` is absorbing.
pub fn next_counter(n: usize, outcome: Outcome, max_misses: usize) -> Result<usize> {
    if n >= max_misses {
        return Err(Error::AbsorbingState(n));
    }
    Ok(match outcome {
        Outcome::Success => 0,
        Outcome::Miss => (n + 1).min(max_misses),
    })
}

/// Joint interface states plus the consecutive-miss counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemState {
    pub s1: InterfaceState,
    pub s2: InterfaceState,
    pub n: usize,
}

impl SystemState {
    pub fn new(s1: InterfaceState, s2: InterfaceState, n: usize) -> Self {
        Self { s1, s2, n }
    }

    /// Index of `(s1, s2)` in `GG, GB, BG, BB` order.
    pub fn combo(&self) -> usize {
        self.s1.index() * 2 + self.s2.index()
    }

    /// Position in the state list produced by [`build_full_mdp`].
    pub fn full_index(&self) -> usize {
        self.n * 4 + self.combo()
    }
}

impl fmt::Display for SystemState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.s1, self.s2, self.n)
    }
}

/// The four `(s1, s2)` pairs in `GG, GB, BG, BB` order.
pub const COMBOS: [(InterfaceState, InterfaceState); 4] = [
    (InterfaceState::Good, InterfaceState::Good),
    (InterfaceState::Good, InterfaceState::Bad),
    (InterfaceState::Bad, InterfaceState::Good),
    (InterfaceState::Bad, InterfaceState::Bad),
];

/// `T(S, A, S')` for the fully observable process.
pub fn transition(
    from: &SystemState,
    action: Action,
    to: &SystemState,
    params1: &GeParams,
    params2: &GeParams,
    max_misses: usize,
) -> Result<f64> {
    let expected_n = next_counter(from.n, transmission_outcome((to.s1, to.s2), action), max_misses)?;
    if to.n != expected_n {
        return Ok(0.0);
    }
    Ok(params1.transition_prob(from.s1, to.s1) * params2.transition_prob(from.s2, to.s2))
}

/// `R(S, A, S') = r(n') - c(A)`.
pub fn reward(
    _from: &SystemState,
    action: Action,
    to: &SystemState,
    costs: &CostModel,
) -> Result<f64> {
    let base = if to.n == 0 { costs.success_reward } else { costs.miss_reward };
    Ok(base - costs.action_cost(action)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

/// A finite episodic decision process with the three-action set.
#[derive(Debug, Clone)]
pub struct DecisionProcess<S> {
    states: Vec<S>,
    absorbing: Vec<bool>,
    rows: Vec<[Vec<Transition>; 3]>,
    preference: [Action; 3],
    gamma: f64,
    max_misses: usize,
    index: HashMap<S, usize>,
}

impl<S: Clone + Eq + Hash> DecisionProcess<S> {
    /// Assembles a process. `rows[i][a.index()]` lists the outcomes of action
    /// `a` in state `i`; absorbing states must have empty rows. Costs fix the
    /// tie-break order (cheapest first, canonical order among equals).
    pub fn new(
        states: Vec<S>,
        absorbing: Vec<bool>,
        rows: Vec<[Vec<Transition>; 3]>,
        costs: [f64; 3],
        gamma: f64,
        max_misses: usize,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!("discount {gamma} must lie in (0, 1)")));
        }
        if states.len() != absorbing.len() || states.len() != rows.len() {
            return Err(Error::InvalidParameter("state, absorbing and row tables differ in length".into()));
        }
        let mut index = HashMap::with_capacity(states.len());
        for (i, s) in states.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::InvalidParameter("duplicate state label".into()));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            for outcomes in row {
                if absorbing[i] && !outcomes.is_empty() {
                    return Err(Error::InvalidParameter(format!("absorbing state {i} has transitions")));
                }
                if outcomes.iter().any(|t| t.next >= states.len()) {
                    return Err(Error::InvalidParameter(format!("state {i} points outside the process")));
                }
            }
        }
        let mut preference = Action::ALL;
        preference.sort_by(|a, b| costs[a.index()].total_cmp(&costs[b.index()]));
        Ok(Self { states, absorbing, rows, preference, gamma, max_misses, index })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &S {
        &self.states[i]
    }

    pub fn index_of(&self, state: &S) -> Option<usize> {
        self.index.get(state).copied()
    }

    pub fn is_absorbing(&self, i: usize) -> bool {
        self.absorbing[i]
    }

    pub fn outcomes(&self, i: usize, action: Action) -> &[Transition] {
        &self.rows[i][action.index()]
    }

    /// Actions ordered for tie-breaking: cheapest first.
    pub fn preference(&self) -> [Action; 3] {
        self.preference
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn max_misses(&self) -> usize {
        self.max_misses
    }

    /// Expected one-step reward `sum_S' T(S,A,S') R(S,A,S')`.
    pub fn expected_reward(&self, i: usize, action: Action) -> f64 {
        self.outcomes(i, action).iter().map(|t| t.prob * t.reward).sum()
    }

    pub fn non_absorbing(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.absorbing[i])
    }
}

fn action_costs(costs: &CostModel) -> Result<[f64; 3]> {
    Ok([
        costs.action_cost(Action::SecondOnly)?,
        costs.action_cost(Action::FirstOnly)?,
        costs.action_cost(Action::Both)?,
    ])
}

fn check_max_misses(max_misses: usize) -> Result<()> {
    if max_misses == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    Ok(())
}

/// The fully observable process: `4 (N + 1)` states, indexed by
/// [`SystemState::full_index`].
pub fn build_full_mdp(
    params1: &GeParams,
    params2: &GeParams,
    costs: &CostModel,
    max_misses: usize,
    gamma: f64,
) -> Result<DecisionProcess<SystemState>> {
    check_max_misses(max_misses)?;
    let mut states = Vec::with_capacity(4 * (max_misses + 1));
    for n in 0..=max_misses {
        for (s1, s2) in COMBOS {
            states.push(SystemState::new(s1, s2, n));
        }
    }
    let absorbing: Vec<bool> = states.iter().map(|s| s.n == max_misses).collect();
    let mut rows = Vec::with_capacity(states.len());
    for from in &states {
        let mut row: [Vec<Transition>; 3] = Default::default();
        if from.n < max_misses {
            for action in Action::ALL {
                for (s1, s2) in COMBOS {
                    let n = next_counter(from.n, transmission_outcome((s1, s2), action), max_misses)?;
                    let to = SystemState::new(s1, s2, n);
                    let prob = transition(from, action, &to, params1, params2, max_misses)?;
                    if prob > 0.0 {
                        row[action.index()].push(Transition {
                            next: to.full_index(),
                            prob,
                            reward: reward(from, action, &to, costs)?,
                        });
                    }
                }
            }
        }
        rows.push(row);
    }
    DecisionProcess::new(states, absorbing, rows, action_costs(costs)?, gamma, max_misses)
}

/// What an agent knows about one interface at decision time. Knowledge
/// refers to the interface state in the previous slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Knowledge {
    /// Transmitted last slot and saw this state.
    Known(InterfaceState),
    /// Off for exactly one slot after being seen in this state.
    Stale(InterfaceState),
    /// Assumed to be at its steady state.
    Unknown,
}

impl fmt::Display for Knowledge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Knowledge::Known(s) => write!(f, "{s}"),
            Knowledge::Stale(s) => write!(f, "{s}~"),
            Knowledge::Unknown => write!(f, "?"),
        }
    }
}

/// How an agent forgets an interface that stopped transmitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Forgetting {
    /// One slot of propagated belief, then steady state.
    Forgetful,
    /// Steady state immediately.
    Hidden,
}

impl Forgetting {
    pub fn alphabet(self) -> &'static [Knowledge] {
        use InterfaceState::*;
        match self {
            Forgetting::Forgetful => &[
                Knowledge::Known(Good),
                Knowledge::Known(Bad),
                Knowledge::Stale(Good),
                Knowledge::Stale(Bad),
                Knowledge::Unknown,
            ],
            Forgetting::Hidden => &[Knowledge::Known(Good), Knowledge::Known(Bad), Knowledge::Unknown],
        }
    }

    /// Knowledge after a slot in which the interface did not transmit.
    pub fn advance_off(self, k: Knowledge) -> Knowledge {
        match (self, k) {
            (Forgetting::Forgetful, Knowledge::Known(s)) => Knowledge::Stale(s),
            _ => Knowledge::Unknown,
        }
    }

    /// Knowledge after a slot with observation `observed` (`None` when off).
    pub fn observe(self, k: Knowledge, observed: Option<InterfaceState>) -> Knowledge {
        match observed {
            Some(s) => Knowledge::Known(s),
            None => self.advance_off(k),
        }
    }
}

/// Distribution `(good, bad)` of the previous-slot interface state implied
/// by a knowledge value.
pub fn implied_distribution(k: Knowledge, params: &GeParams) -> Result<[f64; 2]> {
    Ok(match k {
        Knowledge::Known(InterfaceState::Good) => [1.0, 0.0],
        Knowledge::Known(InterfaceState::Bad) => [0.0, 1.0],
        Knowledge::Stale(s) => {
            let g = params.transition_prob(s, InterfaceState::Good);
            [g, 1.0 - g]
        }
        Knowledge::Unknown => {
            let (g, b) = params.steady_state()?;
            [g, b]
        }
    })
}

/// State of the forgetful and hidden processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpistemicState {
    pub k1: Knowledge,
    pub k2: Knowledge,
    pub n: usize,
}

impl EpistemicState {
    pub fn new(k1: Knowledge, k2: Knowledge, n: usize) -> Self {
        Self { k1, k2, n }
    }
}

impl fmt::Display for EpistemicState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.k1, self.k2, self.n)
    }
}

/// Builds the forgetful or hidden process. Only knowledge pairs with at
/// least one `Known` component are enumerated: every action transmits on
/// some interface, so other pairs cannot occur after the first slot.
pub fn build_epistemic(
    regime: Forgetting,
    params1: &GeParams,
    params2: &GeParams,
    costs: &CostModel,
    max_misses: usize,
    gamma: f64,
) -> Result<DecisionProcess<EpistemicState>> {
    check_max_misses(max_misses)?;
    params1.steady_state()?;
    params2.steady_state()?;
    let alphabet = regime.alphabet();
    let mut pairs = Vec::new();
    for &k1 in alphabet {
        for &k2 in alphabet {
            if matches!(k1, Knowledge::Known(_)) || matches!(k2, Knowledge::Known(_)) {
                pairs.push((k1, k2));
            }
        }
    }
    let mut states = Vec::with_capacity(pairs.len() * (max_misses + 1));
    for n in 0..=max_misses {
        for &(k1, k2) in &pairs {
            states.push(EpistemicState::new(k1, k2, n));
        }
    }
    let lookup: HashMap<EpistemicState, usize> =
        states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let absorbing: Vec<bool> = states.iter().map(|s| s.n == max_misses).collect();
    let params = [params1, params2];
    let mut rows = Vec::with_capacity(states.len());
    for from in &states {
        let mut row: [Vec<Transition>; 3] = Default::default();
        if from.n < max_misses {
            let knowledge = [from.k1, from.k2];
            // Next-slot distribution of each interface when it transmits.
            let mut next_dist = [[0.0; 2]; 2];
            for i in 0..2 {
                next_dist[i] = params[i].propagate(implied_distribution(knowledge[i], params[i])?);
            }
            for action in Action::ALL {
                let cost = costs.action_cost(action)?;
                let mut merged: Vec<Transition> = Vec::new();
                for (s1, s2) in COMBOS {
                    let mut prob = 1.0;
                    let mut next_k = [Knowledge::Unknown; 2];
                    let realized = [s1, s2];
                    let mut skip = false;
                    for i in 0..2 {
                        if action.transmits(i) {
                            prob *= next_dist[i][realized[i].index()];
                            next_k[i] = Knowledge::Known(realized[i]);
                        } else if realized[i] == InterfaceState::Good {
                            // Off interfaces do not branch; take the Good slot only.
                            next_k[i] = regime.advance_off(knowledge[i]);
                        } else {
                            skip = true;
                        }
                    }
                    if skip || prob <= 0.0 {
                        continue;
                    }
                    let n = next_counter(from.n, transmission_outcome((s1, s2), action), max_misses)?;
                    let to = EpistemicState::new(next_k[0], next_k[1], n);
                    let next = lookup[&to];
                    let base = if n == 0 { costs.success_reward } else { costs.miss_reward };
                    merged.push(Transition { next, prob, reward: base - cost });
                }
                row[action.index()] = merged;
            }
        }
        rows.push(row);
    }
    DecisionProcess::new(states, absorbing, rows, action_costs(costs)?, gamma, max_misses)
}

/// Hidden process: an idle interface is at steady state from the next slot.
pub fn build_hmdp(
    params1: &GeParams,
    params2: &GeParams,
    costs: &CostModel,
    max_misses: usize,
    gamma: f64,
) -> Result<DecisionProcess<EpistemicState>> {
    build_epistemic(Forgetting::Hidden, params1, params2, costs, max_misses, gamma)
}

/// Forgetful process: one slot of propagated belief for an idle interface.
pub fn build_fpomdp_mdp(
    params1: &GeParams,
    params2: &GeParams,
    costs: &CostModel,
    max_misses: usize,
    gamma: f64,
) -> Result<DecisionProcess<EpistemicState>> {
    build_epistemic(Forgetting::Forgetful, params1, params2, costs, max_misses, gamma)
}
