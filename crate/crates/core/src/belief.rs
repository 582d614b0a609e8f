//! Belief tracking, the Q-MDP action rule and the runtime agents.
//!
//! Every agent takes one [`Observation`] per slot and returns the next
//! action. Beliefs and knowledge refer to the interface states of the slot
//! just observed; an interface that did not transmit is propagated one step
//! through its channel kernel (Q-MDP) or forgotten (forgetful/hidden agents).

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ge::{GeParams, InterfaceState};
use crate::model::{
    build_epistemic, build_full_mdp, Action, CostModel, DecisionProcess, EpistemicState, Forgetting, Knowledge,
    SystemState, COMBOS,
};
use crate::solver::{argmax_action, greedy_policy, value_iteration, Policy, QTable, SolverSettings};

/// Probability that each interface is `Good`, plus the exact miss counter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub b1: f64,
    pub b2: f64,
    pub n: usize,
}

/// Per-interface observation (`None` when the interface was idle and no
/// side channel reports it) and the miss counter, which is always seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub o1: Option<InterfaceState>,
    pub o2: Option<InterfaceState>,
    pub n: usize,
}

impl Observation {
    pub fn full(state: &SystemState) -> Self {
        Self { o1: Some(state.s1), o2: Some(state.s2), n: state.n }
    }

    /// Observation after `action`: idle interfaces are hidden unless
    /// `side_channel` is set.
    pub fn masked(state: &SystemState, action: Action, side_channel: bool) -> Self {
        Self {
            o1: (side_channel || action.first()).then_some(state.s1),
            o2: (side_channel || action.second()).then_some(state.s2),
            n: state.n,
        }
    }
}

fn update_one(b: f64, o: Option<InterfaceState>, params: &GeParams) -> f64 {
    match o {
        Some(InterfaceState::Good) => 1.0,
        Some(InterfaceState::Bad) => 0.0,
        None => (1.0 - params.p()) * b + params.r() * (1.0 - b),
    }
}

/// Exact reset on an observation, one-step propagation otherwise.
pub fn update_belief(b: &Belief, o: &Observation, params1: &GeParams, params2: &GeParams) -> Belief {
    Belief { b1: update_one(b.b1, o.o1, params1), b2: update_one(b.b2, o.o2, params2), n: o.n }
}

/// Product-form distribution over the four `(s1, s2, n)` states.
pub fn joint_belief(b: &Belief) -> [(SystemState, f64); 4] {
    let w1 = [b.b1, 1.0 - b.b1];
    let w2 = [b.b2, 1.0 - b.b2];
    COMBOS.map(|(s1, s2)| (SystemState::new(s1, s2, b.n), w1[s1.index()] * w2[s2.index()]))
}

/// `argmax_A sum_S b(S) Q(S, A)` over a full-MDP Q-table.
pub fn qmdp_action(b: &Belief, q: &QTable, max_misses: usize) -> Result<Action> {
    if b.n >= max_misses {
        return Err(Error::AbsorbingBelief(b.n));
    }
    let mut scores = [0.0; 3];
    for (state, weight) in joint_belief(b) {
        let row = q.row(state.full_index());
        for (score, value) in scores.iter_mut().zip(row) {
            *score += weight * value;
        }
    }
    Ok(argmax_action(scores, q.preference()))
}

/// Agent families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    /// Policy of the fully observable process; sees idle interfaces too.
    FullMdp,
    /// Belief tracking with belief-averaged full-MDP Q-values.
    Qmdp,
    /// Forgetful process policy.
    Fpomdp,
    /// Hidden process policy.
    Hmdp,
    Fixed(Action),
}

impl AgentKind {
    pub fn requires_side_channel(self) -> bool {
        self == AgentKind::FullMdp
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentKind::FullMdp => write!(f, "fullmdp"),
            AgentKind::Qmdp => write!(f, "qmdp"),
            AgentKind::Fpomdp => write!(f, "fpomdp"),
            AgentKind::Hmdp => write!(f, "hmdp"),
            AgentKind::Fixed(a) => write!(f, "fixed:{a}"),
        }
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "fullmdp" | "full" | "mdp" => Ok(AgentKind::FullMdp),
            "qmdp" | "pomdp" => Ok(AgentKind::Qmdp),
            "fpomdp" => Ok(AgentKind::Fpomdp),
            "hmdp" => Ok(AgentKind::Hmdp),
            other => match other.strip_prefix("fixed:") {
                Some(action) => Ok(AgentKind::Fixed(action.parse()?)),
                None => Err(Error::InvalidParameter(format!("unknown agent '{s}'"))),
            },
        }
    }
}

/// Channel and cost model an agent plans with. May differ from the true
/// environment in sensitivity runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanningModel {
    pub params1: GeParams,
    pub params2: GeParams,
    pub costs: CostModel,
    pub max_misses: usize,
    pub gamma: f64,
    pub settings: SolverSettings,
}

/// Convergence record of the solve behind an agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub iterations: usize,
    pub converged: bool,
    pub last_delta: f64,
}

const KNOWLEDGE_CODES: usize = 5;

fn knowledge_code(k: Knowledge) -> usize {
    match k {
        Knowledge::Known(InterfaceState::Good) => 0,
        Knowledge::Known(InterfaceState::Bad) => 1,
        Knowledge::Stale(InterfaceState::Good) => 2,
        Knowledge::Stale(InterfaceState::Bad) => 3,
        Knowledge::Unknown => 4,
    }
}

/// Dense `(k1, k2, n) -> action` table for the hot simulation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct EpistemicLookup {
    regime: Forgetting,
    max_misses: usize,
    actions: Vec<Option<Action>>,
}

impl EpistemicLookup {
    pub fn new(regime: Forgetting, process: &DecisionProcess<EpistemicState>, policy: &Policy) -> Self {
        let max_misses = process.max_misses();
        let mut actions = vec![None; KNOWLEDGE_CODES * KNOWLEDGE_CODES * (max_misses + 1)];
        for (i, state) in process.states().iter().enumerate() {
            actions[Self::slot(max_misses, state)] = policy.action(i);
        }
        Self { regime, max_misses, actions }
    }

    fn slot(max_misses: usize, s: &EpistemicState) -> usize {
        (knowledge_code(s.k1) * KNOWLEDGE_CODES + knowledge_code(s.k2)) * (max_misses + 1) + s.n
    }

    pub fn regime(&self) -> Forgetting {
        self.regime
    }

    pub fn max_misses(&self) -> usize {
        self.max_misses
    }

    pub fn action(&self, state: &EpistemicState) -> Option<Action> {
        self.actions.get(Self::slot(self.max_misses, state)).copied().flatten()
    }
}

/// A solved, immutable agent description; shared across episodes.
#[derive(Debug, Clone)]
pub enum AgentSpec {
    FullMdp { policy: Arc<Policy>, max_misses: usize },
    Qmdp { q: Arc<QTable>, params1: GeParams, params2: GeParams, max_misses: usize },
    Epistemic { kind: AgentKind, lookup: Arc<EpistemicLookup> },
    Fixed(Action),
}

impl AgentSpec {
    /// Solves whatever the agent needs under `model`.
    pub fn solve(kind: AgentKind, model: &PlanningModel) -> Result<(Self, Option<SolveInfo>)> {
        let info = |sol: &crate::solver::Solution| SolveInfo {
            iterations: sol.iterations,
            converged: sol.converged,
            last_delta: sol.last_delta,
        };
        match kind {
            AgentKind::FullMdp | AgentKind::Qmdp => {
                let mdp = build_full_mdp(&model.params1, &model.params2, &model.costs, model.max_misses, model.gamma)?;
                let sol = value_iteration(&mdp, model.settings);
                let record = info(&sol);
                let spec = if kind == AgentKind::FullMdp {
                    AgentSpec::FullMdp { policy: Arc::new(greedy_policy(&sol.table)), max_misses: model.max_misses }
                } else {
                    AgentSpec::Qmdp {
                        q: Arc::new(sol.table),
                        params1: model.params1,
                        params2: model.params2,
                        max_misses: model.max_misses,
                    }
                };
                Ok((spec, Some(record)))
            }
            AgentKind::Fpomdp | AgentKind::Hmdp => {
                let regime = if kind == AgentKind::Fpomdp { Forgetting::Forgetful } else { Forgetting::Hidden };
                let process =
                    build_epistemic(regime, &model.params1, &model.params2, &model.costs, model.max_misses, model.gamma)?;
                let sol = value_iteration(&process, model.settings);
                let policy = greedy_policy(&sol.table);
                let lookup = EpistemicLookup::new(regime, &process, &policy);
                Ok((AgentSpec::Epistemic { kind, lookup: Arc::new(lookup) }, Some(info(&sol))))
            }
            AgentKind::Fixed(action) => Ok((AgentSpec::Fixed(action), None)),
        }
    }

    pub fn kind(&self) -> AgentKind {
        match self {
            AgentSpec::FullMdp { .. } => AgentKind::FullMdp,
            AgentSpec::Qmdp { .. } => AgentKind::Qmdp,
            AgentSpec::Epistemic { kind, .. } => *kind,
            AgentSpec::Fixed(a) => AgentKind::Fixed(*a),
        }
    }

    /// Whether the environment must reveal idle interfaces to this agent.
    pub fn requires_side_channel(&self) -> bool {
        self.kind().requires_side_channel()
    }

    /// Fresh per-episode agent.
    pub fn spawn(&self) -> Agent<'_> {
        let memory = match self {
            AgentSpec::Qmdp { params1, params2, .. } => {
                // Overwritten by the initial full observation.
                let prior = |p: &GeParams| p.steady_state().map(|(g, _)| g).unwrap_or(0.5);
                Memory::Belief(Belief { b1: prior(params1), b2: prior(params2), n: 0 })
            }
            AgentSpec::Epistemic { .. } => Memory::Knowledge(EpistemicState::new(Knowledge::Unknown, Knowledge::Unknown, 0)),
            _ => Memory::Stateless,
        };
        Agent { spec: self, memory }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Memory {
    Stateless,
    Belief(Belief),
    Knowledge(EpistemicState),
}

/// One agent instance for one episode.
#[derive(Debug, Clone)]
pub struct Agent<'a> {
    spec: &'a AgentSpec,
    memory: Memory,
}

impl Agent<'_> {
    pub fn memory(&self) -> Memory {
        self.memory
    }

    /// Absorbs the latest observation and returns the next action.
    #[inline]
    pub fn decide(&mut self, o: &Observation) -> Result<Action> {
        match self.spec {
            AgentSpec::Fixed(action) => Ok(*action),
            AgentSpec::FullMdp { policy, max_misses } => {
                let (Some(s1), Some(s2)) = (o.o1, o.o2) else {
                    return Err(Error::ContractViolation(
                        "the fully observable agent needs both interface states every slot".into(),
                    ));
                };
                if o.n >= *max_misses {
                    return Err(Error::AbsorbingBelief(o.n));
                }
                policy
                    .action(SystemState::new(s1, s2, o.n).full_index())
                    .ok_or(Error::AbsorbingBelief(o.n))
            }
            AgentSpec::Qmdp { q, params1, params2, max_misses } => {
                let Memory::Belief(b) = &mut self.memory else { unreachable!("qmdp agent holds a belief") };
                *b = update_belief(b, o, params1, params2);
                qmdp_action(b, q, *max_misses)
            }
            AgentSpec::Epistemic { lookup, .. } => {
                let Memory::Knowledge(k) = &mut self.memory else { unreachable!("epistemic agent holds knowledge") };
                let regime = lookup.regime();
                *k = EpistemicState::new(regime.observe(k.k1, o.o1), regime.observe(k.k2, o.o2), o.n);
                lookup.action(k).ok_or(Error::AbsorbingBelief(o.n))
            }
        }
    }
}

/// Functional form of [`Agent::decide`]: returns the action and the new memory.
pub fn agent_decide(spec: &AgentSpec, memory: Memory, o: &Observation) -> Result<(Action, Memory)> {
    let mut agent = Agent { spec, memory };
    let action = agent.decide(o)?;
    Ok((action, agent.memory))
}

#[cfg(test)]
mod tests {
    use super::*;
    use InterfaceState::*;

    fn table1(eta: f64) -> PlanningModel {
        PlanningModel {
            params1: GeParams::new(0.0178, 0.2577).unwrap(),
            params2: GeParams::new(0.0515, 0.9468).unwrap(),
            costs: CostModel::new(eta, 200.0, 15.85).unwrap(),
            max_misses: 4,
            gamma: 0.99999,
            settings: SolverSettings::default(),
        }
    }

    #[test]
    fn belief_update_examples() {
        let m = table1(0.0);
        let b = Belief { b1: 0.3, b2: 0.2, n: 0 };
        let o = Observation { o1: None, o2: Some(Good), n: 1 };
        let next = update_belief(&b, &o, &m.params1, &m.params2);
        assert_eq!(next.b2, 1.0);
        assert_eq!(next.n, 1);
        let b = Belief { b1: 1.0, b2: 1.0, n: 0 };
        let o = Observation { o1: Some(Bad), o2: None, n: 0 };
        let next = update_belief(&b, &o, &m.params1, &m.params2);
        assert_eq!(next.b1, 0.0);
        assert!((next.b2 - 0.9485).abs() < 1e-12);
    }

    #[test]
    fn repeated_propagation_reaches_steady_state() {
        let m = table1(0.0);
        let mut b = Belief { b1: 0.0, b2: 1.0, n: 0 };
        let none = Observation { o1: None, o2: None, n: 0 };
        for _ in 0..200 {
            b = update_belief(&b, &none, &m.params1, &m.params2);
        }
        assert!((b.b1 - m.params1.steady_state().unwrap().0).abs() < 1e-9);
        assert!((b.b2 - m.params2.steady_state().unwrap().0).abs() < 1e-9);
    }

    #[test]
    fn joint_belief_examples() {
        let point = joint_belief(&Belief { b1: 1.0, b2: 1.0, n: 0 });
        assert_eq!(point[0], (SystemState::new(Good, Good, 0), 1.0));
        assert!(point[1..].iter().all(|(_, w)| *w == 0.0));
        let uniform = joint_belief(&Belief { b1: 0.5, b2: 0.5, n: 2 });
        for (s, w) in uniform {
            assert_eq!(s.n, 2);
            assert_eq!(w, 0.25);
        }
    }

    #[test]
    fn qmdp_on_point_mass_matches_greedy() {
        for eta in [0.07, 0.2] {
            let m = table1(eta);
            let mdp = build_full_mdp(&m.params1, &m.params2, &m.costs, 4, m.gamma).unwrap();
            let sol = value_iteration(&mdp, SolverSettings { epsilon: 1e-11, k_max: 20_000 });
            let policy = greedy_policy(&sol.table);
            for i in mdp.non_absorbing() {
                let s = mdp.state(i);
                let b = Belief { b1: s.s1.is_good() as u8 as f64, b2: s.s2.is_good() as u8 as f64, n: s.n };
                assert_eq!(qmdp_action(&b, &sol.table, 4).unwrap(), policy.action(i).unwrap());
            }
        }
    }

    #[test]
    fn qmdp_uniform_belief_is_mean_of_q() {
        let pref = Action::ALL;
        // Four combos at n = 0, one absorbing state block afterwards.
        let mut q = vec![[0.0; 3]; 8];
        q[0] = [4.0, 0.0, 1.0];
        q[1] = [0.0, 4.0, 1.0];
        q[2] = [0.0, 4.0, 1.0];
        q[3] = [0.0, 0.0, 1.0];
        let absorbing = (0..8).map(|i| i >= 4).collect();
        let table = QTable::from_parts(q, absorbing, pref);
        // Means: (0,1) -> 1.0, (1,0) -> 2.0, (1,1) -> 1.0
        let a = qmdp_action(&Belief { b1: 0.5, b2: 0.5, n: 0 }, &table, 1).unwrap();
        assert_eq!(a, Action::FirstOnly);
        assert_eq!(
            qmdp_action(&Belief { b1: 0.5, b2: 0.5, n: 1 }, &table, 1),
            Err(Error::AbsorbingBelief(1))
        );
    }

    #[test]
    fn qmdp_at_zero_cost_always_duplicates() {
        let (spec, _) = AgentSpec::solve(AgentKind::Qmdp, &table1(0.0)).unwrap();
        let AgentSpec::Qmdp { q, .. } = &spec else { panic!() };
        for b1 in [0.0, 0.1, 0.5, 0.93, 1.0] {
            for b2 in [0.0, 0.3, 0.95, 1.0] {
                for n in 0..4 {
                    assert_eq!(qmdp_action(&Belief { b1, b2, n }, q, 4).unwrap(), Action::Both);
                }
            }
        }
    }

    #[test]
    fn agent_examples() {
        let (full, _) = AgentSpec::solve(AgentKind::FullMdp, &table1(0.0)).unwrap();
        let mut agent = full.spawn();
        let o = Observation::full(&SystemState::new(Bad, Bad, 2));
        assert_eq!(agent.decide(&o).unwrap(), Action::Both);
        let hidden = Observation { o1: None, o2: Some(Good), n: 0 };
        assert!(matches!(agent.decide(&hidden), Err(Error::ContractViolation(_))));

        let fixed = AgentSpec::Fixed(Action::SecondOnly);
        let mut agent = fixed.spawn();
        assert_eq!(agent.decide(&hidden).unwrap(), Action::SecondOnly);
        assert_eq!(agent.decide(&o).unwrap(), Action::SecondOnly);
    }

    #[test]
    fn hidden_agent_drops_bad_first_interface_at_zero_cost() {
        let (spec, _) = AgentSpec::solve(AgentKind::Hmdp, &table1(0.0)).unwrap();
        let mut dropped = false;
        for n in 0..4 {
            for s2 in [Good, Bad] {
                let mut agent = spec.spawn();
                let a = agent.decide(&Observation { o1: Some(Bad), o2: Some(s2), n }).unwrap();
                dropped |= !a.first();
            }
        }
        assert!(dropped);
    }

    #[test]
    fn agent_decide_is_pure() {
        let (spec, _) = AgentSpec::solve(AgentKind::Fpomdp, &table1(0.07)).unwrap();
        let memory = spec.spawn().memory();
        let o = Observation { o1: Some(Bad), o2: Some(Good), n: 1 };
        let first = agent_decide(&spec, memory, &o).unwrap();
        let second = agent_decide(&spec, memory, &o).unwrap();
        assert_eq!(first, second);
        let Memory::Knowledge(k) = first.1 else { panic!() };
        assert_eq!(k, EpistemicState::new(Knowledge::Known(Bad), Knowledge::Known(Good), 1));
    }

    #[test]
    fn agent_kind_parsing() {
        for kind in ["fullmdp", "qmdp", "fpomdp", "hmdp", "fixed:(0,1)", "fixed:(1,1)"] {
            let parsed: AgentKind = kind.parse().unwrap();
            assert_eq!(parsed.to_string(), kind);
        }
        assert!("fixed:(0,0)".parse::<AgentKind>().is_err());
        assert!("oracle".parse::<AgentKind>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn obs() -> impl Strategy<Value = Option<InterfaceState>> {
            prop_oneof![Just(None), Just(Some(Good)), Just(Some(Bad))]
        }

        proptest! {
            #[test]
            fn beliefs_stay_in_unit_interval(
                p in 0.0..=1.0f64, r in 0.0..=1.0f64, b0 in 0.0..=1.0f64,
                seq in proptest::collection::vec((obs(), obs()), 1..60),
            ) {
                let params = GeParams::new(p, r).unwrap();
                let mut b = Belief { b1: b0, b2: 1.0 - b0, n: 0 };
                for (o1, o2) in seq {
                    b = update_belief(&b, &Observation { o1, o2, n: 0 }, &params, &params);
                    prop_assert!((0.0..=1.0).contains(&b.b1));
                    prop_assert!((0.0..=1.0).contains(&b.b2));
                    if o1.is_some() { prop_assert!(b.b1 == 0.0 || b.b1 == 1.0); }
                }
            }

            #[test]
            fn joint_weights_sum_to_one(b1 in 0.0..=1.0f64, b2 in 0.0..=1.0f64, n in 0usize..5) {
                let total: f64 = joint_belief(&Belief { b1, b2, n }).iter().map(|(_, w)| w).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
