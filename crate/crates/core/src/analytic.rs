//! Exact analysis of a frozen policy as an absorbing Markov chain.
//!
//! Expected visit counts `x` of the transient states solve
//! `(I - Q)^T x = init`, where `Q` is the policy-induced transition matrix
//! restricted to transient states. Lifetime, occupancy, utilization and the
//! undiscounted total reward are all visit-weighted sums over `x`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::hash::Hash;

use crate::belief::EpistemicLookup;
use crate::error::{Error, Result};
use crate::ge::{GeParams, InterfaceState};
use crate::linalg::solve_refined;
use crate::model::{
    next_counter, transmission_outcome, Action, CostModel, DecisionProcess, EpistemicState, Knowledge, SystemState,
    COMBOS,
};
use crate::solver::Policy;

/// Start-of-episode distribution: both interfaces are observed at their
/// steady state; a double `Bad` start already counts as one miss.
pub fn initial_distribution(params1: &GeParams, params2: &GeParams) -> Result<Vec<(SystemState, f64)>> {
    let (g1, b1) = params1.steady_state()?;
    let (g2, b2) = params2.steady_state()?;
    use InterfaceState::*;
    Ok(vec![
        (SystemState::new(Good, Good, 0), g1 * g2),
        (SystemState::new(Good, Bad, 0), g1 * b2),
        (SystemState::new(Bad, Good, 0), b1 * g2),
        (SystemState::new(Bad, Bad, 1), b1 * b2),
    ])
}

/// States that carry a miss counter.
pub trait HasCounter {
    fn counter(&self) -> usize;
}

impl HasCounter for SystemState {
    fn counter(&self) -> usize {
        self.n
    }
}

impl HasCounter for EpistemicState {
    fn counter(&self) -> usize {
        self.n
    }
}

/// One transient state of a frozen chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainNode {
    pub n: usize,
    pub action: Action,
    /// Expected one-step reward, absorbing transitions included.
    pub reward: f64,
    /// Probability of absorbing in one step.
    pub exit: f64,
}

/// Transient part of an absorbing chain. Probability mass missing from a
/// row goes to the absorbing set.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbingChain {
    nodes: Vec<ChainNode>,
    edges: Vec<Vec<(usize, f64)>>,
    init: Vec<f64>,
    max_misses: usize,
}

impl AbsorbingChain {
    pub fn new(nodes: Vec<ChainNode>, edges: Vec<Vec<(usize, f64)>>, init: Vec<f64>, max_misses: usize) -> Result<Self> {
        if nodes.len() != edges.len() || nodes.len() != init.len() {
            return Err(Error::InvalidParameter("chain nodes, edges and init differ in length".into()));
        }
        if nodes.iter().any(|node| node.n >= max_misses) {
            return Err(Error::InvalidParameter("transient node with an absorbing counter".into()));
        }
        if edges.iter().flatten().any(|&(j, p)| j >= nodes.len() || !(0.0..=1.0 + 1e-12).contains(&p)) {
            return Err(Error::InvalidParameter("chain edge out of range".into()));
        }
        Ok(Self { nodes, edges, init, max_misses })
    }

    /// Policy-induced chain of a decision process. Initial mass on absorbing
    /// states ends the episode before the first slot and is dropped.
    pub fn from_policy<S: Clone + Eq + Hash + HasCounter>(
        process: &DecisionProcess<S>,
        policy: &Policy,
        init: &[(S, f64)],
    ) -> Result<Self> {
        let transient: Vec<usize> = process.non_absorbing().collect();
        let mut slot = vec![usize::MAX; process.len()];
        for (k, &i) in transient.iter().enumerate() {
            slot[i] = k;
        }
        let mut nodes = Vec::with_capacity(transient.len());
        let mut edges = Vec::with_capacity(transient.len());
        for &i in &transient {
            let action = policy
                .action(i)
                .ok_or_else(|| Error::InvalidParameter(format!("policy undefined in state {i}")))?;
            nodes.push(ChainNode {
                n: process.state(i).counter(),
                action,
                reward: process.expected_reward(i, action),
                exit: process
                    .outcomes(i, action)
                    .iter()
                    .filter(|t| process.is_absorbing(t.next))
                    .map(|t| t.prob)
                    .sum(),
            });
            edges.push(
                process
                    .outcomes(i, action)
                    .iter()
                    .filter(|t| !process.is_absorbing(t.next))
                    .map(|t| (slot[t.next], t.prob))
                    .collect(),
            );
        }
        let mut start = vec![0.0; transient.len()];
        for (state, weight) in init {
            let i = process
                .index_of(state)
                .ok_or_else(|| Error::InvalidParameter("initial state outside the process".into()))?;
            if !process.is_absorbing(i) {
                start[slot[i]] += weight;
            }
        }
        Self::new(nodes, edges, start, process.max_misses())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[ChainNode] {
        &self.nodes
    }

    pub fn max_misses(&self) -> usize {
        self.max_misses
    }
}

/// Outcome of [`analyze`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainAnalysis {
    /// Expected number of slots before absorption.
    pub expected_lifetime: f64,
    /// Expected undiscounted sum of rewards until absorption.
    pub expected_total_reward: f64,
    /// Fraction of pre-absorption slots spent at each `n` in `0..N`.
    pub occupancy: Vec<f64>,
    /// Fraction of slots each interface transmits.
    pub utilization: [f64; 2],
    /// `max |(I - Q)^T x - init|` of the final visit counts.
    pub residual: f64,
}

/// Transient states reachable from the initial support.
fn reachable(chain: &AbsorbingChain) -> Vec<bool> {
    let mut seen = vec![false; chain.len()];
    let mut queue: VecDeque<usize> = (0..chain.len()).filter(|&i| chain.init[i] > 0.0).collect();
    for &i in &queue {
        seen[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        for &(j, p) in &chain.edges[i] {
            if p > 0.0 && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

/// Transient states from which absorption has positive probability.
fn can_absorb(chain: &AbsorbingChain) -> Vec<bool> {
    let len = chain.len();
    let mut reverse = vec![Vec::new(); len];
    let mut ok = vec![false; len];
    let mut queue = VecDeque::new();
    for i in 0..len {
        for &(j, p) in &chain.edges[i] {
            if p > 0.0 {
                reverse[j].push(i);
            }
        }
        if chain.nodes[i].exit > 0.0 {
            ok[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        for &i in &reverse[j] {
            if !ok[i] {
                ok[i] = true;
                queue.push_back(i);
            }
        }
    }
    ok
}

/// Expected visit counts, lifetime, occupancy, utilization and reward.
pub fn analyze(chain: &AbsorbingChain) -> Result<ChainAnalysis> {
    let live = reachable(chain);
    let absorbs = can_absorb(chain);
    if (0..chain.len()).any(|i| live[i] && !absorbs[i]) {
        return Err(Error::NonAbsorbing);
    }
    let index: Vec<usize> = (0..chain.len()).filter(|&i| live[i]).collect();
    let mut local = vec![usize::MAX; chain.len()];
    for (k, &i) in index.iter().enumerate() {
        local[i] = k;
    }
    let m = index.len();
    if m == 0 {
        // Every episode starts absorbed.
        return Ok(ChainAnalysis {
            expected_lifetime: 0.0,
            expected_total_reward: 0.0,
            occupancy: vec![0.0; chain.max_misses],
            utilization: [0.0; 2],
            residual: 0.0,
        });
    }
    // Transposed system: row j collects the flow into state j.
    let mut a = DMatrix::<f64>::identity(m, m);
    for (k, &i) in index.iter().enumerate() {
        for &(j, p) in &chain.edges[i] {
            a[(local[j], k)] -= p;
        }
    }
    let b = DVector::from_iterator(m, index.iter().map(|&i| chain.init[i]));
    let solved = solve_refined(&a, &b)?;
    let visits = &solved.x;

    let mut lifetime = 0.0;
    let mut reward = 0.0;
    let mut per_n = vec![0.0; chain.max_misses];
    let mut on = [0.0; 2];
    for (k, &i) in index.iter().enumerate() {
        let x = visits[k];
        let node = &chain.nodes[i];
        lifetime += x;
        reward += x * node.reward;
        per_n[node.n] += x;
        for (slot, used) in on.iter_mut().zip([node.action.first(), node.action.second()]) {
            if used {
                *slot += x;
            }
        }
    }
    if !(lifetime.is_finite() && lifetime > 0.0) {
        return Err(Error::NonAbsorbing);
    }
    Ok(ChainAnalysis {
        expected_lifetime: lifetime,
        expected_total_reward: reward,
        occupancy: per_n.iter().map(|v| v / lifetime).collect(),
        utilization: on.map(|v| v / lifetime),
        residual: solved.residual,
    })
}

/// Chain of a full-observation policy run against the true channels.
/// `policy` is indexed like [`crate::model::build_full_mdp`].
pub fn full_policy_chain(
    policy: &Policy,
    params1: &GeParams,
    params2: &GeParams,
    costs: &CostModel,
    max_misses: usize,
) -> Result<AbsorbingChain> {
    // The discount factor plays no role in the frozen chain.
    let process = crate::model::build_full_mdp(params1, params2, costs, max_misses, 0.5)?;
    if policy.len() != process.len() {
        return Err(Error::InvalidParameter("policy was solved for a different N".into()));
    }
    AbsorbingChain::from_policy(&process, policy, &initial_distribution(params1, params2)?)
}

/// Chain of a constant action run against the true channels.
pub fn fixed_action_chain(
    action: Action,
    params1: &GeParams,
    params2: &GeParams,
    costs: &CostModel,
    max_misses: usize,
) -> Result<AbsorbingChain> {
    let process = crate::model::build_full_mdp(params1, params2, costs, max_misses, 0.5)?;
    let policy = Policy::constant(&process, action);
    AbsorbingChain::from_policy(&process, &policy, &initial_distribution(params1, params2)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct LoopState {
    s: (InterfaceState, InterfaceState),
    k: EpistemicState,
}

/// Closed loop of a forgetful or hidden agent against the true channels,
/// over the joint state (true interface states, agent knowledge, n).
pub fn closed_loop_chain(
    lookup: &EpistemicLookup,
    params1: &GeParams,
    params2: &GeParams,
    costs: &CostModel,
) -> Result<AbsorbingChain> {
    let max_misses = lookup.max_misses();
    let regime = lookup.regime();
    let params = [params1, params2];
    let mut ids: HashMap<LoopState, usize> = HashMap::new();
    let mut order: Vec<LoopState> = Vec::new();
    let mut queue = VecDeque::new();
    let mut intern = |state: LoopState, order: &mut Vec<LoopState>, queue: &mut VecDeque<usize>| -> usize {
        *ids.entry(state).or_insert_with(|| {
            order.push(state);
            queue.push_back(order.len() - 1);
            order.len() - 1
        })
    };

    let mut init = Vec::new();
    for (s, w) in initial_distribution(params1, params2)? {
        if s.n >= max_misses {
            continue;
        }
        let k = EpistemicState::new(Knowledge::Known(s.s1), Knowledge::Known(s.s2), s.n);
        let id = intern(LoopState { s: (s.s1, s.s2), k }, &mut order, &mut queue);
        init.push((id, w));
    }

    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    while let Some(id) = queue.pop_front() {
        let state = order[id];
        let action = lookup.action(&state.k).ok_or_else(|| {
            Error::ContractViolation(format!("no policy entry for knowledge state {}", state.k))
        })?;
        let cost = costs.action_cost(action)?;
        let current = [state.s.0, state.s.1];
        let mut row = Vec::with_capacity(4);
        let mut expected = 0.0;
        let mut exit = 0.0;
        for (t1, t2) in COMBOS {
            let next = [t1, t2];
            let prob: f64 = (0..2).map(|i| params[i].transition_prob(current[i], next[i])).product();
            if prob <= 0.0 {
                continue;
            }
            let n = next_counter(state.k.n, transmission_outcome((t1, t2), action), max_misses)?;
            let base = if n == 0 { costs.success_reward } else { costs.miss_reward };
            expected += prob * (base - cost);
            if n == max_misses {
                exit += prob;
                continue;
            }
            let seen = |i: usize| action.transmits(i).then_some(next[i]);
            let k = EpistemicState::new(regime.observe(state.k.k1, seen(0)), regime.observe(state.k.k2, seen(1)), n);
            let to = intern(LoopState { s: (t1, t2), k }, &mut order, &mut queue);
            row.push((to, prob));
        }
        nodes.push(ChainNode { n: state.k.n, action, reward: expected, exit });
        edges.push(row);
    }
    let mut start = vec![0.0; nodes.len()];
    for (id, w) in init {
        start[id] += w;
    }
    AbsorbingChain::new(nodes, edges, start, max_misses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{AgentKind, AgentSpec, PlanningModel};
    use crate::model::build_full_mdp;
    use crate::solver::{greedy_policy, value_iteration, SolverSettings};
    use InterfaceState::*;

    fn lte() -> GeParams {
        GeParams::new(0.0178, 0.2577).unwrap()
    }

    fn wifi() -> GeParams {
        GeParams::new(0.0515, 0.9468).unwrap()
    }

    fn costs(eta: f64) -> CostModel {
        CostModel::new(eta, 200.0, 15.85).unwrap()
    }

    /// Expected slots until `N` consecutive misses when only interface 2
    /// transmits, by backward recursion on run lengths. Shares no code with
    /// the fundamental-matrix path.
    fn single_interface_oracle(first: &GeParams, second: &GeParams, max_misses: usize) -> f64 {
        let (p, r) = (second.p(), second.r());
        // E_B(n) = a[n] + (1 - c[n]) * E_G, where c[n] is the chance of
        // hitting N misses before the next Good slot.
        let mut a = vec![0.0; max_misses + 1];
        let mut c = vec![1.0; max_misses + 1];
        for n in (0..max_misses).rev() {
            a[n] = 1.0 + (1.0 - r) * a[n + 1];
            c[n] = (1.0 - r) * c[n + 1];
        }
        // E_G = 1 + (1 - p) E_G + p E_B(1)
        let e_good = (1.0 + p * a[1]) / (p * c[1]);
        let e_bad = |n: usize| a[n] + (1.0 - c[n]) * e_good;
        let (g1, b1) = (first.r() / (first.p() + first.r()), first.p() / (first.p() + first.r()));
        let (g2, b2) = (r / (p + r), p / (p + r));
        g2 * e_good + b2 * (g1 * e_bad(0) + b1 * e_bad(1))
    }

    #[test]
    fn initial_distribution_examples() {
        let init = initial_distribution(&lte(), &wifi()).unwrap();
        assert!((init[0].1 - 0.887135).abs() < 1e-6);
        assert!((init.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(init[3].0, SystemState::new(Bad, Bad, 1));
        let never_bad = GeParams::new(0.0, 0.3).unwrap();
        let init = initial_distribution(&never_bad, &never_bad).unwrap();
        assert_eq!(init[0].1, 1.0);
        assert!(init[1..].iter().all(|(_, w)| *w == 0.0));
    }

    #[test]
    fn both_on_lifetime_and_occupancy() {
        let chain = fixed_action_chain(Action::Both, &lte(), &wifi(), &costs(0.0), 4).unwrap();
        let a = analyze(&chain).unwrap();
        assert!((a.expected_lifetime / 5.0738e6 - 1.0).abs() < 0.01, "{}", a.expected_lifetime);
        let paper = [0.9967, 0.0032, 0.000127, 4.9971e-6];
        for (got, want) in a.occupancy.iter().zip(paper) {
            assert!((got / want - 1.0).abs() < 0.05, "{got} vs {want}");
        }
        assert!(a.residual <= 1e-9, "{}", a.residual);
        assert_eq!(a.utilization, [1.0, 1.0]);
    }

    #[test]
    fn second_only_lifetime_and_occupancy() {
        let chain = fixed_action_chain(Action::SecondOnly, &lte(), &wifi(), &costs(0.0), 4).unwrap();
        let a = analyze(&chain).unwrap();
        assert!((a.expected_lifetime / 1.3633e5 - 1.0).abs() < 0.01, "{}", a.expected_lifetime);
        let paper = [0.9484, 0.0489, 0.0026, 0.000138];
        for (got, want) in a.occupancy.iter().zip(paper) {
            assert!((got / want - 1.0).abs() < 0.05, "{got} vs {want}");
        }
        assert_eq!(a.utilization, [0.0, 1.0]);
    }

    #[test]
    fn second_only_matches_run_length_oracle() {
        for n in [1, 2, 3, 4, 6] {
            let chain = fixed_action_chain(Action::SecondOnly, &lte(), &wifi(), &costs(0.0), n).unwrap();
            let got = analyze(&chain).unwrap().expected_lifetime;
            let want = single_interface_oracle(&lte(), &wifi(), n);
            // Rounding in the kernel entries is amplified by ~lifetime; at
            // N = 6 that is a few 1e-9 relative.
            assert!((got / want - 1.0).abs() < 1e-8, "N={n}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_cost_reward_is_lifetime_minus_twice_misses() {
        let chain = fixed_action_chain(Action::SecondOnly, &lte(), &wifi(), &costs(0.0), 4).unwrap();
        let a = analyze(&chain).unwrap();
        // Each slot earns +1 on success and -1 on a miss.
        let misses = a.expected_lifetime * (1.0 - a.occupancy[0]) + 1.0;
        let successes = a.expected_lifetime - misses;
        let reward = successes - misses;
        assert!((a.expected_total_reward / reward - 1.0).abs() < 1e-3, "{} vs {reward}", a.expected_total_reward);
    }

    #[test]
    fn unreachable_absorption_is_reported() {
        let always_recovers = GeParams::new(0.3, 1.0).unwrap();
        let chain = fixed_action_chain(Action::SecondOnly, &lte(), &always_recovers, &costs(0.0), 2).unwrap();
        assert_eq!(analyze(&chain), Err(Error::NonAbsorbing));
        let frozen_good = GeParams::new(0.0, 0.5).unwrap();
        let chain = fixed_action_chain(Action::Both, &frozen_good, &frozen_good, &costs(0.0), 4).unwrap();
        assert_eq!(analyze(&chain), Err(Error::NonAbsorbing));
    }

    #[test]
    fn duplication_outlives_single_paths() {
        let pairs = [(0.1, 0.4, 0.2, 0.5), (0.02, 0.9, 0.3, 0.3), (0.5, 0.5, 0.05, 0.2)];
        for (p1, r1, p2, r2) in pairs {
            let (g1, g2) = (GeParams::new(p1, r1).unwrap(), GeParams::new(p2, r2).unwrap());
            let life =
                |a| analyze(&fixed_action_chain(a, &g1, &g2, &costs(0.0), 3).unwrap()).unwrap().expected_lifetime;
            let both = life(Action::Both);
            assert!(both >= life(Action::FirstOnly));
            assert!(both >= life(Action::SecondOnly));
        }
    }

    #[test]
    fn full_policy_chain_matches_fixed_chain_for_constant_policy() {
        let process = build_full_mdp(&lte(), &wifi(), &costs(0.3), 4, 0.99).unwrap();
        let policy = Policy::constant(&process, Action::FirstOnly);
        let a = analyze(&full_policy_chain(&policy, &lte(), &wifi(), &costs(0.3), 4).unwrap()).unwrap();
        let b = analyze(&fixed_action_chain(Action::FirstOnly, &lte(), &wifi(), &costs(0.3), 4).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hidden_agent_always_on_matches_fixed_chain() {
        // A hidden agent whose solved policy is all-on never loses knowledge.
        let model = PlanningModel {
            params1: lte(),
            params2: wifi(),
            costs: costs(0.0),
            max_misses: 4,
            gamma: 0.999,
            settings: SolverSettings { epsilon: 1e-9, k_max: 50_000 },
        };
        let (spec, _) = AgentSpec::solve(AgentKind::Hmdp, &model).unwrap();
        let AgentSpec::Epistemic { lookup, .. } = spec else { panic!() };
        let loop_chain = closed_loop_chain(&lookup, &lte(), &wifi(), &costs(0.0)).unwrap();
        let looped = analyze(&loop_chain).unwrap();
        if looped.utilization == [1.0, 1.0] {
            let fixed = analyze(&fixed_action_chain(Action::Both, &lte(), &wifi(), &costs(0.0), 4).unwrap()).unwrap();
            assert!((looped.expected_lifetime / fixed.expected_lifetime - 1.0).abs() < 1e-9);
        } else {
            assert!(looped.utilization[0] < 1.0);
        }
    }

    #[test]
    fn full_policy_chain_agrees_with_policy_evaluation_at_n1() {
        // With gamma close to 1 and a short episode, discounted and
        // undiscounted totals nearly coincide.
        let (g1, g2) = (GeParams::new(0.3, 0.4).unwrap(), GeParams::new(0.2, 0.6).unwrap());
        let process = build_full_mdp(&g1, &g2, &costs(0.5), 1, 1.0 - 1e-12).unwrap();
        let sol = value_iteration(&process, SolverSettings { epsilon: 1e-13, k_max: 100_000 });
        let policy = greedy_policy(&sol.table);
        let a = analyze(&full_policy_chain(&policy, &g1, &g2, &costs(0.5), 1).unwrap()).unwrap();
        let init = initial_distribution(&g1, &g2).unwrap();
        let v: f64 = init.iter().map(|(s, w)| w * sol.table.value(process.index_of(s).unwrap())).sum();
        assert!((a.expected_total_reward - v).abs() < 1e-6, "{} vs {v}", a.expected_total_reward);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn occupancy_sums_to_one(
                p1 in 0.01..0.9f64, r1 in 0.01..0.99f64, p2 in 0.01..0.9f64, r2 in 0.01..0.99f64,
                a in 0usize..3, n in 1usize..5,
            ) {
                let (g1, g2) = (GeParams::new(p1, r1).unwrap(), GeParams::new(p2, r2).unwrap());
                let chain = fixed_action_chain(Action::ALL[a], &g1, &g2, &costs(0.2), n).unwrap();
                let result = analyze(&chain).unwrap();
                prop_assert!((result.occupancy.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(result.expected_lifetime > 0.0);
                // Visit counts reach ~1e11 here, so the bound scales with them.
                prop_assert!(result.residual <= 1e-15 * result.expected_lifetime.max(1.0));
            }
        }
    }
}
