//! Value iteration with synchronous sweeps and greedy policy extraction.

use serde::{Deserialize, Serialize};
use std::hash::Hash;

use crate::error::{Error, Result};
use crate::model::{Action, DecisionProcess};

/// Stopping parameters. Defaults follow the reference setup:
/// `epsilon = 1e-11`, `k_max = 1e5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub epsilon: f64,
    pub k_max: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { epsilon: 1e-11, k_max: 100_000 }
    }
}

/// State-action values and the state values `V(S) = max_A Q(S, A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    q: Vec<[f64; 3]>,
    values: Vec<f64>,
    absorbing: Vec<bool>,
    preference: [Action; 3],
}

impl QTable {
    /// Builds a table directly; absorbing rows are zeroed.
    pub fn from_parts(q: Vec<[f64; 3]>, absorbing: Vec<bool>, preference: [Action; 3]) -> Self {
        let q: Vec<[f64; 3]> = q
            .into_iter()
            .zip(&absorbing)
            .map(|(row, &abs)| if abs { [0.0; 3] } else { row })
            .collect();
        let values = q
            .iter()
            .zip(&absorbing)
            .map(|(row, &abs)| if abs { 0.0 } else { row.iter().copied().fold(f64::NEG_INFINITY, f64::max) })
            .collect();
        Self { q, values, absorbing, preference }
    }

    pub fn q(&self, state: usize, action: Action) -> f64 {
        self.q[state][action.index()]
    }

    pub fn row(&self, state: usize) -> [f64; 3] {
        self.q[state]
    }

    pub fn value(&self, state: usize) -> f64 {
        self.values[state]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        self.absorbing[state]
    }

    pub fn preference(&self) -> [Action; 3] {
        self.preference
    }
}

/// Picks the best of three action scores, resolving exact ties by `preference`.
pub fn argmax_action(scores: [f64; 3], preference: [Action; 3]) -> Action {
    let mut best = preference[0];
    for &candidate in &preference[1..] {
        if scores[candidate.index()] > scores[best.index()] {
            best = candidate;
        }
    }
    best
}

/// Result of a value-iteration run. `converged` is false when `k_max` sweeps
/// ran without meeting the stop rule; the table then holds the last iterate.
#[derive(Debug, Clone)]
pub struct Solution {
    pub table: QTable,
    pub iterations: usize,
    pub converged: bool,
    pub last_delta: f64,
    /// Sup-norm change of each sweep.
    pub deltas: Vec<f64>,
}

impl Solution {
    pub fn into_converged(self) -> Result<QTable> {
        if self.converged {
            Ok(self.table)
        } else {
            Err(Error::NotConverged { iterations: self.iterations, last_delta: self.last_delta })
        }
    }
}

fn backup<S: Clone + Eq + Hash>(process: &DecisionProcess<S>, values: &[f64], state: usize, action: Action) -> f64 {
    let gamma = process.gamma();
    process
        .outcomes(state, action)
        .iter()
        .map(|t| t.prob * (t.reward + gamma * values[t.next]))
        .sum()
}

/// Synchronous value iteration from `V = 0`, stopping once
/// `max_S |V_k(S) - V_{k-1}(S)| <= epsilon` or after `k_max` sweeps.
pub fn value_iteration<S: Clone + Eq + Hash>(process: &DecisionProcess<S>, settings: SolverSettings) -> Solution {
    let len = process.len();
    let mut values = vec![0.0; len];
    let mut next = vec![0.0; len];
    let mut deltas = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_delta = f64::INFINITY;
    let live: Vec<usize> = process.non_absorbing().collect();

    while iterations < settings.k_max {
        for &i in &live {
            next[i] = Action::ALL
                .iter()
                .map(|&a| backup(process, &values, i, a))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let delta = live.iter().map(|&i| (next[i] - values[i]).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        iterations += 1;
        deltas.push(delta);
        last_delta = delta;
        if delta <= settings.epsilon {
            converged = true;
            break;
        }
    }

    let q = (0..len)
        .map(|i| {
            if process.is_absorbing(i) {
                [0.0; 3]
            } else {
                Action::ALL.map(|a| backup(process, &values, i, a))
            }
        })
        .collect();
    let absorbing = (0..len).map(|i| process.is_absorbing(i)).collect();
    Solution {
        table: QTable::from_parts(q, absorbing, process.preference()),
        iterations,
        converged,
        last_delta,
        deltas,
    }
}

/// Deterministic stationary policy; `None` on absorbing states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    actions: Vec<Option<Action>>,
}

impl Policy {
    pub fn new(actions: Vec<Option<Action>>) -> Self {
        Self { actions }
    }

    /// The same action in every non-absorbing state.
    pub fn constant<S: Clone + Eq + Hash>(process: &DecisionProcess<S>, action: Action) -> Self {
        Self {
            actions: (0..process.len())
                .map(|i| (!process.is_absorbing(i)).then_some(action))
                .collect(),
        }
    }

    pub fn action(&self, state: usize) -> Option<Action> {
        self.actions[state]
    }

    pub fn actions(&self) -> &[Option<Action>] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Whether every defined entry equals `action`.
    pub fn is_constant(&self, action: Action) -> bool {
        self.actions.iter().flatten().all(|&a| a == action)
    }
}

/// `argmax_A Q(S, A)` per non-absorbing state, ties to the cheapest action.
pub fn greedy_policy(table: &QTable) -> Policy {
    Policy {
        actions: (0..table.len())
            .map(|i| (!table.is_absorbing(i)).then(|| argmax_action(table.row(i), table.preference())))
            .collect(),
    }
}

/// Iterative evaluation of a frozen policy: value iteration restricted to
/// the policy's action in each state.
pub fn evaluate_policy<S: Clone + Eq + Hash>(
    process: &DecisionProcess<S>,
    policy: &Policy,
    settings: SolverSettings,
) -> Result<(Vec<f64>, usize, bool)> {
    if policy.len() != process.len() {
        return Err(Error::InvalidParameter("policy and process sizes differ".into()));
    }
    let mut values = vec![0.0; process.len()];
    let mut next = vec![0.0; process.len()];
    let live: Vec<(usize, Action)> = process
        .non_absorbing()
        .map(|i| {
            policy
                .action(i)
                .map(|a| (i, a))
                .ok_or_else(|| Error::InvalidParameter(format!("policy undefined in state {i}")))
        })
        .collect::<Result<_>>()?;
    for k in 1..=settings.k_max {
        for &(i, a) in &live {
            next[i] = backup(process, &values, i, a);
        }
        let delta = live.iter().map(|&(i, _)| (next[i] - values[i]).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        if delta <= settings.epsilon {
            return Ok((values, k, true));
        }
    }
    Ok((values, settings.k_max, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ge::GeParams;
    use crate::model::{build_full_mdp, CostModel, Transition};

    fn tiny(rows: Vec<[Vec<Transition>; 3]>, absorbing: Vec<bool>) -> DecisionProcess<usize> {
        let states = (0..rows.len()).collect();
        DecisionProcess::new(states, absorbing, rows, [0.0; 3], 0.9, 1).unwrap()
    }

    #[test]
    fn all_absorbing_is_zero_after_one_sweep() {
        let p = tiny(vec![Default::default(), Default::default()], vec![true, true]);
        let sol = value_iteration(&p, SolverSettings::default());
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.table.values(), &[0.0, 0.0]);
    }

    #[test]
    fn one_step_episode() {
        let step = vec![Transition { next: 1, prob: 1.0, reward: 1.0 }];
        let p = tiny(vec![[step.clone(), step.clone(), step], Default::default()], vec![false, true]);
        let sol = value_iteration(&p, SolverSettings::default());
        assert!(sol.converged);
        assert_eq!(sol.table.value(0), 1.0);
        assert_eq!(sol.table.value(1), 0.0);
    }

    #[test]
    fn tie_breaks_to_cheapest() {
        let pref = [Action::SecondOnly, Action::FirstOnly, Action::Both];
        let table = QTable::from_parts(vec![[2.0, 2.0, 1.0]], vec![false], pref);
        assert_eq!(greedy_policy(&table).action(0), Some(Action::SecondOnly));
        let table = QTable::from_parts(vec![[1.0, 1.0, 1.0]], vec![false], pref);
        assert_eq!(greedy_policy(&table).action(0), Some(Action::SecondOnly));
        let table = QTable::from_parts(vec![[1.0, 3.0, 3.0]], vec![false], pref);
        assert_eq!(greedy_policy(&table).action(0), Some(Action::FirstOnly));
    }

    #[test]
    fn not_converged_carries_last_iterate() {
        let p1 = GeParams::new(0.0178, 0.2577).unwrap();
        let p2 = GeParams::new(0.0515, 0.9468).unwrap();
        let cm = CostModel::new(0.0, 200.0, 15.85).unwrap();
        let mdp = build_full_mdp(&p1, &p2, &cm, 4, 0.99999).unwrap();
        let sol = value_iteration(&mdp, SolverSettings { epsilon: 1e-11, k_max: 10 });
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 10);
        assert!(sol.table.value(0) > 0.0);
        assert!(matches!(sol.into_converged(), Err(Error::NotConverged { iterations: 10, .. })));
    }

    #[test]
    fn values_are_max_of_q() {
        let p1 = GeParams::new(0.2, 0.5).unwrap();
        let p2 = GeParams::new(0.3, 0.6).unwrap();
        let cm = CostModel::new(0.3, 200.0, 15.85).unwrap();
        let mdp = build_full_mdp(&p1, &p2, &cm, 3, 0.95).unwrap();
        let sol = value_iteration(&mdp, SolverSettings::default());
        assert!(sol.converged);
        for i in 0..mdp.len() {
            if mdp.is_absorbing(i) {
                assert_eq!(sol.table.value(i), 0.0);
            } else {
                let best = sol.table.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(sol.table.value(i), best);
            }
        }
    }

    #[test]
    fn deltas_do_not_increase() {
        let p1 = GeParams::new(0.2, 0.5).unwrap();
        let p2 = GeParams::new(0.3, 0.6).unwrap();
        let cm = CostModel::new(0.5, 200.0, 15.85).unwrap();
        let mdp = build_full_mdp(&p1, &p2, &cm, 4, 0.97).unwrap();
        let sol = value_iteration(&mdp, SolverSettings::default());
        for w in sol.deltas.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} then {}", w[0], w[1]);
        }
    }
}
