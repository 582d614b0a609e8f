//! Seeded Monte-Carlo episodes.
//!
//! Randomness layout, fixed so runs are reproducible anywhere:
//! - episode `i` of a batch with base seed `b` uses [`episode_seed`]`(b, i)`;
//! - that seed initializes `ChaCha8Rng::seed_from_u64`;
//! - uniforms are `rng.random::<f64>()` (53 random mantissa bits);
//! - two uniforms set the initial state (`Good` iff `u < pi_G`), then every
//!   slot consumes exactly two uniforms, interface 1 first, whatever the
//!   action. Channel trajectories therefore depend on the seed alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{AgentSpec, Observation};
use crate::error::Result;
use crate::ge::{GeParams, InterfaceState};
use crate::model::{next_counter, transmission_outcome, Action, CostModel, Outcome, SystemState};

/// True environment. May differ from the parameters the agent planned with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub params1: GeParams,
    pub params2: GeParams,
    pub max_misses: usize,
    pub costs: CostModel,
}

/// The splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(base + (index + 1) * 0x9E3779B97F4A7C15)`, wrapping.
pub fn episode_seed(base: u64, index: u64) -> u64 {
    splitmix64(base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Slots played before absorption.
    pub lifetime: u64,
    pub total_reward: f64,
    /// Slots spent at each counter value `0..N`.
    pub n_counts: Vec<u64>,
    /// Slots each interface transmitted.
    pub on_counts: [u64; 2],
    pub seed: u64,
}

struct Channels {
    rng: ChaCha8Rng,
    params: [GeParams; 2],
}

impl Channels {
    fn new(seed: u64, params1: GeParams, params2: GeParams) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), params: [params1, params2] }
    }

    fn initial(&mut self) -> Result<(InterfaceState, InterfaceState)> {
        let (g1, _) = self.params[0].steady_state()?;
        let (g2, _) = self.params[1].steady_state()?;
        let pick = |u: f64, g: f64| if u < g { InterfaceState::Good } else { InterfaceState::Bad };
        let u1: f64 = self.rng.random();
        let u2: f64 = self.rng.random();
        Ok((pick(u1, g1), pick(u2, g2)))
    }

    #[inline]
    fn step(&mut self, (s1, s2): (InterfaceState, InterfaceState)) -> (InterfaceState, InterfaceState) {
        let u1: f64 = self.rng.random();
        let u2: f64 = self.rng.random();
        (self.params[0].step(s1, u1), self.params[1].step(s2, u2))
    }
}

/// Plays one episode to absorption. Deterministic in `(env, agent, seed)`.
pub fn run_episode(env: &EnvConfig, agent: &AgentSpec, seed: u64) -> Result<EpisodeResult> {
    run_episode_with(env, agent, seed, agent.requires_side_channel(), |_, _| {})
}

/// [`run_episode`] with an explicit side-channel switch and a hook that sees
/// every observation together with the action chosen from it.
pub fn run_episode_with(
    env: &EnvConfig,
    agent: &AgentSpec,
    seed: u64,
    side_channel: bool,
    mut on_decision: impl FnMut(&Observation, Action),
) -> Result<EpisodeResult> {
    let max_misses = env.max_misses;
    let mut costs = [0.0; 3];
    for a in Action::ALL {
        costs[a.index()] = env.costs.action_cost(a)?;
    }
    let (success, miss) = (env.costs.success_reward, env.costs.miss_reward);

    let mut channels = Channels::new(seed, env.params1, env.params2);
    let mut s = channels.initial()?;
    let mut n = usize::from(s.0 == InterfaceState::Bad && s.1 == InterfaceState::Bad);
    let mut result = EpisodeResult {
        lifetime: 0,
        total_reward: 0.0,
        n_counts: vec![0; max_misses],
        on_counts: [0; 2],
        seed,
    };
    if n >= max_misses {
        return Ok(result);
    }
    let mut observation = Observation::full(&SystemState::new(s.0, s.1, n));
    let mut runner = agent.spawn();
    loop {
        let action = runner.decide(&observation)?;
        on_decision(&observation, action);
        s = channels.step(s);
        let outcome = transmission_outcome(s, action);
        let next = next_counter(n, outcome, max_misses)?;
        result.lifetime += 1;
        result.n_counts[n] += 1;
        result.on_counts[0] += u64::from(action.first());
        result.on_counts[1] += u64::from(action.second());
        let base = if outcome == Outcome::Success { success } else { miss };
        result.total_reward += base - costs[action.index()];
        n = next;
        if n == max_misses {
            return Ok(result);
        }
        observation = Observation::masked(&SystemState::new(s.0, s.1, n), action, side_channel);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub episodes: usize,
    pub mean_lifetime: f64,
    pub se_lifetime: f64,
    pub mean_reward: f64,
    pub se_reward: f64,
    /// Pooled fraction of slots at each `n` in `0..N`.
    pub occupancy: Vec<f64>,
    /// Pooled fraction of slots each interface transmitted.
    pub utilization: [f64; 2],
}

/// Sample mean and standard error (`sd / sqrt(n)`, zero for one sample).
pub fn mean_and_se(values: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let count = values.len();
    if count == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / count as f64;
    if count == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (count - 1) as f64).sqrt() / (count as f64).sqrt())
}

/// Aggregates episodes in the given order.
pub fn summarize(results: &[EpisodeResult]) -> BatchSummary {
    let (mean_lifetime, se_lifetime) = mean_and_se(results.iter().map(|r| r.lifetime as f64));
    let (mean_reward, se_reward) = mean_and_se(results.iter().map(|r| r.total_reward));
    let width = results.first().map_or(0, |r| r.n_counts.len());
    let mut counts = vec![0u64; width];
    let mut on = [0u64; 2];
    let mut slots = 0u64;
    for r in results {
        for (total, c) in counts.iter_mut().zip(&r.n_counts) {
            *total += c;
        }
        on[0] += r.on_counts[0];
        on[1] += r.on_counts[1];
        slots += r.lifetime;
    }
    let frac = |c: u64| if slots == 0 { 0.0 } else { c as f64 / slots as f64 };
    BatchSummary {
        episodes: results.len(),
        mean_lifetime,
        se_lifetime,
        mean_reward,
        se_reward,
        occupancy: counts.into_iter().map(frac).collect(),
        utilization: on.map(frac),
    }
}

/// Runs episodes `0..episodes` in parallel; results come back in episode order.
pub fn run_episodes(env: &EnvConfig, agent: &AgentSpec, episodes: usize, base_seed: u64) -> Result<Vec<EpisodeResult>> {
    (0..episodes as u64)
        .into_par_iter()
        .map(|i| run_episode(env, agent, episode_seed(base_seed, i)))
        .collect()
}

pub fn run_batch(env: &EnvConfig, agent: &AgentSpec, episodes: usize, base_seed: u64) -> Result<BatchSummary> {
    Ok(summarize(&run_episodes(env, agent, episodes, base_seed)?))
}

/// Per-episode difference `b - a` under common random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub seed: u64,
    pub lifetime: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub a: BatchSummary,
    pub b: BatchSummary,
    pub mean_lifetime_delta: f64,
    pub se_lifetime_delta: f64,
    pub mean_reward_delta: f64,
    pub se_reward_delta: f64,
    pub deltas: Vec<PairedDelta>,
}

/// Both agents see the same channel stream in every episode.
pub fn run_paired(env: &EnvConfig, a: &AgentSpec, b: &AgentSpec, episodes: usize, base_seed: u64) -> Result<PairedSummary> {
    let pairs: Vec<(EpisodeResult, EpisodeResult)> = (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            let seed = episode_seed(base_seed, i);
            Ok((run_episode(env, a, seed)?, run_episode(env, b, seed)?))
        })
        .collect::<Result<_>>()?;
    let (ra, rb): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let deltas: Vec<PairedDelta> = ra
        .iter()
        .zip(&rb)
        .map(|(x, y)| PairedDelta {
            seed: x.seed,
            lifetime: y.lifetime as f64 - x.lifetime as f64,
            reward: y.total_reward - x.total_reward,
        })
        .collect();
    let (mean_lifetime_delta, se_lifetime_delta) = mean_and_se(deltas.iter().map(|d| d.lifetime));
    let (mean_reward_delta, se_reward_delta) = mean_and_se(deltas.iter().map(|d| d.reward));
    Ok(PairedSummary {
        a: summarize(&ra),
        b: summarize(&rb),
        mean_lifetime_delta,
        se_lifetime_delta,
        mean_reward_delta,
        se_reward_delta,
        deltas,
    })
}
