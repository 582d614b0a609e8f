//! Comparison of a candidate policy against the fully observable reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(k_pi - k_star) / k_star`; positive when the candidate lives longer.
pub fn lifetime_delta(k_pi: f64, k_star: f64) -> Result<f64> {
    if k_star == 0.0 {
        return Err(Error::DivisionByZero("lifetime_delta"));
    }
    Ok((k_pi - k_star) / k_star)
}

/// `|delta_k| + |u_pi - u_star| * c_lte`, with `c_lte` taken at the same
/// cost scale as the compared policies.
pub fn policy_deviation(k_pi: f64, k_star: f64, u_pi: f64, u_star: f64, c_lte: f64) -> Result<f64> {
    Ok(lifetime_delta(k_pi, k_star)?.abs() + (u_pi - u_star).abs() * c_lte)
}

/// `|r_star - r_pi| / r_star`. A non-positive reference makes the ratio
/// meaningless and is rejected.
pub fn reward_loss(r_pi: f64, r_star: f64) -> Result<f64> {
    if r_star == 0.0 {
        return Err(Error::DivisionByZero("reward_loss"));
    }
    if r_star < 0.0 {
        return Err(Error::NonPositiveReference(r_star));
    }
    Ok((r_star - r_pi).abs() / r_star)
}

/// Outcome summary of one policy, from analysis or simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub lifetime: f64,
    pub total_reward: f64,
    /// Fraction of slots the first (expensive) interface transmits.
    pub first_utilization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub delta_lifetime: f64,
    pub policy_deviation: f64,
    pub reward_loss: f64,
    pub utilization_gap: f64,
}

impl ComparisonReport {
    pub fn compare(candidate: &PolicyOutcome, reference: &PolicyOutcome, c_lte: f64) -> Result<Self> {
        Ok(Self {
            delta_lifetime: lifetime_delta(candidate.lifetime, reference.lifetime)?,
            policy_deviation: policy_deviation(
                candidate.lifetime,
                reference.lifetime,
                candidate.first_utilization,
                reference.first_utilization,
                c_lte,
            )?,
            reward_loss: reward_loss(candidate.total_reward, reference.total_reward)?,
            utilization_gap: candidate.first_utilization - reference.first_utilization,
        })
    }
}
