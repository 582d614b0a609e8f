//! Experiment configuration. Defaults reproduce the reference LTE/Wi-Fi
//! setup; every field may be overridden from a flat key/value file.

use serde::{Deserialize, Serialize};

use crate::belief::{AgentKind, PlanningModel};
use crate::error::{Error, Result};
use crate::ge::GeParams;
use crate::model::{Action, CostModel};
use crate::sim::EnvConfig;
use crate::solver::SolverSettings;

/// A single cost scale or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    One(f64),
    Many(Vec<f64>),
}

impl EtaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            EtaSpec::One(v) => vec![*v],
            EtaSpec::Many(v) => v.clone(),
        }
    }

    /// Parses `0.07` or `0,0.03,0.07` (brackets optional).
    pub fn parse_list(text: &str) -> Result<Self> {
        let trimmed = text.trim().trim_start_matches('[').trim_end_matches(']');
        let values = trimmed
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::InvalidParameter(format!("invalid eta '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(match values.as_slice() {
            [one] => EtaSpec::One(*one),
            _ => EtaSpec::Many(values),
        })
    }
}

/// Cost scales of the reference sweep.
pub const ETA_SWEEP: [f64; 5] = [0.0, 0.03, 0.07, 0.2, 1.0];

/// Cost scale standing in for "transmission energy dominates".
pub const ETA_HIGH: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub p1: f64,
    pub r1: f64,
    pub p2: f64,
    pub r2: f64,
    #[serde(rename = "E1")]
    pub e1: f64,
    #[serde(rename = "E2")]
    pub e2: f64,
    pub eta: EtaSpec,
    #[serde(rename = "N")]
    pub n: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub k_max: usize,
    pub episodes: usize,
    pub base_seed: u64,
    /// Deadline in ms; used by trace fitting only.
    pub theta: f64,
    pub agents: Vec<String>,
    /// Relative errors applied to the agents' channel model.
    pub deltas: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            p1: 0.0178,
            r1: 0.2577,
            p2: 0.0515,
            r2: 0.9468,
            e1: 200.0,
            e2: 15.85,
            eta: EtaSpec::Many(ETA_SWEEP.to_vec()),
            n: 4,
            gamma: 0.99999,
            epsilon: 1e-11,
            k_max: 100_000,
            episodes: 20_000,
            base_seed: 1,
            theta: 38.25,
            agents: vec!["fullmdp".into(), "qmdp".into(), "fpomdp".into(), "hmdp".into()],
            deltas: vec![0.0, 0.01, 0.02],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.params()?;
        CostModel::new(0.0, self.e1, self.e2)?;
        for eta in self.eta.values() {
            if !(eta.is_finite() && eta >= 0.0) {
                return Err(Error::InvalidParameter(format!("eta must be a non-negative number, got {eta}")));
            }
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameter(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.epsilon > 0.0) || self.k_max == 0 {
            return Err(Error::InvalidParameter("epsilon and k_max must be positive".into()));
        }
        if self.episodes == 0 {
            return Err(Error::InvalidParameter("episodes must be at least 1".into()));
        }
        if !(self.theta > 0.0) {
            return Err(Error::InvalidParameter(format!("theta must be positive, got {}", self.theta)));
        }
        self.agent_kinds()?;
        for &d in &self.deltas {
            if !(d > -1.0) {
                return Err(Error::InvalidParameter(format!("relative error {d} must exceed -1")));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Result<(GeParams, GeParams)> {
        Ok((GeParams::new(self.p1, self.r1)?, GeParams::new(self.p2, self.r2)?))
    }

    pub fn costs(&self, eta: f64) -> Result<CostModel> {
        CostModel::new(eta, self.e1, self.e2)
    }

    pub fn settings(&self) -> SolverSettings {
        SolverSettings { epsilon: self.epsilon, k_max: self.k_max }
    }

    pub fn env(&self, eta: f64) -> Result<EnvConfig> {
        let (params1, params2) = self.params()?;
        Ok(EnvConfig { params1, params2, max_misses: self.n, costs: self.costs(eta)? })
    }

    /// Planning model at `eta`, with both channel estimates scaled by `1 + delta`.
    pub fn planning(&self, eta: f64, delta: f64) -> Result<PlanningModel> {
        let (params1, params2) = self.params()?;
        Ok(PlanningModel {
            params1: params1.scaled(delta)?,
            params2: params2.scaled(delta)?,
            costs: self.costs(eta)?,
            max_misses: self.n,
            gamma: self.gamma,
            settings: self.settings(),
        })
    }

    pub fn agent_kinds(&self) -> Result<Vec<AgentKind>> {
        self.agents.iter().map(|a| a.parse()).collect()
    }
}

/// The two constant policies bracketing every solved policy.
pub const EXTREME_ACTIONS: [Action; 2] = [Action::Both, Action::SecondOnly];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.settings(), SolverSettings::default());
        assert_eq!(c.agent_kinds().unwrap().len(), 4);
    }

    #[test]
    fn eta_lists() {
        assert_eq!(EtaSpec::parse_list("0.07").unwrap(), EtaSpec::One(0.07));
        assert_eq!(EtaSpec::parse_list("[0, 0.2]").unwrap().values(), vec![0.0, 0.2]);
        assert!(EtaSpec::parse_list("cheap").is_err());
    }

    #[test]
    fn validation_failures() {
        let bad = ExperimentConfig { p1: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { eta: EtaSpec::Many(vec![0.0, -1.0]), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { agents: vec!["oracle".into()], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { deltas: vec![-1.0], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn planning_applies_relative_error() {
        let c = ExperimentConfig::default();
        let m = c.planning(0.07, 0.02).unwrap();
        assert!((m.params1.p() - 0.018156).abs() < 1e-12);
        assert!((m.params1.r() - 0.262854).abs() < 1e-12);
        assert_eq!(c.planning(0.07, 0.0).unwrap().params1, c.params().unwrap().0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]
            #[test]
            fn scaling_preserves_steady_state(p in 1e-4..0.5f64, r in 1e-4..0.5f64, delta in -0.9..0.9f64) {
                let g = GeParams::new(p, r).unwrap();
                let s = g.scaled(delta).unwrap();
                prop_assert!((s.p() / (s.p() + s.r()) - p / (p + r)).abs() <= 1e-12);
            }
        }
    }
}
