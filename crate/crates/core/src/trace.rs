//! Latency traces: parsing, deadline thresholding, parameter fitting and
//! latency-reliability figures.
//!
//! Trace files are CSV with header `seq,latency_ms`. `latency_ms` is a
//! non-negative decimal or `lost` (any case); `seq` must increase by one
//! from row to row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Read;

use crate::error::{Error, Result};
use crate::ge::{GeParams, InterfaceState};

/// One sample; `None` marks a lost packet (infinite latency).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySample(pub Option<f64>);

impl LatencySample {
    pub fn within(self, theta: f64) -> bool {
        matches!(self.0, Some(l) if l <= theta)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyTrace {
    pub samples: Vec<LatencySample>,
}

impl LatencyTrace {
    pub fn new(samples: Vec<LatencySample>) -> Self {
        Self { samples }
    }

    pub fn from_latencies(values: &[f64]) -> Self {
        Self { samples: values.iter().map(|&v| LatencySample(Some(v))).collect() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Parses the CSV format. Errors carry 1-based file line numbers.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = csv.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(Error::Parse { line: 1, message: "empty file".into() });
        }
        if header.len() != 2 || &header[0] != "seq" || &header[1] != "latency_ms" {
            return Err(Error::Parse { line: 1, message: "expected header `seq,latency_ms`".into() });
        }
        let mut samples = Vec::new();
        let mut previous: Option<u64> = None;
        for record in csv.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let bad = |message: String| Error::Parse { line, message };
            let seq: u64 = record[0].parse().map_err(|_| bad(format!("invalid seq '{}'", &record[0])))?;
            if let Some(prev) = previous {
                if seq != prev + 1 {
                    return Err(bad(format!("seq {seq} does not follow {prev}")));
                }
            }
            previous = Some(seq);
            let field = &record[1];
            let sample = if field.eq_ignore_ascii_case("lost") {
                LatencySample(None)
            } else {
                let v: f64 = field.parse().map_err(|_| bad(format!("invalid latency '{field}'")))?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(bad(format!("latency must be a non-negative number, got '{field}'")));
                }
                LatencySample(Some(v))
            };
            samples.push(sample);
        }
        if samples.is_empty() {
            return Err(Error::Parse { line: 2, message: "no samples".into() });
        }
        Ok(Self { samples })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seq,latency_ms\n");
        for (i, s) in self.samples.iter().enumerate() {
            match s.0 {
                Some(v) => out.push_str(&format!("{i},{v}\n")),
                None => out.push_str(&format!("{i},lost\n")),
            }
        }
        out
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("deadline must be positive, got {theta}")))
    }
}

/// `Good` iff the sample arrived within `theta`; lost samples are `Bad`.
pub fn binarize(trace: &LatencyTrace, theta: f64) -> Result<Vec<InterfaceState>> {
    check_theta(theta)?;
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(trace
        .samples
        .iter()
        .map(|s| if s.within(theta) { InterfaceState::Good } else { InterfaceState::Bad })
        .collect())
}

/// Transition-count estimate of `(p, r)`. A rate with no source
/// observations is `None` and explained in `diagnostics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub p_hat: Option<f64>,
    pub r_hat: Option<f64>,
    /// `counts[from][to]`, Good = 0, Bad = 1.
    pub counts: [[u64; 2]; 2],
    /// Samples in each state, the last one included.
    pub dwell: [u64; 2],
    pub diagnostics: Vec<String>,
}

impl FitResult {
    /// Both rates as parameters, when defined.
    pub fn params(&self) -> Option<GeParams> {
        GeParams::new(self.p_hat?, self.r_hat?).ok()
    }
}

pub fn fit_ge(states: &[InterfaceState]) -> Result<FitResult> {
    if states.len() < 2 {
        return Err(Error::TraceTooShort(states.len()));
    }
    let mut counts = [[0u64; 2]; 2];
    for pair in states.windows(2) {
        counts[pair[0].index()][pair[1].index()] += 1;
    }
    let mut dwell = [0u64; 2];
    for s in states {
        dwell[s.index()] += 1;
    }
    let mut diagnostics = Vec::new();
    let rate = |from: usize, to: usize, name: &str, state: &str, diagnostics: &mut Vec<String>| {
        let total = counts[from][0] + counts[from][1];
        if total == 0 {
            diagnostics.push(format!("{name} undefined: no transition leaves {state}"));
            None
        } else {
            Some(counts[from][to] as f64 / total as f64)
        }
    };
    let p_hat = rate(0, 1, "p", "Good", &mut diagnostics);
    let r_hat = rate(1, 0, "r", "Bad", &mut diagnostics);
    Ok(FitResult { p_hat, r_hat, counts, dwell, diagnostics })
}

/// Empirical `Pr(latency <= theta)`; lost samples count as failures.
pub fn latency_reliability(trace: &LatencyTrace, theta: f64) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if theta.is_nan() {
        return Err(Error::InvalidParameter("deadline is NaN".into()));
    }
    let hits = trace.samples.iter().filter(|s| s.within(theta)).count();
    Ok(hits as f64 / trace.len() as f64)
}

/// End-to-end error with independent copies on every path:
/// `prod_i (1 - F_i)`.
pub fn e2e_error(reliabilities: &[f64]) -> Result<f64> {
    let mut product = 1.0;
    for &f in reliabilities {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::InvalidParameter(format!("reliability {f} is not a probability")));
        }
        product *= 1.0 - f;
    }
    Ok(product)
}

/// Synthetic Good/Bad sequence from `params`, started at the steady state.
pub fn synthesize_states(params: &GeParams, len: usize, seed: u64) -> Result<Vec<InterfaceState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (good, _) = params.steady_state()?;
    let mut state = if rng.random::<f64>() < good { InterfaceState::Good } else { InterfaceState::Bad };
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(state);
        state = params.step(state, rng.random());
    }
    Ok(out)
}

/// Synthetic latency trace: Good slots get a latency uniformly in
/// `[0.2, 0.9] * theta`; Bad slots are late (`[1.1, 3] * theta`) or, with
/// probability `loss`, lost.
pub fn synthesize_trace(params: &GeParams, len: usize, theta: f64, loss: f64, seed: u64) -> Result<LatencyTrace> {
    check_theta(theta)?;
    if !(0.0..=1.0).contains(&loss) {
        return Err(Error::InvalidParameter(format!("loss fraction {loss} is not a probability")));
    }
    let states = synthesize_states(params, len, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_1A7E_0000_0001);
    let round = |v: f64| (v * 1000.0).round() / 1000.0;
    let samples = states
        .into_iter()
        .map(|s| match s {
            InterfaceState::Good => LatencySample(Some(round(theta * rng.random_range(0.2..0.9)))),
            InterfaceState::Bad if rng.random::<f64>() < loss => LatencySample(None),
            InterfaceState::Bad => LatencySample(Some(round(theta * rng.random_range(1.1..3.0)))),
        })
        .collect();
    Ok(LatencyTrace::new(samples))
}
