//! Subcommand implementations. Each returns an [`Output`]; nothing here
//! touches stdout or the filesystem except to read inputs.

use std::fmt::Display;
use std::fs;
use std::hash::Hash;
use std::path::Path;

use ifdiv::analytic::{analyze, closed_loop_chain, fixed_action_chain, full_policy_chain, AbsorbingChain, ChainAnalysis};
use ifdiv::belief::{AgentKind, AgentSpec, PlanningModel, SolveInfo};
use ifdiv::config::{EtaSpec, ExperimentConfig};
use ifdiv::metrics::{lifetime_delta, policy_deviation, reward_loss};
use ifdiv::model::{build_epistemic, build_full_mdp, Forgetting};
use ifdiv::sim::{run_episodes, run_paired, summarize, BatchSummary, EnvConfig, EpisodeResult};
use ifdiv::solver::{greedy_policy, value_iteration, Policy, Solution};
use ifdiv::trace::{binarize, e2e_error, fit_ge, latency_reliability, synthesize_trace, LatencyTrace};
use ifdiv::{Action, DecisionProcess, Error, GeParams};
use serde_json::{json, Value};

use crate::args::{Cli, Command, Common, Interfaces, ModelKind, Profile, DESK_EPISODES};
use crate::error::{CliError, CliResult};
use crate::format::{cell, label, num, nums, opt_cell, opt_num};

/// Resolved configuration of one invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub strict: bool,
    pub profile: Profile,
}

impl Context {
    pub fn from_common(common: &Common) -> CliResult<Self> {
        let mut cfg = match &common.config {
            Some(path) => load_config(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg.base_seed = seed;
        }
        if let Some(episodes) = common.episodes {
            cfg.episodes = episodes;
        }
        if let Some(eta) = &common.eta {
            cfg.eta = EtaSpec::parse_list(eta)?;
        }
        let profile = common.profile.unwrap_or_default();
        if profile == Profile::Desk {
            cfg.episodes = cfg.episodes.min(DESK_EPISODES);
        }
        cfg.validate()?;
        Ok(Self { cfg, strict: common.strict, profile })
    }

    fn env(&self, eta: f64) -> CliResult<EnvConfig> {
        Ok(self.cfg.env(eta)?)
    }

    fn planning(&self, eta: f64) -> CliResult<PlanningModel> {
        Ok(self.cfg.planning(eta, 0.0)?)
    }
}

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

/// Main document plus side files, keyed by file name.
#[derive(Debug, Clone, Default)]
pub struct Output {
    pub name: String,
    pub doc: Value,
    pub files: Vec<(String, String)>,
    /// Printed instead of `doc` when no output directory is given.
    pub stdout: Option<String>,
    pub warnings: Vec<String>,
    pub not_converged: bool,
    pub failed: bool,
}

impl Output {
    fn new(name: &str) -> Self {
        Self { name: name.into(), ..Default::default() }
    }

    fn record_solve(&mut self, what: &str, eta: f64, info: Option<SolveInfo>) {
        if let Some(info) = info {
            if !info.converged {
                self.not_converged = true;
                self.warnings.push(format!(
                    "{what} at eta={eta}: value iteration stopped at k_max={} with last delta {:e}; using the last iterate",
                    info.iterations, info.last_delta
                ));
            }
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<Output> {
    let ctx = Context::from_common(&cli.common)?;
    execute_with(&ctx, &cli.common, &cli.command)
}

pub fn execute_with(ctx: &Context, common: &Common, command: &Command) -> CliResult<Output> {
    match command {
        Command::Solve { model } => cmd_solve(ctx, *model),
        Command::Analytic { agent } => cmd_analytic(ctx, &parse_agent(agent)?),
        Command::Simulate { agent } => cmd_simulate(ctx, &parse_agent(agent)?),
        Command::Paired { baseline, agent } => cmd_paired(ctx, &parse_agent(baseline)?, &parse_agent(agent)?),
        Command::SweepEta { no_simulate } => cmd_sweep_eta(ctx, !no_simulate),
        Command::Sensitivity { delta, agent, interfaces } => {
            let deltas = delta.clone().unwrap_or_else(|| ctx.cfg.deltas.clone());
            let kinds = match agent {
                Some(list) => list.iter().map(|a| parse_agent(a)).collect::<CliResult<Vec<_>>>()?,
                None => ctx.cfg.agent_kinds()?,
            };
            cmd_sensitivity(ctx, &deltas, &kinds, *interfaces)
        }
        Command::Fit { traces, theta, synthetic, loss } => {
            cmd_fit(ctx, traces, theta.unwrap_or(ctx.cfg.theta), *synthetic, *loss)
        }
        Command::SynthTrace { interface, len, loss } => cmd_synth_trace(ctx, *interface, *len, *loss),
        Command::Repro { manifest } => crate::repro::cmd_repro(ctx, common, manifest),
    }
}

pub fn parse_agent(text: &str) -> CliResult<AgentKind> {
    Ok(text.parse::<AgentKind>()?)
}

fn solve_json(info: Option<SolveInfo>) -> Value {
    match info {
        Some(i) => json!({ "iterations": i.iterations, "converged": i.converged, "last_delta": num(i.last_delta) }),
        None => Value::Null,
    }
}

// ---------------------------------------------------------------- solve

/// The action every live state maps to, if there is one.
fn constant_action(policy: &Policy) -> Option<Action> {
    let mut live = policy.actions().iter().flatten();
    let first = *live.next()?;
    live.all(|&a| a == first).then_some(first)
}

fn policy_doc<S: Clone + Eq + Hash + Display>(process: &DecisionProcess<S>, sol: &Solution, policy: &Policy) -> Value {
    let states: Vec<Value> = process
        .states()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let live = !process.is_absorbing(i);
            json!({
                "state": s.to_string(),
                "action": policy.action(i).map(|a| a.to_string()),
                "q": if live { nums(&sol.table.row(i)) } else { Value::Null },
                "value": num(sol.table.value(i)),
            })
        })
        .collect();
    json!({
        "iterations": sol.iterations,
        "converged": sol.converged,
        "last_delta": num(sol.last_delta),
        "constant_action": constant_action(policy).map(|a| a.to_string()),
        "states": states,
    })
}

pub fn cmd_solve(ctx: &Context, model: ModelKind) -> CliResult<Output> {
    let mut out = Output::new("solve");
    let mut results = Vec::new();
    let mut maps: Vec<Vec<Option<Action>>> = Vec::new();
    for eta in ctx.cfg.eta.values() {
        let m = ctx.planning(eta)?;
        let (doc, sol, policy) = match model {
            ModelKind::Full => {
                let p = build_full_mdp(&m.params1, &m.params2, &m.costs, m.max_misses, m.gamma)?;
                let sol = value_iteration(&p, m.settings);
                let policy = greedy_policy(&sol.table);
                (policy_doc(&p, &sol, &policy), sol, policy)
            }
            ModelKind::Fpomdp | ModelKind::Hmdp => {
                let regime = if model == ModelKind::Fpomdp { Forgetting::Forgetful } else { Forgetting::Hidden };
                let p = build_epistemic(regime, &m.params1, &m.params2, &m.costs, m.max_misses, m.gamma)?;
                let sol = value_iteration(&p, m.settings);
                let policy = greedy_policy(&sol.table);
                (policy_doc(&p, &sol, &policy), sol, policy)
            }
        };
        out.record_solve("solve", eta, Some(SolveInfo { iterations: sol.iterations, converged: sol.converged, last_delta: sol.last_delta }));
        maps.push(policy.actions().to_vec());
        let mut doc = doc;
        doc["eta"] = num(eta);
        results.push(doc);
    }
    let model_name = match model {
        ModelKind::Full => "full",
        ModelKind::Fpomdp => "fpomdp",
        ModelKind::Hmdp => "hmdp",
    };
    out.doc = json!({
        "model": model_name,
        "q_order": Action::ALL.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
        "identical_policies": maps.windows(2).all(|w| w[0] == w[1]),
        "results": results,
    });
    Ok(out)
}

// ------------------------------------------------------------- analytic

/// Exact chain of a solved agent against the true channels; `None` for
/// agents whose memory is continuous.
pub fn agent_chain(spec: &AgentSpec, env: &EnvConfig) -> ifdiv::Result<Option<AbsorbingChain>> {
    Ok(Some(match spec {
        AgentSpec::Fixed(a) => fixed_action_chain(*a, &env.params1, &env.params2, &env.costs, env.max_misses)?,
        AgentSpec::FullMdp { policy, .. } => full_policy_chain(policy, &env.params1, &env.params2, &env.costs, env.max_misses)?,
        AgentSpec::Epistemic { lookup, .. } => closed_loop_chain(lookup, &env.params1, &env.params2, &env.costs)?,
        AgentSpec::Qmdp { .. } => return Ok(None),
    }))
}

/// `Ok(None)` means the policy never absorbs.
pub fn agent_analysis(spec: &AgentSpec, env: &EnvConfig) -> ifdiv::Result<Option<Option<ChainAnalysis>>> {
    let Some(chain) = agent_chain(spec, env)? else { return Ok(None) };
    match analyze(&chain) {
        Ok(a) => Ok(Some(Some(a))),
        Err(Error::NonAbsorbing) => Ok(Some(None)),
        Err(e) => Err(e),
    }
}

fn analysis_doc(a: Option<&ChainAnalysis>) -> Value {
    match a {
        Some(a) => json!({
            "absorbing": true,
            "lifetime": num(a.expected_lifetime),
            "total_reward": num(a.expected_total_reward),
            "occupancy": nums(&a.occupancy),
            "utilization": { "lte": num(a.utilization[0]), "wifi": num(a.utilization[1]) },
            "residual": num(a.residual),
        }),
        None => json!({ "absorbing": false, "lifetime": "infinite" }),
    }
}

pub fn cmd_analytic(ctx: &Context, kind: &AgentKind) -> CliResult<Output> {
    let mut out = Output::new("analytic");
    if *kind == AgentKind::Qmdp {
        return Err(CliError::validation("qmdp has no finite closed-loop chain; use simulate"));
    }
    let mut results = Vec::new();
    for eta in ctx.cfg.eta.values() {
        let (spec, info) = AgentSpec::solve(*kind, &ctx.planning(eta)?)?;
        out.record_solve(&kind.to_string(), eta, info);
        let analysis = agent_analysis(&spec, &ctx.env(eta)?)?.flatten();
        let mut doc = analysis_doc(analysis.as_ref());
        doc["eta"] = num(eta);
        doc["solve"] = solve_json(info);
        results.push(doc);
    }
    out.doc = json!({ "agent": kind.to_string(), "N": ctx.cfg.n, "results": results });
    Ok(out)
}

// ------------------------------------------------------------- simulate

pub fn summary_doc(s: &BatchSummary) -> Value {
    json!({
        "episodes": s.episodes,
        "mean_lifetime": num(s.mean_lifetime),
        "se_lifetime": num(s.se_lifetime),
        "mean_reward": num(s.mean_reward),
        "se_reward": num(s.se_reward),
        "occupancy": nums(&s.occupancy),
        "utilization": { "lte": num(s.utilization[0]), "wifi": num(s.utilization[1]) },
    })
}

pub fn episodes_csv(results: &[EpisodeResult], max_misses: usize) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["episode".to_string(), "seed".into(), "lifetime".into(), "total_reward".into()];
    header.extend((0..max_misses).map(|n| format!("n{n}")));
    header.extend(["lte_on".into(), "wifi_on".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for (i, r) in results.iter().enumerate() {
        let mut row = vec![i.to_string(), r.seed.to_string(), r.lifetime.to_string(), cell(r.total_reward)];
        row.extend(r.n_counts.iter().map(|c| c.to_string()));
        row.extend(r.on_counts.iter().map(|c| c.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    finish_csv(w)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::new(crate::error::exit::FAILURE, format!("csv: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> CliResult<String> {
    let bytes = w.into_inner().map_err(|e| CliError::new(crate::error::exit::FAILURE, e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::new(crate::error::exit::FAILURE, e.to_string()))
}

/// Refuses to simulate a policy whose analysis shows it never absorbs.
fn ensure_terminates(analysis: &Option<Option<ChainAnalysis>>, kind: &AgentKind, eta: f64) -> CliResult<()> {
    if matches!(analysis, Some(None)) {
        return Err(CliError::validation(format!(
            "{kind} at eta={eta} never reaches N misses; episodes would not terminate"
        )));
    }
    Ok(())
}

pub fn cmd_simulate(ctx: &Context, kind: &AgentKind) -> CliResult<Output> {
    let mut out = Output::new("simulate");
    let mut results = Vec::new();
    for eta in ctx.cfg.eta.values() {
        let env = ctx.env(eta)?;
        let (spec, info) = AgentSpec::solve(*kind, &ctx.planning(eta)?)?;
        out.record_solve(&kind.to_string(), eta, info);
        let analysis = agent_analysis(&spec, &env)?;
        ensure_terminates(&analysis, kind, eta)?;
        let episodes = run_episodes(&env, &spec, ctx.cfg.episodes, ctx.cfg.base_seed)?;
        let summary = summarize(&episodes);
        let exact = analysis.flatten();
        let z = exact.as_ref().and_then(|a| {
            (summary.se_lifetime > 0.0).then(|| (summary.mean_lifetime - a.expected_lifetime) / summary.se_lifetime)
        });
        results.push(json!({
            "eta": num(eta),
            "solve": solve_json(info),
            "summary": summary_doc(&summary),
            "analytic": exact.as_ref().map(|a| analysis_doc(Some(a))),
            "z_lifetime": opt_num(z),
        }));
        out.files.push((
            format!("episodes_{}_eta{}.csv", label(&kind.to_string()), label(&eta.to_string())),
            episodes_csv(&episodes, env.max_misses)?,
        ));
    }
    out.doc = json!({
        "agent": kind.to_string(),
        "base_seed": ctx.cfg.base_seed,
        "episodes": ctx.cfg.episodes,
        "results": results,
    });
    Ok(out)
}

// --------------------------------------------------------------- paired

/// `(R_ref - R) / R_ref` without the absolute value, so a candidate that
/// beats the reference shows up as negative.
pub fn signed_reward_loss(reward: f64, reference: f64) -> Option<f64> {
    (reference > 0.0).then(|| (reference - reward) / reference)
}

pub fn cmd_paired(ctx: &Context, baseline: &AgentKind, agent: &AgentKind) -> CliResult<Output> {
    let mut out = Output::new("paired");
    let mut results = Vec::new();
    for eta in ctx.cfg.eta.values() {
        let env = ctx.env(eta)?;
        let model = ctx.planning(eta)?;
        let (a, info_a) = AgentSpec::solve(*baseline, &model)?;
        let (b, info_b) = AgentSpec::solve(*agent, &model)?;
        out.record_solve(&baseline.to_string(), eta, info_a);
        out.record_solve(&agent.to_string(), eta, info_b);
        ensure_terminates(&agent_analysis(&a, &env)?, baseline, eta)?;
        ensure_terminates(&agent_analysis(&b, &env)?, agent, eta)?;
        let paired = run_paired(&env, &a, &b, ctx.cfg.episodes, ctx.cfg.base_seed)?;
        let c_lte = env.costs.interface_costs()?.0;
        let (ra, rb) = (paired.a.mean_reward, paired.b.mean_reward);
        results.push(json!({
            "eta": num(eta),
            "baseline": summary_doc(&paired.a),
            "agent": summary_doc(&paired.b),
            "mean_lifetime_delta": num(paired.mean_lifetime_delta),
            "se_lifetime_delta": num(paired.se_lifetime_delta),
            "mean_reward_delta": num(paired.mean_reward_delta),
            "se_reward_delta": num(paired.se_reward_delta),
            "reward_loss": opt_num(reward_loss(rb, ra).ok()),
            "signed_reward_loss": opt_num(signed_reward_loss(rb, ra)),
            "se_signed_reward_loss": opt_num((ra > 0.0).then(|| paired.se_reward_delta / ra)),
            "delta_lifetime": opt_num(lifetime_delta(paired.b.mean_lifetime, paired.a.mean_lifetime).ok()),
            "policy_deviation": opt_num(
                policy_deviation(paired.b.mean_lifetime, paired.a.mean_lifetime, paired.b.utilization[0], paired.a.utilization[0], c_lte).ok()
            ),
        }));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["episode", "seed", "delta_lifetime", "delta_reward"]).map_err(csv_err)?;
        for (i, d) in paired.deltas.iter().enumerate() {
            w.write_record([i.to_string(), d.seed.to_string(), cell(d.lifetime), cell(d.reward)]).map_err(csv_err)?;
        }
        out.files.push((format!("paired_eta{}.csv", label(&eta.to_string())), finish_csv(w)?));
    }
    out.doc = json!({
        "baseline": baseline.to_string(),
        "agent": agent.to_string(),
        "base_seed": ctx.cfg.base_seed,
        "episodes": ctx.cfg.episodes,
        "results": results,
    });
    Ok(out)
}

// ------------------------------------------------------------ sweep-eta

struct SweepRow {
    agent: AgentKind,
    info: Option<SolveInfo>,
    exact: Option<Option<ChainAnalysis>>,
    sim: Option<BatchSummary>,
}

pub fn cmd_sweep_eta(ctx: &Context, simulate: bool) -> CliResult<Output> {
    let mut out = Output::new("sweep-eta");
    let mut kinds = ctx.cfg.agent_kinds()?;
    if !kinds.contains(&AgentKind::FullMdp) {
        kinds.insert(0, AgentKind::FullMdp);
    }
    let n = ctx.cfg.n;
    let mut tables = Vec::new();
    for eta in ctx.cfg.eta.values() {
        let env = ctx.env(eta)?;
        let model = ctx.planning(eta)?;
        let c_lte = env.costs.interface_costs()?.0;
        let mut rows = Vec::new();
        for kind in &kinds {
            let (spec, info) = AgentSpec::solve(*kind, &model)?;
            out.record_solve(&kind.to_string(), eta, info);
            let exact = agent_analysis(&spec, &env)?;
            let sim = if simulate {
                ensure_terminates(&exact, kind, eta)?;
                Some(summarize(&run_episodes(&env, &spec, ctx.cfg.episodes, ctx.cfg.base_seed)?))
            } else {
                None
            };
            rows.push(SweepRow { agent: *kind, info, exact, sim });
        }
        let reference = &rows[0];
        let ref_exact = reference.exact.clone().flatten();
        let ref_sim = reference.sim.clone();

        let mut header: Vec<String> = [
            "agent", "converged", "iterations", "analytic_lifetime", "analytic_reward", "analytic_lte_util",
            "mean_lifetime", "se_lifetime", "mean_reward", "se_reward",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((0..n).map(|i| format!("occ_n{i}")));
        header.extend(["lte_util", "wifi_util", "delta_lifetime", "policy_deviation", "reward_loss", "signed_reward_loss"].map(String::from));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).map_err(csv_err)?;
        let mut docs = Vec::new();
        for row in &rows {
            let exact = row.exact.clone().flatten();
            // Simulated outcomes when available, exact ones otherwise.
            let (life, reward, util, ref_life, ref_reward, ref_util) = match (&row.sim, &ref_sim, &exact, &ref_exact) {
                (Some(s), Some(r), _, _) => (Some(s.mean_lifetime), Some(s.mean_reward), Some(s.utilization[0]), r.mean_lifetime, r.mean_reward, r.utilization[0]),
                (None, _, Some(e), Some(r)) => (
                    Some(e.expected_lifetime),
                    Some(e.expected_total_reward),
                    Some(e.utilization[0]),
                    r.expected_lifetime,
                    r.expected_total_reward,
                    r.utilization[0],
                ),
                _ => (None, None, None, f64::NAN, f64::NAN, f64::NAN),
            };
            let dk = life.and_then(|k| lifetime_delta(k, ref_life).ok());
            let dpi = life.zip(util).and_then(|(k, u)| policy_deviation(k, ref_life, u, ref_util, c_lte).ok());
            let loss = reward.and_then(|r| reward_loss(r, ref_reward).ok());
            let signed = reward.and_then(|r| signed_reward_loss(r, ref_reward));

            let mut rec = vec![
                row.agent.to_string(),
                row.info.map_or(String::new(), |i| i.converged.to_string()),
                row.info.map_or(String::new(), |i| i.iterations.to_string()),
                opt_cell(exact.as_ref().map(|e| e.expected_lifetime)),
                opt_cell(exact.as_ref().map(|e| e.expected_total_reward)),
                opt_cell(exact.as_ref().map(|e| e.utilization[0])),
            ];
            if matches!(row.exact, Some(None)) {
                rec[3] = "infinite".into();
            }
            match &row.sim {
                Some(s) => {
                    rec.extend([cell(s.mean_lifetime), cell(s.se_lifetime), cell(s.mean_reward), cell(s.se_reward)]);
                    rec.extend(s.occupancy.iter().map(|&o| cell(o)));
                    rec.extend([cell(s.utilization[0]), cell(s.utilization[1])]);
                }
                None => {
                    rec.extend(std::iter::repeat_n(String::new(), 4));
                    match &exact {
                        Some(e) => {
                            rec.extend(e.occupancy.iter().map(|&o| cell(o)));
                            rec.extend([cell(e.utilization[0]), cell(e.utilization[1])]);
                        }
                        None => rec.extend(std::iter::repeat_n(String::new(), n + 2)),
                    }
                }
            }
            rec.extend([opt_cell(dk), opt_cell(dpi), opt_cell(loss), opt_cell(signed)]);
            w.write_record(&rec).map_err(csv_err)?;
            docs.push(json!({
                "agent": row.agent.to_string(),
                "solve": solve_json(row.info),
                "analytic": row.exact.as_ref().map(|e| analysis_doc(e.as_ref())),
                "simulated": row.sim.as_ref().map(summary_doc),
                "delta_lifetime": opt_num(dk),
                "policy_deviation": opt_num(dpi),
                "reward_loss": opt_num(loss),
                "signed_reward_loss": opt_num(signed),
            }));
        }
        out.files.push((format!("sweep_eta{}.csv", label(&eta.to_string())), finish_csv(w)?));
        tables.push(json!({ "eta": num(eta), "c_lte": num(c_lte), "rows": docs }));
    }
    out.doc = json!({
        "reference": "fullmdp",
        "simulated": simulate,
        "episodes": if simulate { Some(ctx.cfg.episodes) } else { None },
        "base_seed": ctx.cfg.base_seed,
        "tables": tables,
    });
    Ok(out)
}

// ---------------------------------------------------------- sensitivity

fn perturbed(model: &PlanningModel, delta: f64, interfaces: Interfaces) -> CliResult<PlanningModel> {
    let mut m = *model;
    if matches!(interfaces, Interfaces::Both | Interfaces::Lte) {
        m.params1 = m.params1.scaled(delta)?;
    }
    if matches!(interfaces, Interfaces::Both | Interfaces::Wifi) {
        m.params2 = m.params2.scaled(delta)?;
    }
    Ok(m)
}

pub fn cmd_sensitivity(ctx: &Context, deltas: &[f64], kinds: &[AgentKind], interfaces: Interfaces) -> CliResult<Output> {
    let mut out = Output::new("sensitivity");
    for &d in deltas {
        if !(d > -1.0) {
            return Err(CliError::validation(format!("relative error {d} must exceed -1")));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "eta", "delta", "agent", "method", "p1", "r1", "p2", "r2", "lifetime", "reference_lifetime", "total_reward",
        "reference_reward", "lte_util", "reference_lte_util", "delta_lifetime", "policy_deviation", "reward_loss",
    ])
    .map_err(csv_err)?;
    let mut rows = Vec::new();
    for eta in ctx.cfg.eta.values() {
        let env = ctx.env(eta)?;
        let truth = ctx.planning(eta)?;
        let c_lte = env.costs.interface_costs()?.0;
        let (reference, ref_info) = AgentSpec::solve(AgentKind::FullMdp, &truth)?;
        out.record_solve("fullmdp", eta, ref_info);
        let ref_exact = agent_analysis(&reference, &env)?
            .flatten()
            .ok_or_else(|| CliError::validation(format!("reference policy at eta={eta} never absorbs")))?;
        for &delta in deltas {
            let model = perturbed(&truth, delta, interfaces)?;
            for kind in kinds {
                let (spec, info) = AgentSpec::solve(*kind, &model)?;
                out.record_solve(&kind.to_string(), eta, info);
                let exact = agent_analysis(&spec, &env)?;
                // (method, lifetime, reward, util, ref lifetime, ref reward, ref util)
                let measured = match exact {
                    Some(Some(a)) => ("analytic", a.expected_lifetime, a.expected_total_reward, a.utilization[0], ref_exact.expected_lifetime, ref_exact.expected_total_reward, ref_exact.utilization[0]),
                    Some(None) => {
                        return Err(CliError::validation(format!("{kind} with delta={delta} never absorbs at eta={eta}")));
                    }
                    None => {
                        let p = run_paired(&env, &reference, &spec, ctx.cfg.episodes, ctx.cfg.base_seed)?;
                        ("simulated", p.b.mean_lifetime, p.b.mean_reward, p.b.utilization[0], p.a.mean_lifetime, p.a.mean_reward, p.a.utilization[0])
                    }
                };
                let (method, k, r, u, k_ref, r_ref, u_ref) = measured;
                let dk = lifetime_delta(k, k_ref).ok();
                let dpi = policy_deviation(k, k_ref, u, u_ref, c_lte).ok();
                let loss = reward_loss(r, r_ref).ok();
                let params = [model.params1.p(), model.params1.r(), model.params2.p(), model.params2.r()];
                let mut rec = vec![cell(eta), cell(delta), kind.to_string(), method.to_string()];
                rec.extend(params.iter().map(|&x| cell(x)));
                rec.extend([cell(k), cell(k_ref), cell(r), cell(r_ref), cell(u), cell(u_ref), opt_cell(dk), opt_cell(dpi), opt_cell(loss)]);
                w.write_record(&rec).map_err(csv_err)?;
                rows.push(json!({
                    "eta": num(eta),
                    "delta": num(delta),
                    "agent": kind.to_string(),
                    "method": method,
                    "model": { "p1": num(params[0]), "r1": num(params[1]), "p2": num(params[2]), "r2": num(params[3]) },
                    "solve": solve_json(info),
                    "lifetime": num(k),
                    "reference_lifetime": num(k_ref),
                    "total_reward": num(r),
                    "reference_reward": num(r_ref),
                    "delta_lifetime": opt_num(dk),
                    "policy_deviation": opt_num(dpi),
                    "reward_loss": opt_num(loss),
                }));
            }
        }
    }
    out.files.push(("sensitivity.csv".into(), finish_csv(w)?));
    let interfaces = match interfaces {
        Interfaces::Both => "both",
        Interfaces::Lte => "lte",
        Interfaces::Wifi => "wifi",
    };
    out.doc = json!({ "interfaces": interfaces, "reference": "fullmdp", "rows": rows });
    Ok(out)
}

// ------------------------------------------------------------------ fit

fn fit_doc(source: &str, trace: &LatencyTrace, theta: f64) -> CliResult<(Value, f64)> {
    let states = binarize(trace, theta)?;
    let fit = fit_ge(&states)?;
    let f = latency_reliability(trace, theta)?;
    let doc = json!({
        "source": source,
        "samples": trace.len(),
        "p_hat": opt_num(fit.p_hat),
        "r_hat": opt_num(fit.r_hat),
        "counts": { "gg": fit.counts[0][0], "gb": fit.counts[0][1], "bg": fit.counts[1][0], "bb": fit.counts[1][1] },
        "dwell": { "good": fit.dwell[0], "bad": fit.dwell[1] },
        "reliability": num(f),
        "diagnostics": fit.diagnostics,
    });
    Ok((doc, f))
}

pub fn cmd_fit(ctx: &Context, traces: &[std::path::PathBuf], theta: f64, synthetic: Option<usize>, loss: f64) -> CliResult<Output> {
    let mut out = Output::new("fit");
    let mut docs = Vec::new();
    let mut reliabilities = Vec::new();
    let mut generator = Value::Null;
    if let Some(len) = synthetic {
        let params = GeParams::new(ctx.cfg.p1, ctx.cfg.r1)?;
        let trace = synthesize_trace(&params, len, theta, loss, ctx.cfg.base_seed)?;
        let (doc, f) = fit_doc("synthetic", &trace, theta)?;
        docs.push(doc);
        reliabilities.push(f);
        generator = json!({ "p": num(params.p()), "r": num(params.r()), "len": len, "loss": num(loss), "seed": ctx.cfg.base_seed });
    }
    for path in traces {
        let file = fs::File::open(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
        let trace = LatencyTrace::from_csv(file).map_err(|e| CliError::from(e).with_context(&path.display().to_string()))?;
        let (doc, f) = fit_doc(&path.display().to_string(), &trace, theta)?;
        docs.push(doc);
        reliabilities.push(f);
    }
    if docs.is_empty() {
        return Err(CliError::validation("give at least one trace file or --synthetic"));
    }
    out.doc = json!({
        "theta": num(theta),
        "generator": generator,
        "traces": docs,
        "e2e_error": num(e2e_error(&reliabilities)?),
    });
    Ok(out)
}

pub fn cmd_synth_trace(ctx: &Context, interface: Interfaces, len: usize, loss: f64) -> CliResult<Output> {
    let mut out = Output::new("synth-trace");
    let (name, params) = match interface {
        Interfaces::Lte => ("lte", GeParams::new(ctx.cfg.p1, ctx.cfg.r1)?),
        Interfaces::Wifi => ("wifi", GeParams::new(ctx.cfg.p2, ctx.cfg.r2)?),
        Interfaces::Both => return Err(CliError::validation("synth-trace draws one interface: lte or wifi")),
    };
    let trace = synthesize_trace(&params, len, ctx.cfg.theta, loss, ctx.cfg.base_seed)?;
    let csv = trace.to_csv();
    out.doc = json!({
        "interface": name,
        "p": num(params.p()),
        "r": num(params.r()),
        "theta": num(ctx.cfg.theta),
        "len": len,
        "loss": num(loss),
        "seed": ctx.cfg.base_seed,
    });
    out.files.push((format!("trace_{name}.csv"), csv.clone()));
    out.stdout = Some(csv);
    Ok(out)
}
