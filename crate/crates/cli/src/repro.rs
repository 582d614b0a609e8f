//! Manifest-driven reproduction runs.
//!
//! A manifest is TOML with one `[[entry]]` table per experiment:
//!
//! ```toml
//! [[entry]]
//! id = "lifetime-all-on"
//! command = "analytic --agent fixed:(1,1)"
//! provenance = "published"
//! source = "expected lifetime of the all-on policy"
//! profiles = ["desk", "full"]     # optional, both by default
//!
//! [[entry.expect]]
//! path = "/results/0/lifetime"    # JSON pointer into the command's document
//! target = 5.0738e6
//! rel_tol = 0.01
//! ```
//!
//! An expectation is `target` with `rel_tol` or `abs_tol`, a `min`/`max`
//! range, or an exact `equals`. Commands run in-process with the profile
//! and config of the `repro` invocation unless the entry overrides them.

use std::fs;
use std::path::Path;

use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::{Cli, Command, Common, Profile};
use crate::commands::{execute_with, Context, Output};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, rename = "entry")]
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub id: String,
    pub command: String,
    /// `published`, `derived` or `invariant`.
    pub provenance: String,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub profiles: Option<Vec<Profile>>,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub path: String,
    pub target: Option<f64>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub equals: Option<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub id: String,
    pub provenance: String,
    pub check: String,
    pub expected: String,
    pub observed: String,
    pub status: Status,
    pub detail: String,
}

impl Manifest {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::parse(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.with_context(&path.display().to_string()))
    }
}

impl Expectation {
    fn describe(&self) -> String {
        if let Some(v) = &self.equals {
            return format!("= {v}");
        }
        let mut parts = Vec::new();
        if let Some(t) = self.target {
            match (self.rel_tol, self.abs_tol) {
                (Some(r), _) => parts.push(format!("{t} +/- {}%", r * 100.0)),
                (None, Some(a)) => parts.push(format!("{t} +/- {a}")),
                (None, None) => parts.push(format!("{t}")),
            }
        }
        if let Some(m) = self.min {
            parts.push(format!(">= {m}"));
        }
        if let Some(m) = self.max {
            parts.push(format!("<= {m}"));
        }
        parts.join(" and ")
    }

    /// `(passed, observed, detail)`.
    pub fn check(&self, doc: &Value) -> (bool, String, String) {
        let Some(value) = doc.pointer(&self.path) else {
            return (false, String::new(), format!("no value at {}", self.path));
        };
        let observed = match value {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        if let Some(expected) = &self.equals {
            return (value == expected, observed, String::new());
        }
        let Some(x) = value.as_f64() else {
            return (false, observed, "not a number".into());
        };
        let mut ok = true;
        let mut detail = String::new();
        if let Some(t) = self.target {
            let tol = match (self.rel_tol, self.abs_tol) {
                (Some(r), _) => r * t.abs(),
                (None, Some(a)) => a,
                (None, None) => 0.0,
            };
            ok &= (x - t).abs() <= tol;
            if t != 0.0 {
                detail = format!("relative error {:.3e}", (x - t) / t);
            }
        }
        if let Some(m) = self.min {
            ok &= x >= m;
        }
        if let Some(m) = self.max {
            ok &= x <= m;
        }
        (ok, observed, detail)
    }
}

fn profile_name(p: Profile) -> &'static str {
    match p {
        Profile::Full => "full",
        Profile::Desk => "desk",
    }
}

fn merge(base: &Common, entry: &Common) -> Common {
    Common {
        config: entry.config.clone().or_else(|| base.config.clone()),
        seed: entry.seed.or(base.seed),
        episodes: entry.episodes.or(base.episodes),
        out: None,
        eta: entry.eta.clone().or_else(|| base.eta.clone()),
        strict: entry.strict || base.strict,
        profile: entry.profile.or(base.profile),
    }
}

fn run_entry(entry: &Entry, base: &Common) -> CliResult<Output> {
    let argv = std::iter::once("ifdiv").chain(entry.command.split_whitespace());
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::validation(e.to_string()))?;
    if matches!(cli.command, Command::Repro { .. }) {
        return Err(CliError::validation("a manifest entry cannot run repro"));
    }
    let common = merge(base, &cli.common);
    let ctx = Context::from_common(&common)?;
    execute_with(&ctx, &common, &cli.command)
}

/// Runs every entry; a failing entry is reported and the run continues.
pub fn run_repro(manifest: &Manifest, base: &Common) -> Vec<ReportRow> {
    let profile = base.profile.unwrap_or_default();
    let mut rows = Vec::new();
    for entry in &manifest.entries {
        let row = |check: &str, expected: String, observed: String, status: Status, detail: String| ReportRow {
            id: entry.id.clone(),
            provenance: entry.provenance.clone(),
            check: check.into(),
            expected,
            observed,
            status,
            detail,
        };
        if entry.profiles.as_ref().is_some_and(|p| !p.contains(&profile)) {
            rows.push(row("run", String::new(), String::new(), Status::Skip, format!("not part of the {} profile", profile_name(profile))));
            continue;
        }
        match run_entry(entry, base) {
            Err(e) => rows.push(row("run", String::new(), String::new(), Status::Fail, e.message)),
            Ok(out) => {
                for w in &out.warnings {
                    eprintln!("warning [{}]: {w}", entry.id);
                }
                for exp in &entry.expect {
                    let (ok, observed, detail) = exp.check(&out.doc);
                    let status = if ok { Status::Pass } else { Status::Fail };
                    rows.push(row(&exp.path, exp.describe(), observed, status, detail));
                }
            }
        }
    }
    rows
}

pub fn report_csv(rows: &[ReportRow]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::new(crate::error::exit::FAILURE, e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(["id", "provenance", "check", "expected", "observed", "status", "detail"])
            .map_err(|e| CliError::new(crate::error::exit::FAILURE, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::new(crate::error::exit::FAILURE, e.to_string()))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

pub fn report_doc(rows: &[ReportRow], profile: Profile) -> Value {
    let count = |s: Status| rows.iter().filter(|r| r.status == s).count();
    json!({
        "profile": profile,
        "checks": rows.len(),
        "passed": count(Status::Pass),
        "failed": count(Status::Fail),
        "skipped": count(Status::Skip),
        "all_passed": count(Status::Fail) == 0,
        "rows": rows,
    })
}

pub fn cmd_repro(ctx: &Context, common: &Common, manifest: &Path) -> CliResult<Output> {
    let manifest = Manifest::load(manifest)?;
    let rows = run_repro(&manifest, common);
    let csv = report_csv(&rows)?;
    let mut out = Output {
        name: "repro".into(),
        doc: report_doc(&rows, ctx.profile),
        ..Default::default()
    };
    out.failed = rows.iter().any(|r| r.status == Status::Fail);
    out.files.push(("repro_report.csv".into(), csv.clone()));
    out.stdout = Some(csv);
    Ok(out)
}
