//! Execute a scenario and assemble its JSON report.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::checks;
use crate::config::{CheckSpec, Expect, Scenario};
use crate::context::{Context, Overrides};
use crate::error::{ConfigError, RunError};

/// Options for one run.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub overrides: Overrides,
    /// Run checks on the rayon pool. Output order is unchanged.
    pub parallel: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// A check that was expected to fail and did.
    Info,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub kind: String,
    pub status: Status,
    pub expect: String,
    pub tolerance: f64,
    pub measured: BTreeMap<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub runtime_ms: f64,
    #[serde(skip)]
    pub tables: Vec<(String, String)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Environment {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub quadrature_nodes: Vec<usize>,
    pub lambda_nodes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub passed: usize,
    pub failed: usize,
    pub info: usize,
    pub status: Status,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub scenario: Scenario,
    pub environment: Environment,
    pub checks: Vec<CheckRecord>,
    pub summary: Summary,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.summary.status == Status::Pass
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Write every check's tables as `<scenario>_<check>_<table>.csv`.
    pub fn write_tables(&self, dir: &Path) -> Result<(), RunError> {
        let out = |e: std::io::Error| RunError::Output { path: dir.display().to_string(), message: e.to_string() };
        std::fs::create_dir_all(dir).map_err(out)?;
        for c in &self.checks {
            for (stem, csv) in &c.tables {
                let path = dir.join(format!("{}_{}_{}.csv", self.scenario.name, c.name, stem));
                std::fs::write(&path, csv)
                    .map_err(|e| RunError::Output { path: path.display().to_string(), message: e.to_string() })?;
            }
        }
        Ok(())
    }
}

fn run_one(ctx: &Context, spec: &CheckSpec, index: usize) -> CheckRecord {
    let start = Instant::now();
    let outcome = checks::run(ctx, spec, index);
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let (status, measured, note, tables) = match outcome {
        Ok(o) => {
            let (status, note) = match (o.passed, spec.expect) {
                (true, Expect::Pass) => (Status::Pass, o.note),
                (false, Expect::Pass) => (Status::Fail, o.note),
                (false, Expect::Fail) => (Status::Info, o.note),
                (true, Expect::Fail) => (Status::Fail, Some("expected failure did not occur".to_string())),
            };
            (status, o.measured, note, o.tables)
        }
        Err(e) => (Status::Fail, BTreeMap::new(), Some(format!("error: {e}")), Vec::new()),
    };
    CheckRecord {
        name: spec.label(),
        kind: spec.kind.as_str().to_string(),
        status,
        expect: match spec.expect {
            Expect::Pass => "pass",
            Expect::Fail => "fail",
        }
        .to_string(),
        tolerance: spec.tolerance(),
        measured,
        note,
        runtime_ms,
        tables,
    }
}

/// Build the scenario context and run its checks in declaration order.
pub fn run_scenario(s: &Scenario, source: &str, opts: &RunOptions) -> Result<Report, ConfigError> {
    let ctx = Context::build(s, source, &opts.overrides)?;
    let records: Vec<CheckRecord> = if opts.parallel {
        s.checks.par_iter().enumerate().map(|(i, c)| run_one(&ctx, c, i)).collect()
    } else {
        s.checks.iter().enumerate().map(|(i, c)| run_one(&ctx, c, i)).collect()
    };
    let count = |st: Status| records.iter().filter(|r| r.status == st).count();
    let summary = Summary {
        passed: count(Status::Pass),
        failed: count(Status::Fail),
        info: count(Status::Info),
        status: if count(Status::Fail) == 0 { Status::Pass } else { Status::Fail },
    };
    Ok(Report {
        scenario: s.clone(),
        environment: Environment {
            tool: "conflow".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: ctx.seed,
            quadrature_nodes: ctx.quad.nodes.clone(),
            lambda_nodes: ctx.quad.lambda_nodes,
        },
        checks: records,
        summary,
    })
}

/// Read, parse and run a scenario file.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<Report, ConfigError> {
    let source = read_source(path)?;
    let s = Scenario::parse(&source)?;
    run_scenario(&s, &source, opts)
}

pub fn read_source(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })
}
