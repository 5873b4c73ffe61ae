use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use conflow_cli::config::CheckKind;
use conflow_cli::run::read_source;
use conflow_cli::{run_file, Overrides, RunOptions, Scenario};

#[derive(Parser)]
#[command(name = "conflow", version, about = "Run conflow verification scenarios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every check in a scenario and print or write the JSON report.
    Run {
        config: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Gauss–Legendre nodes per axis.
        #[arg(long)]
        quad: Option<usize>,
        /// Run checks in parallel.
        #[arg(long)]
        parallel: bool,
    },
    /// List the available check kinds.
    ListChecks,
    /// Parse and validate a scenario without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::ListChecks => {
            for k in CheckKind::ALL {
                println!("{:<22} {}", k.as_str(), k.describe());
            }
            ExitCode::SUCCESS
        }
        Cmd::Validate { config } => match read_source(&config).and_then(|s| Scenario::parse(&s).map(|sc| (s, sc))) {
            Ok((source, sc)) => match conflow_cli::Context::build(&sc, &source, &Overrides::default()) {
                Ok(_) => {
                    println!("{}: ok ({} checks)", config.display(), sc.checks.len());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{}: {e}", config.display());
                    ExitCode::from(2)
                }
            },
            Err(e) => {
                eprintln!("{}: {e}", config.display());
                ExitCode::from(2)
            }
        },
        Cmd::Run { config, report, seed, quad, parallel } => {
            let opts = RunOptions { overrides: Overrides { seed, quad_nodes: quad }, parallel };
            let r = match run_file(&config, &opts) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("{}: {e}", config.display());
                    return ExitCode::from(2);
                }
            };
            let json = r.to_json();
            let base = config.parent().unwrap_or_else(|| std::path::Path::new(".")).to_path_buf();
            let report = report.or_else(|| r.scenario.output.report.as_ref().map(|p| base.join(p)));
            match &report {
                Some(path) => {
                    if let Err(e) = std::fs::write(path, &json) {
                        eprintln!("{}: {e}", path.display());
                        return ExitCode::from(2);
                    }
                }
                None => print!("{json}"),
            }
            if let Some(dir) = r.scenario.output.tables.as_ref() {
                let dir = base.join(dir);
                if let Err(e) = r.write_tables(&dir) {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            }
            for c in &r.checks {
                eprintln!("{:<5} {}", format!("{:?}", c.status).to_uppercase(), c.name);
            }
            if r.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
