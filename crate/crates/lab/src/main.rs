use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use issl_core::encoders::{effective_dimension, Encoder, RANK_TOL};
use issl_core::probes::{sample_optimality_report, ProbeFamily};
use issl_core::world::EquivalenceRelation;
use issl_lab::acceptance;
use issl_lab::config::{ConfigFile, ScenarioKind};
use issl_lab::error::{LabError, LabResult};
use issl_lab::manifest::{execute, rerun};

/// Runs invariant-SSL scenarios and writes CSV/JSON results with a manifest.
#[derive(Debug, Parser)]
#[command(name = "issl-lab", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "ISSL_LAB_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        scenario: ScenarioKind,
        /// JSON config `{"version": 1, "params": {...}}`; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Print the resolved default parameters of a scenario.
    Defaults { scenario: ScenarioKind },
    /// Check an encoder file against a partition file.
    AuditEncoder {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        /// `linear`, `linear-homogeneous` or `mlp:W1,W2,...`.
        #[arg(long, default_value = "linear")]
        family: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the acceptance checks.
    Selftest {
        /// Only these criterion ids.
        #[arg(long, num_args = 1..)]
        only: Vec<u8>,
    },
    /// Re-execute a recorded run and compare output hashes.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory (default: next to the manifest).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn audit(encoder: &PathBuf, partition: &PathBuf, family: &str, tol: f64, budget: Option<usize>, seed: u64) -> LabResult<String> {
    let fam = ProbeFamily::try_from(family.to_string()).map_err(|e| LabError::validation(e.to_string()))?;
    let e = Encoder::load(encoder).map_err(|e| LabError::validation(format!("encoder {}: {e}", encoder.display())))?;
    let eq = EquivalenceRelation::load_json(partition)
        .map_err(|e| LabError::validation(format!("partition {}: {e}", partition.display())))?;
    if e.size() != eq.size() {
        return Err(LabError::validation(format!("encoder has {} rows for {} inputs", e.size(), eq.size())));
    }
    if !(tol >= 0.0) {
        return Err(LabError::validation("tol must be non-negative"));
    }
    let budget = budget.unwrap_or_else(|| fam.default_budget(eq.num_classes()));
    let report = sample_optimality_report(&e, &eq, &fam, tol, budget, seed)?;
    Ok(issl_lab::output::json(&json!({
        "family": fam,
        "dim": e.dim(),
        "effective_dimension": effective_dimension(&e, RANK_TOL),
        "classes": eq.num_classes(),
        "report": report,
    })))
}

fn run(cli: Cli) -> LabResult<ExitCode> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(LabError::validation("--jobs must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::validation(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run { scenario, config, seed, out } => {
            let cfg = ConfigFile::load(config.as_deref())?;
            let m = execute(scenario, &cfg, seed, &out)?;
            println!("run {} ({scenario}, seed {seed})", m.run_id);
            for o in &m.outputs {
                println!("  {}", out.join(&o.file).display());
            }
        }
        Command::Defaults { scenario } => {
            let resolved = issl_lab::scenarios::resolve_only(scenario, &serde_json::Value::Object(Default::default()))?;
            print!("{}", issl_lab::output::json(&ConfigFile::new(resolved)));
        }
        Command::AuditEncoder { encoder, partition, family, tol, budget, seed } => {
            print!("{}", audit(&encoder, &partition, &family, tol, budget, seed)?);
        }
        Command::Selftest { only } => {
            let reports = acceptance::run(&only, |r| println!("{}", r.line()));
            let failed = reports.iter().filter(|r| !r.outcome.passed).count();
            println!("{} passed, {failed} failed", reports.len() - failed);
            if failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Rerun { manifest, out } => {
            let m = rerun(&manifest, out.as_deref())?;
            println!("run {} reproduced: {} outputs match", m.run_id, m.outputs.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
