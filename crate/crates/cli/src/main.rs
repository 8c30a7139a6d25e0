//! `bec`: run simulator scenarios, reproduce the round-trip and bandwidth
//! sweeps, and run the verification suite.
//!
//! Exit status is 0 on success, 1 when a property is violated and 2 on a
//! configuration or I/O error.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bec_core::experiment::{self, ExperimentSpec, SweepPoint};
use bec_core::sim::{self, ScenarioConfig};
use bec_core::sync::ProtocolVersion;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bec", version, about = "Byzantine causal broadcast simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Round trips per reconciliation across the sweep.
    Roundtrips(SweepArgs),
    /// Bytes per reconciliation across the sweep, against the optimum.
    Bandwidth(SweepArgs),
    /// Property matrix, delivery-order brute force and detector self-tests.
    Verify {
        /// Seeds per matrix cell.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one scenario file (TOML) and check trace properties.
    Run {
        scenario: PathBuf,
        /// Per-reconciliation CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Final replica states output.
        #[arg(long)]
        states: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// Protocol to run; both when omitted.
    #[arg(long)]
    protocol: Option<ProtocolVersion>,
    #[arg(long, default_value_t = 4)]
    replicas: usize,
    /// Reconciliations per pair at each sweep point.
    #[arg(long, default_value_t = 100)]
    pairs_recons: usize,
    /// Updates per replica between reconciliations, comma separated.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    bloom_bits: u32,
    #[arg(long, default_value_t = 7)]
    bloom_hashes: u32,
}

impl SweepArgs {
    fn spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            protocols: match self.protocol {
                Some(p) => vec![p],
                None => vec![ProtocolVersion::Basic, ProtocolVersion::Bloom],
            },
            sweep: self.sweep.clone().unwrap_or_else(|| experiment::DEFAULT_SWEEP.to_vec()),
            replicas: self.replicas,
            pairs_recons: self.pairs_recons,
            seed: self.seed,
            bloom_bits: self.bloom_bits,
            bloom_hashes: self.bloom_hashes,
        }
    }
}

enum Failure {
    Violations,
    Config(String),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<sim::ConfigError> for Failure {
    fn from(e: sim::ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

type CsvWriter = fn(&[SweepPoint], Box<dyn Write>) -> Result<(), String>;

fn sweep(args: &SweepArgs, write: CsvWriter) -> Result<(), Failure> {
    let points = experiment::run_sweep(&args.spec())?;
    write(&points, output(&args.out)?).map_err(Failure::Config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Roundtrips(args) => {
            sweep(&args, |p, w| experiment::write_roundtrips_csv(p, w).map_err(|e| e.to_string()))
        }
        Command::Bandwidth(args) => {
            sweep(&args, |p, w| experiment::write_bandwidth_csv(p, w).map_err(|e| e.to_string()))
        }
        Command::Verify { seeds, seed } => {
            let report = experiment::verify(seeds, seed)?;
            let mut out = io::stdout().lock();
            let clean = report.runs.iter().filter(|r| r.violations.is_empty()).count();
            writeln!(out, "matrix: {clean}/{} runs clean", report.runs.len())?;
            for r in report.runs.iter().filter(|r| !r.violations.is_empty()) {
                for v in &r.violations {
                    writeln!(out, "  {} seed {}: {v}", r.label, r.seed)?;
                }
            }
            writeln!(
                out,
                "delivery orders: {} workloads, {} orders, {} failures",
                report.orders.workloads,
                report.orders.orders,
                report.orders.failures.len()
            )?;
            for f in &report.orders.failures {
                writeln!(out, "  {f}")?;
            }
            for m in &report.mutations {
                let verdict = if m.detected { "detected" } else { "MISSED" };
                writeln!(out, "mutation {}: {verdict} ({:?})", m.label, m.expected)?;
            }
            if report.passed() {
                writeln!(out, "PASS")?;
                Ok(())
            } else {
                writeln!(out, "FAIL")?;
                Err(Failure::Violations)
            }
        }
        Command::Run { scenario, out, states } => {
            let text = fs::read_to_string(&scenario)?;
            let cfg = ScenarioConfig::from_toml(&text)?;
            let outcome = sim::run_scenario(&cfg)?;
            outcome.stats.write_csv(output(&out)?).map_err(|e| Failure::Config(e.to_string()))?;
            if let Some(path) = states {
                fs::write(path, outcome.final_states())?;
            }
            let violations = outcome.violations();
            for v in &violations {
                eprintln!("violation: {v}");
            }
            if violations.is_empty() {
                Ok(())
            } else {
                Err(Failure::Violations)
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violations) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
