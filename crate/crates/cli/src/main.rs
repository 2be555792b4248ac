use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rapp_core::agents::orchestrator::Mode;
use rapp_core::harness::{
    compare_modes, emit_report, fixture_gate, load_fixtures, oracle_summary, run_scenario, Fixtures, HarnessError, ReportFormat, RunOptions, TransportKind,
    DEFAULT_FIXTURES,
};

#[derive(Parser)]
#[command(name = "rapp", version, about = "Intent-driven rApp composition harness")]
struct Cli {
    /// Directory holding xapps.json, intents.json, kpis.json, scenarios.json, vendor_matrix.json and corpus/.
    #[arg(long, global = true, default_value = DEFAULT_FIXTURES)]
    fixtures: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and emit one report row per (scenario, mode).
    Run(RunArgs),
    /// Aggregate several seeds per mode.
    Compare(CompareArgs),
    /// Print the reference solution of a scenario.
    Oracle {
        #[arg(long)]
        scenario: u32,
    },
    /// Fixture checks.
    Fixtures {
        #[command(subcommand)]
        action: FixturesAction,
    },
}

#[derive(Subcommand)]
enum FixturesAction {
    /// Load every fixture file and run the soundness gate.
    Validate,
}

#[derive(Args)]
struct Common {
    /// Scenario id or `all`.
    #[arg(long, default_value = "all")]
    scenario: String,
    #[arg(long, default_value = "mock-oracle")]
    transport: TransportKind,
    #[arg(long = "max-iters", default_value_t = 50)]
    max_iters: u32,
    #[arg(long, default_value_t = 3)]
    analogues: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// f5, sa, nr, np, fcfs or `all`.
    #[arg(long, default_value = "f5")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    /// Write the memory buffer as JSONL. With several runs the scenario and mode are appended to the file stem.
    #[arg(long)]
    memory_out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated modes or `all`.
    #[arg(long, default_value = "all")]
    modes: String,
    /// Seeds 0..N.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
}

impl Common {
    fn scenarios(&self, f: &Fixtures) -> Result<Vec<u32>> {
        if self.scenario == "all" {
            return Ok(f.scenarios.iter().map(|s| s.id).collect());
        }
        let id: u32 = self.scenario.parse().with_context(|| format!("bad scenario `{}`", self.scenario))?;
        if f.scenario(id).is_none() {
            bail!("unknown scenario {id}");
        }
        Ok(vec![id])
    }

    fn options(&self) -> Result<RunOptions> {
        if self.max_iters == 0 {
            bail!("--max-iters must be at least 1");
        }
        Ok(RunOptions { max_iterations: self.max_iters, analogues: self.analogues })
    }
}

fn parse_modes(s: &str) -> Result<Vec<Mode>> {
    if s == "all" {
        return Ok(Mode::ALL.to_vec());
    }
    s.split(',').map(|m| m.trim().parse::<Mode>().map_err(anyhow::Error::msg)).collect()
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn memory_path(base: &Path, scenario: u32, mode: Mode, single: bool) -> PathBuf {
    if single {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("memory");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("jsonl");
    base.with_file_name(format!("{stem}-s{scenario}-{}.{ext}", mode.to_string().to_lowercase()))
}

fn run(f: &Fixtures, a: RunArgs) -> Result<()> {
    let scenarios = a.common.scenarios(f)?;
    let modes = parse_modes(&a.mode)?;
    let opts = a.common.options()?;
    let single = scenarios.len() * modes.len() == 1;
    let mut reports = Vec::new();
    for &s in &scenarios {
        for &m in &modes {
            let art = run_scenario(f, s, m, a.common.transport, a.seed, opts)?;
            if let Some(base) = &a.memory_out {
                let path = memory_path(base, s, m, single);
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                art.memory.write_jsonl(BufWriter::new(file))?;
            }
            reports.push(art.report);
        }
    }
    emit_report(&reports, a.format, output(a.report.as_deref())?)?;
    Ok(())
}

fn compare(f: &Fixtures, a: CompareArgs) -> Result<()> {
    let modes = parse_modes(&a.modes)?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let mut all = Vec::new();
    for s in a.common.scenarios(f)? {
        all.extend(compare_modes(f, s, &modes, a.common.transport, &seeds, a.common.options()?)?);
    }
    print_json(&all)?;
    Ok(())
}

fn validate(f: &Fixtures) -> Result<bool> {
    let gates = fixture_gate(f)?;
    let ok = gates.iter().all(|g| g.passed());
    print_json(&gates)?;
    eprintln!("{} xApps, {} intents, {} scenarios: {}", f.ric.registry.len(), f.ric.intents.len(), f.scenarios.len(), if ok { "ok" } else { "gate failed" });
    Ok(ok)
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let kind = if let Some(e) = c.downcast_ref::<io::Error>() {
            Some(e.kind())
        } else if let Some(HarnessError::Io(e)) = c.downcast_ref::<HarnessError>() {
            Some(e.kind())
        } else {
            c.downcast_ref::<serde_json::Error>().and_then(|e| e.io_error_kind())
        };
        kind == Some(io::ErrorKind::BrokenPipe)
    })
}

fn main() -> Result<ExitCode> {
    match real_main() {
        Err(e) if broken_pipe(&e) => Ok(ExitCode::SUCCESS),
        other => other,
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let f = load_fixtures(&cli.fixtures).with_context(|| format!("loading fixtures from {}", cli.fixtures.display()))?;
    match cli.command {
        Command::Run(a) => run(&f, a)?,
        Command::Compare(a) => compare(&f, a)?,
        Command::Oracle { scenario } => print_json(&oracle_summary(&f, scenario)?)?,
        Command::Fixtures { action: FixturesAction::Validate } => {
            if !validate(&f)? {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
