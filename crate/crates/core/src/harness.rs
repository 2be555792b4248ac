//! Fixture catalogs, scenario runs, metrics and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::mock::{MockNoisy, MockOracle, MockWorld};
use crate::agents::orchestrator::{orchestrate_batch, Batch, BatchOutcome, Mode, OrchestratorError, RunConfig};
use crate::agents::schema::PolicyDoc;
use crate::agents::transport::{ChatTransport, HttpTransport, TransportError};
use crate::conflict::{internal_conflicts, pairwise_conflicts, RicContext, VendorCompatibilityMatrix};
use crate::memory::MemoryKernel;
use crate::model::{pipelines_equal, DeploymentState, Intent, IntentId, ModelError, Pipeline, Registry, XAppProfile};
use crate::oracle::{solve_batch, OracleError, OracleResult, DEFAULT_MAX_LEN};
use crate::retrieval::{DocStore, RetrievalError, TrigramEmbedder};

/// Fixture directory shipped with the crate.
pub const DEFAULT_FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

pub const XAPP_COUNT: usize = 14;
pub const INTENT_COUNT: usize = 7;
pub const SCENARIO_COUNT: usize = 4;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{file}: {source}")]
    Io { file: PathBuf, source: std::io::Error },
    #[error("{file}: {message}")]
    Parse { file: PathBuf, message: String },
    #[error("{file}: expected {expected} {what}, found {found}")]
    Count { file: PathBuf, what: &'static str, expected: usize, found: usize },
    #[error("{file}: {field}: {message}")]
    Invalid { file: PathBuf, field: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: u32,
    pub new_intents: Vec<IntentId>,
    pub pre_deployed_intents: Vec<IntentId>,
}

/// Everything loaded from a fixture directory.
#[derive(Debug, Clone)]
pub struct Fixtures {
    pub ric: RicContext,
    pub scenarios: Vec<ScenarioSpec>,
    pub store: DocStore,
}

impl Fixtures {
    pub fn scenario(&self, id: u32) -> Option<&ScenarioSpec> {
        self.scenarios.iter().find(|s| s.id == id)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FixtureError> {
    let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io { file: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| FixtureError::Parse { file: path.to_path_buf(), message: e.to_string() })
}

fn count(file: &Path, what: &'static str, expected: usize, found: usize) -> Result<(), FixtureError> {
    if expected == found {
        Ok(())
    } else {
        Err(FixtureError::Count { file: file.to_path_buf(), what, expected, found })
    }
}

/// Loads and checks `xapps.json`, `intents.json`, `kpis.json`,
/// `scenarios.json`, `vendor_matrix.json` and the `corpus/` directory.
pub fn load_fixtures(dir: &Path) -> Result<Fixtures, FixtureError> {
    let xf = dir.join("xapps.json");
    let profiles: Vec<XAppProfile> = read_json(&xf)?;
    count(&xf, "xApp profiles", XAPP_COUNT, profiles.len())?;

    let kf = dir.join("kpis.json");
    let kpis: BTreeSet<String> = read_json::<Vec<String>>(&kf)?.into_iter().collect();
    let registry = Registry::with_catalog(profiles, kpis.clone()).map_err(|e| {
        let field = match &e {
            ModelError::InvalidProfile { id, .. } | ModelError::DuplicateXApp(id) => format!("xApp `{id}`"),
            _ => "profiles".into(),
        };
        FixtureError::Invalid { file: xf.clone(), field, message: e.to_string() }
    })?;

    let inf = dir.join("intents.json");
    let intents: Vec<Intent> = read_json(&inf)?;
    count(&inf, "intents", INTENT_COUNT, intents.len())?;
    let mut seen = BTreeSet::new();
    for i in &intents {
        let invalid = |field: &str, message: String| FixtureError::Invalid { file: inf.clone(), field: format!("intent {}.{field}", i.id), message };
        i.validate().map_err(|e| invalid("target_kpis", e.to_string()))?;
        if !seen.insert(i.id) {
            return Err(invalid("id", "duplicate intent id".into()));
        }
        if let Some(k) = i.target_kpis.keys().find(|k| !kpis.contains(*k)) {
            return Err(invalid("target_kpis", format!("kpi `{k}` is not in the KPI catalog")));
        }
        if let Some(x) = i.required_xapps.iter().find(|x| !registry.contains(x)) {
            return Err(invalid("required_xapps", format!("unknown xApp `{x}`")));
        }
    }

    let sf = dir.join("scenarios.json");
    let scenarios: Vec<ScenarioSpec> = read_json(&sf)?;
    count(&sf, "scenarios", SCENARIO_COUNT, scenarios.len())?;
    for s in &scenarios {
        let invalid = |field: &str, message: String| FixtureError::Invalid { file: sf.clone(), field: format!("scenario {}.{field}", s.id), message };
        if s.new_intents.is_empty() {
            return Err(invalid("new_intents", "must not be empty".into()));
        }
        for (field, ids) in [("new_intents", &s.new_intents), ("pre_deployed_intents", &s.pre_deployed_intents)] {
            if let Some(id) = ids.iter().find(|id| !seen.contains(id)) {
                return Err(invalid(field, format!("unknown intent {id}")));
            }
        }
        if let Some(id) = s.new_intents.iter().find(|id| s.pre_deployed_intents.contains(id)) {
            return Err(invalid("pre_deployed_intents", format!("intent {id} is also a new intent")));
        }
    }

    let matrix: VendorCompatibilityMatrix = read_json(&dir.join("vendor_matrix.json"))?;
    let corpus = dir.join("corpus");
    let store = DocStore::from_dir(&corpus, &TrigramEmbedder::default()).map_err(|e| match e {
        RetrievalError::Io(source) => FixtureError::Io { file: corpus.clone(), source },
        other => FixtureError::Parse { file: corpus.clone(), message: other.to_string() },
    })?;

    Ok(Fixtures { ric: RicContext::new(registry, intents, matrix), scenarios, store })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    Http,
    MockOracle,
    MockNoisy,
}

impl FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(TransportKind::Http),
            "mock-oracle" | "mock_oracle" => Ok(TransportKind::MockOracle),
            "mock-noisy" | "mock_noisy" => Ok(TransportKind::MockNoisy),
            _ => Err(format!("unknown transport `{s}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown scenario {0}")]
    UnknownScenario(u32),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reference solution of one scenario.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub oracle: OracleResult,
    pub pre: DeploymentState,
}

pub fn prepare(fixtures: &Fixtures, scenario: u32) -> Result<Prepared, HarnessError> {
    let s = fixtures.scenario(scenario).ok_or(HarnessError::UnknownScenario(scenario))?;
    let (oracle, pre) = solve_batch(&s.new_intents, &s.pre_deployed_intents, &fixtures.ric, DEFAULT_MAX_LEN)?;
    Ok(Prepared { oracle, pre })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: u32,
    pub mode: Mode,
    pub generation_accuracy: f64,
    pub deployment_success: f64,
    pub iterations_to_synthesis: u32,
    pub iterations_to_deployment: u32,
    pub converged: bool,
    pub seed: u64,
    pub transport: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub max_iterations: u32,
    pub analogues: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        let c = RunConfig::new(Mode::F5);
        RunOptions { max_iterations: c.max_iterations, analogues: c.analogues }
    }
}

/// A finished run: the report plus the memory buffer and loop details.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub memory: MemoryKernel,
    pub outcome: BatchOutcome,
}

pub fn make_transport(kind: TransportKind, fixtures: &Fixtures, prepared: &Prepared, seed: u64) -> Result<Box<dyn ChatTransport>, HarnessError> {
    let world = || MockWorld::new(fixtures.ric.clone(), prepared.oracle.per_intent_truth.clone());
    Ok(match kind {
        TransportKind::Http => Box::new(HttpTransport::from_env()?),
        TransportKind::MockOracle => Box::new(MockOracle::new(world())),
        TransportKind::MockNoisy => Box::new(MockNoisy::new(world(), seed)),
    })
}

pub fn run_scenario(fixtures: &Fixtures, scenario: u32, mode: Mode, kind: TransportKind, seed: u64, opts: RunOptions) -> Result<RunArtifacts, HarnessError> {
    let prepared = prepare(fixtures, scenario)?;
    let mut transport = make_transport(kind, fixtures, &prepared, seed)?;
    run_prepared(fixtures, scenario, &prepared, mode, transport.as_mut(), seed, opts)
}

/// Runs a scenario against a caller-supplied transport.
pub fn run_scenario_with_transport(
    fixtures: &Fixtures,
    scenario: u32,
    mode: Mode,
    transport: &mut dyn ChatTransport,
    seed: u64,
    opts: RunOptions,
) -> Result<RunArtifacts, HarnessError> {
    let prepared = prepare(fixtures, scenario)?;
    run_prepared(fixtures, scenario, &prepared, mode, transport, seed, opts)
}

fn run_prepared(
    fixtures: &Fixtures,
    scenario: u32,
    prepared: &Prepared,
    mode: Mode,
    transport: &mut dyn ChatTransport,
    seed: u64,
    opts: RunOptions,
) -> Result<RunArtifacts, HarnessError> {
    let spec = fixtures.scenario(scenario).ok_or(HarnessError::UnknownScenario(scenario))?;
    let embedder = TrigramEmbedder::default();
    let truths = &prepared.oracle.per_intent_truth;
    let batch = Batch {
        ric: &fixtures.ric,
        intents: spec.new_intents.clone(),
        pre: &prepared.pre,
        truths,
        objective: prepared.oracle.objective_value,
        store: &fixtures.store,
        embedder: &embedder,
    };
    let config = RunConfig { mode, max_iterations: opts.max_iterations, analogues: opts.analogues };
    let mut memory = MemoryKernel::new();
    let outcome = orchestrate_batch(&batch, &config, transport, &mut memory)?;

    let best = &outcome.best;
    let correct = spec
        .new_intents
        .iter()
        .filter(|id| matches!((best.proposals.get(id), truths.get(id)), (Some(p), Some(t)) if pipelines_equal(p, t)))
        .count();
    let objective = prepared.oracle.objective_value;
    let deployment_success = if objective == 0 { 1.0 } else { best.score.correct_deployed.max(0) as f64 / objective as f64 };
    let cap = opts.max_iterations;
    let report = RunReport {
        scenario,
        mode,
        generation_accuracy: correct as f64 / spec.new_intents.len() as f64,
        deployment_success,
        iterations_to_synthesis: outcome.iterations_to_synthesis.unwrap_or(cap),
        iterations_to_deployment: outcome.iterations_to_deployment.unwrap_or(cap),
        converged: outcome.iterations_to_synthesis.is_some() && outcome.iterations_to_deployment.is_some(),
        seed,
        transport: transport.descriptor(),
    };
    Ok(RunArtifacts { report, memory, outcome })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Stat { mean: 0.0, min: 0.0, max: 0.0 };
        }
        Stat {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Per-mode aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub scenario: u32,
    pub mode: Mode,
    pub runs: usize,
    pub generation_accuracy: Stat,
    pub deployment_success: Stat,
    pub iterations_to_synthesis: Stat,
    pub iterations_to_deployment: Stat,
    pub converged: Stat,
}

pub fn summarize(scenario: u32, mode: Mode, reports: &[RunReport]) -> ModeSummary {
    let of = |f: fn(&RunReport) -> f64| Stat::of(reports.iter().map(f));
    ModeSummary {
        scenario,
        mode,
        runs: reports.len(),
        generation_accuracy: of(|r| r.generation_accuracy),
        deployment_success: of(|r| r.deployment_success),
        iterations_to_synthesis: of(|r| f64::from(r.iterations_to_synthesis)),
        iterations_to_deployment: of(|r| f64::from(r.iterations_to_deployment)),
        converged: of(|r| if r.converged { 1.0 } else { 0.0 }),
    }
}

/// Runs every mode over the same seeds and aggregates the reports.
pub fn compare_modes(
    fixtures: &Fixtures,
    scenario: u32,
    modes: &[Mode],
    kind: TransportKind,
    seeds: &[u64],
    opts: RunOptions,
) -> Result<Vec<ModeSummary>, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Usage("at least one seed is required".into()));
    }
    let prepared = prepare(fixtures, scenario)?;
    let mut out = Vec::new();
    for &mode in modes {
        let mut reports = Vec::new();
        for &seed in seeds {
            let mut t = make_transport(kind, fixtures, &prepared, seed)?;
            reports.push(run_prepared(fixtures, scenario, &prepared, mode, t.as_mut(), seed, opts)?.report);
        }
        out.push(summarize(scenario, mode, &reports));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(format!("unknown report format `{s}` (expected json or csv)")),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "scenario",
    "mode",
    "generation_accuracy",
    "deployment_success",
    "iterations_to_synthesis",
    "iterations_to_deployment",
    "converged",
    "seed",
    "transport",
];

/// Writes reports as a JSON array or as CSV with a fixed header.
pub fn emit_report(reports: &[RunReport], format: ReportFormat, mut w: impl Write) -> Result<(), HarnessError> {
    if reports.is_empty() {
        return Err(HarnessError::Usage("no reports to emit".into()));
    }
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut w, reports).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(CSV_HEADER).map_err(std::io::Error::from)?;
            for r in reports {
                c.write_record([
                    r.scenario.to_string(),
                    r.mode.to_string(),
                    r.generation_accuracy.to_string(),
                    r.deployment_success.to_string(),
                    r.iterations_to_synthesis.to_string(),
                    r.iterations_to_deployment.to_string(),
                    r.converged.to_string(),
                    r.seed.to_string(),
                    r.transport.clone(),
                ])
                .map_err(std::io::Error::from)?;
            }
            c.flush()?;
        }
    }
    Ok(())
}

/// Printable form of a scenario's reference solution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub scenario: u32,
    pub ground_truths: BTreeMap<IntentId, PolicyDoc>,
    pub pre_deployed: Vec<IntentId>,
    pub max_subset: BTreeSet<IntentId>,
    pub objective_value: usize,
}

pub fn oracle_summary(fixtures: &Fixtures, scenario: u32) -> Result<OracleSummary, HarnessError> {
    let p = prepare(fixtures, scenario)?;
    Ok(OracleSummary {
        scenario,
        ground_truths: p.oracle.per_intent_truth.iter().map(|(id, t)| (*id, PolicyDoc::from(t))).collect(),
        pre_deployed: p.pre.active.iter().map(|q| q.intent_id).collect(),
        max_subset: p.oracle.max_subset,
        objective_value: p.oracle.objective_value,
    })
}

/// Result of the fixture soundness gate for one scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateReport {
    pub scenario: u32,
    pub new_intents: usize,
    pub objective_value: usize,
    pub conflicting_pairs: Vec<(IntentId, IntentId)>,
    pub internally_conflicting: Vec<IntentId>,
}

impl GateReport {
    pub fn passed(&self) -> bool {
        self.conflicting_pairs.is_empty() && self.internally_conflicting.is_empty() && self.objective_value == self.new_intents
    }
}

/// Checks that each scenario's ground truths, new and pre-deployed, are
/// jointly conflict-free and fully deployable.
pub fn fixture_gate(fixtures: &Fixtures) -> Result<Vec<GateReport>, HarnessError> {
    let mut out = Vec::new();
    for s in &fixtures.scenarios {
        let p = prepare(fixtures, s.id)?;
        let truths: Vec<&Pipeline> = p.oracle.per_intent_truth.values().collect();
        let mut pairs = Vec::new();
        for (i, a) in truths.iter().enumerate() {
            for b in &truths[i + 1..] {
                if !pairwise_conflicts(a, b, &fixtures.ric).is_empty() {
                    pairs.push((a.intent_id, b.intent_id));
                }
            }
        }
        out.push(GateReport {
            scenario: s.id,
            new_intents: s.new_intents.len(),
            objective_value: p.oracle.objective_value,
            conflicting_pairs: pairs,
            internally_conflicting: truths
                .iter()
                .filter(|t| !internal_conflicts(t, &fixtures.ric).is_empty())
                .map(|t| t.intent_id)
                .collect(),
        });
    }
    Ok(out)
}
