//! The bounded perceive, reason, refine, deploy loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::prompt::{render, repair_message, AgentRole, Analogue, PromptContext, RetrievedChunk};
use super::schema::{parse_reply, PerceptionDoc, PolicyDoc, RefinementDoc};
use super::transport::{ChatMessage, ChatTransport};
use crate::conflict::{build_conflict_graph, validity, ConflictGraph, RicContext};
use crate::memory::{MemoryKernel, OutcomeRecord};
use crate::model::{pipelines_equal, validate_pipeline_structure, DeploymentState, Intent, IntentId, Pipeline, XAppId};
use crate::oracle::{correct_count, score_solution, CompatibilityTable, OracleError, SolutionScore};
use crate::retrieval::{DocStore, Embedder};

pub const MAX_ITERATIONS: u32 = 50;
pub const DEFAULT_ANALOGUES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    F5,
    SA,
    NR,
    NP,
    FCFS,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::F5, Mode::SA, Mode::NR, Mode::NP, Mode::FCFS];

    pub fn uses_perception(self) -> bool {
        matches!(self, Mode::F5 | Mode::NR | Mode::FCFS)
    }

    pub fn uses_refinement(self) -> bool {
        matches!(self, Mode::F5 | Mode::NP | Mode::FCFS)
    }

    pub fn uses_memory(self) -> bool {
        self != Mode::SA
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::F5 => "F5",
            Mode::SA => "SA",
            Mode::NR => "NR",
            Mode::NP => "NP",
            Mode::FCFS => "FCFS",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub mode: Mode,
    pub max_iterations: u32,
    pub analogues: usize,
}

impl RunConfig {
    pub fn new(mode: Mode) -> Self {
        RunConfig { mode, max_iterations: MAX_ITERATIONS, analogues: DEFAULT_ANALOGUES }
    }
}

/// One request sent to the transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCall {
    pub iteration: u32,
    pub intent: IntentId,
    pub role: AgentRole,
    pub repair: bool,
}

/// Why an agent produced no usable document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentFailure {
    Transport(String),
    Invalid(Vec<String>),
}

/// Shared inputs of one agent call.
pub struct AgentEnv<'a> {
    pub ric: &'a RicContext,
    pub iteration: u32,
    pub trace: &'a mut Vec<AgentCall>,
}

/// Sends the prompt, validates the reply and re-prompts once on failure.
fn call_agent<T: DeserializeOwned>(
    transport: &mut dyn ChatTransport,
    env: &mut AgentEnv<'_>,
    pc: &PromptContext,
    validate: impl Fn(&T) -> Result<(), Vec<String>>,
) -> Result<T, AgentFailure> {
    let mut messages: Vec<ChatMessage> = render(pc).into();
    for repair in [false, true] {
        env.trace.push(AgentCall { iteration: env.iteration, intent: pc.intent.id, role: pc.agent, repair });
        let reply = transport.complete(&messages).map_err(|e| AgentFailure::Transport(e.to_string()))?;
        let errors = match parse_reply::<T>(&reply) {
            Ok(doc) => match validate(&doc) {
                Ok(()) => return Ok(doc),
                Err(e) => e,
            },
            Err(e) => e,
        };
        if repair {
            return Err(AgentFailure::Invalid(errors));
        }
        messages.push(ChatMessage::assistant(reply));
        messages.push(repair_message(&errors));
    }
    unreachable!("loop returns on the second pass")
}

pub fn run_perception(transport: &mut dyn ChatTransport, env: &mut AgentEnv<'_>, pc: PromptContext) -> Result<PerceptionDoc, AgentFailure> {
    let pc = PromptContext { agent: AgentRole::Perception, ..pc };
    let registry = &env.ric.registry;
    call_agent(transport, env, &pc, |d: &PerceptionDoc| d.validate(registry))
}

pub fn run_reasoning(
    transport: &mut dyn ChatTransport,
    env: &mut AgentEnv<'_>,
    pc: PromptContext,
    perception: Option<PerceptionDoc>,
    analogues: Vec<Analogue>,
) -> Result<PolicyDoc, AgentFailure> {
    let pc = PromptContext { agent: AgentRole::Reasoning, perception, analogues, ..pc };
    let registry = &env.ric.registry;
    let id = pc.intent.id;
    call_agent(transport, env, &pc, |d: &PolicyDoc| d.validate(id, registry))
}

pub fn run_single_agent(transport: &mut dyn ChatTransport, env: &mut AgentEnv<'_>, pc: PromptContext) -> Result<PolicyDoc, AgentFailure> {
    let pc = PromptContext { agent: AgentRole::SingleAgent, ..pc };
    let registry = &env.ric.registry;
    let id = pc.intent.id;
    call_agent(transport, env, &pc, |d: &PolicyDoc| d.validate(id, registry))
}

pub fn run_refinement(
    transport: &mut dyn ChatTransport,
    env: &mut AgentEnv<'_>,
    candidate: PolicyDoc,
    summary: String,
    pc: PromptContext,
) -> Result<RefinementDoc, AgentFailure> {
    let violations = match validate_pipeline_structure(&candidate.to_pipeline(), &env.ric.registry) {
        Ok(()) => Vec::new(),
        Err(v) => v.iter().map(ToString::to_string).collect(),
    };
    let pc = PromptContext {
        agent: AgentRole::Refinement,
        candidate: Some(candidate.clone()),
        structural_violations: violations,
        failure_summary: Some(summary),
        ..pc
    };
    let registry = &env.ric.registry;
    call_agent(transport, env, &pc, |d: &RefinementDoc| d.validate(&candidate, registry))
}

/// A batch of proposals with the subset chosen for deployment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredSolution {
    pub proposals: BTreeMap<IntentId, Pipeline>,
    pub deployed: BTreeSet<IntentId>,
    pub score: SolutionScore,
}

impl ScoredSolution {
    pub fn empty() -> Self {
        ScoredSolution { proposals: BTreeMap::new(), deployed: BTreeSet::new(), score: SolutionScore::FLOOR }
    }
}

/// Keeps the candidate unless it scores strictly worse than the best so far.
pub fn enforce_monotonicity(previous_best: ScoredSolution, candidate: ScoredSolution) -> ScoredSolution {
    if candidate.score >= previous_best.score {
        candidate
    } else {
        previous_best
    }
}

/// Feasible subset with the most correct pipelines, then the most
/// pipelines, then the smallest sorted id list.
pub fn select_exhaustive(
    candidates: &BTreeMap<IntentId, Pipeline>,
    pre: &DeploymentState,
    ctx: &RicContext,
    truths: &BTreeMap<IntentId, Pipeline>,
) -> Result<BTreeSet<IntentId>, OracleError> {
    if candidates.len() > crate::oracle::MAX_SUBSET_CANDIDATES {
        return Err(OracleError::TooManyCandidates(candidates.len()));
    }
    let table = CompatibilityTable::build(candidates, pre, ctx);
    let mut best: Option<(usize, usize, Vec<IntentId>)> = None;
    for mask in table.feasible_masks() {
        let members = table.members(mask);
        let correct = correct_count(&members, candidates, truths);
        let ids: Vec<IntentId> = members.into_iter().collect();
        let better = match &best {
            None => true,
            Some((c, n, lex)) => (correct, ids.len()).cmp(&(*c, *n)).then_with(|| lex.cmp(&ids)).is_gt(),
        };
        if better {
            best = Some((correct, ids.len(), ids));
        }
    }
    Ok(best.map(|(_, _, ids)| ids.into_iter().collect()).unwrap_or_default())
}

/// Greedy deployment in ascending intent order. A pipeline is skipped when
/// it would reuse an xApp already owned by a deployed rApp or when it
/// conflicts with anything deployed before it.
pub fn select_fcfs(candidates: &BTreeMap<IntentId, Pipeline>, pre: &DeploymentState, ctx: &RicContext) -> BTreeSet<IntentId> {
    let mut active: Vec<&Pipeline> = pre.active.iter().collect();
    let mut owned: BTreeSet<&XAppId> = pre.active.iter().flat_map(|p| p.node_ids()).collect();
    let mut chosen = BTreeSet::new();
    for (id, p) in candidates {
        if p.node_ids().any(|x| owned.contains(x)) {
            continue;
        }
        if validity(p, active.iter().copied(), ctx).0 {
            owned.extend(p.node_ids());
            active.push(p);
            chosen.insert(*id);
        }
    }
    chosen
}

/// Inputs to one batch run.
pub struct Batch<'a> {
    pub ric: &'a RicContext,
    pub intents: Vec<IntentId>,
    pub pre: &'a DeploymentState,
    pub truths: &'a BTreeMap<IntentId, Pipeline>,
    pub objective: usize,
    pub store: &'a DocStore,
    pub embedder: &'a dyn Embedder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub best: ScoredSolution,
    pub score_history: Vec<SolutionScore>,
    pub iterations_run: u32,
    pub iterations_to_synthesis: Option<u32>,
    pub iterations_to_deployment: Option<u32>,
    pub trace: Vec<AgentCall>,
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("intent {0} is not in the catalog")]
    UnknownIntent(IntentId),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Retrieval(#[from] crate::retrieval::RetrievalError),
}

fn retrieval_query(intent: &Intent) -> String {
    let mut q = intent.text.clone();
    for x in &intent.required_xapps {
        q.push(' ');
        q.push_str(x.as_str());
    }
    for c in &intent.required_capabilities {
        q.push(' ');
        q.push_str(c);
    }
    q
}

/// Runs the iteration loop until the batch is both synthesized and
/// deployed, or the iteration cap is hit. Clears `memory` first.
pub fn orchestrate_batch(
    batch: &Batch<'_>,
    config: &RunConfig,
    transport: &mut dyn ChatTransport,
    memory: &mut MemoryKernel,
) -> Result<BatchOutcome, OrchestratorError> {
    memory.clear();
    let ric = batch.ric;
    let mut intents: Vec<&Intent> = Vec::new();
    for id in &batch.intents {
        intents.push(ric.intent(*id).ok_or(OrchestratorError::UnknownIntent(*id))?);
    }
    intents.sort_by_key(|i| i.id);
    let xapps: Vec<_> = ric.registry.profiles().cloned().collect();
    let deployed_docs: Vec<PolicyDoc> = batch.pre.active.iter().map(PolicyDoc::from).collect();
    let mode = config.mode;

    let mut best = ScoredSolution::empty();
    let mut out = BatchOutcome {
        best: ScoredSolution::empty(),
        score_history: Vec::new(),
        iterations_run: 0,
        iterations_to_synthesis: None,
        iterations_to_deployment: None,
        trace: Vec::new(),
    };

    for iteration in 1..=config.max_iterations {
        let mut proposals: BTreeMap<IntentId, Pipeline> = BTreeMap::new();
        for intent in &intents {
            let chunks = batch.store.query(&retrieval_query(intent), iteration as usize, batch.embedder)?;
            let mut base = PromptContext::new(AgentRole::Reasoning, (*intent).clone(), iteration);
            base.xapps = xapps.clone();
            base.deployed = deployed_docs.clone();
            base.candidates = best
                .proposals
                .iter()
                .filter(|(id, _)| **id != intent.id)
                .map(|(_, p)| PolicyDoc::from(p))
                .collect();
            base.retrieved = chunks
                .into_iter()
                .map(|c| RetrievedChunk { doc_id: c.doc_id.clone(), span: c.span, text: c.text.clone() })
                .collect();
            let mut env = AgentEnv { ric, iteration, trace: &mut out.trace };

            let policy = if mode == Mode::SA {
                run_single_agent(transport, &mut env, base.clone())
            } else {
                let perception = if mode.uses_perception() {
                    match run_perception(transport, &mut env, base.clone()) {
                        Ok(p) => Some(p),
                        Err(_) => continue,
                    }
                } else {
                    None
                };
                let analogues = if mode.uses_memory() {
                    memory
                        .retrieve_analogues(intent, config.analogues, batch.embedder)?
                        .into_iter()
                        .map(|(i, p)| Analogue { intent_id: i.id, intent_text: i.text, policy: PolicyDoc::from(&p) })
                        .collect()
                } else {
                    Vec::new()
                };
                run_reasoning(transport, &mut env, base.clone(), perception, analogues)
            };
            let Ok(mut policy) = policy else { continue };
            if mode.uses_refinement() {
                let summary = memory.failure_summary(intent);
                match run_refinement(transport, &mut env, policy, summary, base) {
                    Ok(r) => policy = r.revised_policy,
                    Err(_) => continue,
                }
            }
            proposals.insert(intent.id, policy.to_pipeline());
        }

        let valid: BTreeMap<IntentId, Pipeline> = proposals
            .iter()
            .filter(|(_, p)| validate_pipeline_structure(p, &ric.registry).is_ok())
            .map(|(id, p)| (*id, p.clone()))
            .collect();
        let graph: ConflictGraph = build_conflict_graph(valid.values(), batch.pre, ric);
        let deployed = if mode == Mode::FCFS {
            select_fcfs(&valid, batch.pre, ric)
        } else {
            select_exhaustive(&valid, batch.pre, ric, batch.truths)?
        };
        let score = score_solution(&proposals, &deployed, batch.truths, graph.total_records());

        for (id, p) in &proposals {
            let intent = ric.intent(*id).expect("batch intent");
            let correct = batch.truths.get(id).is_some_and(|t| pipelines_equal(p, t));
            let outcome = OutcomeRecord {
                deployed: deployed.contains(id),
                correct,
                conflicts: graph.records_involving(*id),
                iteration,
                score,
            };
            memory.record(intent.clone(), p.clone(), outcome);
        }

        let all_correct = intents
            .iter()
            .all(|i| matches!((proposals.get(&i.id), batch.truths.get(&i.id)), (Some(p), Some(t)) if pipelines_equal(p, t)));
        if all_correct && out.iterations_to_synthesis.is_none() {
            out.iterations_to_synthesis = Some(iteration);
        }
        if score.correct_deployed as usize == batch.objective && out.iterations_to_deployment.is_none() {
            out.iterations_to_deployment = Some(iteration);
        }

        best = enforce_monotonicity(best, ScoredSolution { proposals, deployed, score });
        out.score_history.push(best.score);
        out.iterations_run = iteration;
        if out.iterations_to_synthesis.is_some() && out.iterations_to_deployment.is_some() {
            break;
        }
    }
    out.best = best;
    Ok(out)
}
