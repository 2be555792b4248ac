//! Deterministic stand-ins for a chat model.
//!
//! [`MockOracle`] answers every agent role with the exact reference answer.
//! [`MockNoisy`] perturbs those answers with a seeded RNG whose state depends
//! only on the seed, an internal call counter and the prompt text.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::prompt::{extract_context, AgentRole, PromptContext};
use super::schema::{Edit, EditKind, PerceptionDoc, PolicyDoc, RefinementDoc};
use super::transport::{ChatMessage, ChatTransport, TransportError};
use crate::conflict::{build_conflict_graph, ConflictKind, ConflictRecord, Participant, RicContext};
use crate::model::{DeploymentState, Intent, IntentId, Pipeline, PipelineNode, Registry, Stage, XAppId};
use crate::oracle::{nominal_directive, stage_sorted_chain, synthesize_ground_truth, DEFAULT_MAX_LEN};
use crate::retrieval::fnv1a;

/// Everything a mock needs to know the right answer.
#[derive(Debug, Clone)]
pub struct MockWorld {
    pub ctx: RicContext,
    pub truths: BTreeMap<IntentId, Pipeline>,
}

impl MockWorld {
    pub fn new(ctx: RicContext, truths: BTreeMap<IntentId, Pipeline>) -> Arc<Self> {
        Arc::new(MockWorld { ctx, truths })
    }

    fn truth(&self, intent: &Intent) -> Result<Pipeline, TransportError> {
        if let Some(p) = self.truths.get(&intent.id) {
            return Ok(p.clone());
        }
        synthesize_ground_truth(intent, &self.ctx, DEFAULT_MAX_LEN).map_err(|e| TransportError::Response(e.to_string()))
    }

    fn perceive(&self, pc: &PromptContext) -> PerceptionDoc {
        let candidates: Vec<Pipeline> = pc.candidates.iter().map(PolicyDoc::to_pipeline).collect();
        let deployed = DeploymentState { active: pc.deployed.iter().map(PolicyDoc::to_pipeline).collect() };
        PerceptionDoc::from_graph(&build_conflict_graph(&candidates, &deployed, &self.ctx))
    }
}

fn context_of(messages: &[ChatMessage]) -> Result<PromptContext, TransportError> {
    extract_context(messages).ok_or_else(|| TransportError::Response("request carries no context block".into()))
}

fn to_json<T: serde::Serialize>(doc: &T) -> String {
    serde_json::to_string(doc).expect("documents serialize")
}

/// Mechanical review fixes, in the order they are attempted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fix {
    Duplicates,
    Superfluous,
    Order,
}

const FIXES: [Fix; 3] = [Fix::Duplicates, Fix::Superfluous, Fix::Order];

/// Applies `fix` to `p`; returns the edit when something changed.
fn apply_fix(fix: Fix, p: &mut Pipeline, intent: &Intent, registry: &Registry) -> Option<Edit> {
    match fix {
        Fix::Duplicates => {
            let before = p.nodes.len();
            let mut seen = std::collections::BTreeSet::new();
            p.nodes.retain(|n| seen.insert(n.xapp_id.clone()));
            (p.nodes.len() < before).then(|| Edit {
                edit_kind: EditKind::RemoveDuplicate,
                rationale: format!("removed {} repeated xApp node(s)", before - p.nodes.len()),
            })
        }
        Fix::Superfluous => {
            let useless: Vec<XAppId> = p
                .nodes
                .iter()
                .filter(|n| {
                    !intent.required_xapps.contains(&n.xapp_id)
                        && registry
                            .get(&n.xapp_id)
                            .is_some_and(|x| x.capabilities.is_disjoint(&intent.required_capabilities))
                })
                .map(|n| n.xapp_id.clone())
                .collect();
            if useless.is_empty() {
                return None;
            }
            for x in &useless {
                let preds: Vec<XAppId> = p.edges.iter().filter(|(_, b)| b == x).map(|(a, _)| a.clone()).collect();
                let succs: Vec<XAppId> = p.edges.iter().filter(|(a, _)| a == x).map(|(_, b)| b.clone()).collect();
                p.edges.retain(|(a, b)| a != x && b != x);
                for a in &preds {
                    for b in &succs {
                        if a != b {
                            p.edges.insert((a.clone(), b.clone()));
                        }
                    }
                }
                p.nodes.retain(|n| &n.xapp_id != x);
            }
            let names: Vec<&str> = useless.iter().map(XAppId::as_str).collect();
            Some(Edit {
                edit_kind: EditKind::DropSuperfluous,
                rationale: format!("{} cover no required capability", names.join(", ")),
            })
        }
        Fix::Order => {
            let stage = |x: &XAppId| registry.get(x).map_or(Stage::Act, |p| p.stage);
            let mut sorted = p.nodes.clone();
            sorted.sort_by(|a, b| (stage(&a.xapp_id), &a.xapp_id).cmp(&(stage(&b.xapp_id), &b.xapp_id)));
            let chained = Pipeline::chain(p.intent_id, sorted);
            if chained.edges == p.edges && chained.nodes == p.nodes {
                return None;
            }
            p.nodes = chained.nodes;
            p.edges = chained.edges;
            Some(Edit {
                edit_kind: EditKind::ReorderStage,
                rationale: "re-chained the xApps in stage order".into(),
            })
        }
    }
}

fn refine(world: &MockWorld, pc: &PromptContext, mut keep: impl FnMut(Fix) -> bool) -> Result<RefinementDoc, TransportError> {
    let input = pc
        .candidate
        .clone()
        .ok_or_else(|| TransportError::Response("refinement request without a candidate".into()))?;
    let mut p = input.to_pipeline();
    let mut edits = Vec::new();
    for fix in FIXES {
        let mut trial = p.clone();
        if let Some(edit) = apply_fix(fix, &mut trial, &pc.intent, &world.ctx.registry) {
            if keep(fix) {
                p = trial;
                edits.push(edit);
            }
        }
    }
    let revised = PolicyDoc::from(&p);
    if revised == input {
        edits.clear();
    }
    Ok(RefinementDoc { revised_policy: revised, edits })
}

/// Answers with the reference output for every role.
#[derive(Debug, Clone)]
pub struct MockOracle {
    world: Arc<MockWorld>,
}

impl MockOracle {
    pub fn new(world: Arc<MockWorld>) -> Self {
        MockOracle { world }
    }
}

impl ChatTransport for MockOracle {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        let pc = context_of(messages)?;
        Ok(match pc.agent {
            AgentRole::Perception => to_json(&self.world.perceive(&pc)),
            AgentRole::Reasoning | AgentRole::SingleAgent => to_json(&PolicyDoc::from(&self.world.truth(&pc.intent)?)),
            AgentRole::Refinement => to_json(&refine(&self.world, &pc, |_| true)?),
        })
    }

    fn descriptor(&self) -> String {
        "mock-oracle".into()
    }
}

/// Tunable error rates of [`MockNoisy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseProfile {
    pub malformed: f64,
    pub reuse_analogue: f64,
    pub directive_slip_with_perception: f64,
    pub directive_slip_blind: f64,
    pub structural_slip: f64,
    pub fix_applied: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile {
            malformed: 0.05,
            reuse_analogue: 0.9,
            directive_slip_with_perception: 0.1,
            directive_slip_blind: 0.5,
            structural_slip: 0.5,
            fix_applied: 0.8,
        }
    }
}

/// Seeded corruption of the oracle answers.
#[derive(Debug, Clone)]
pub struct MockNoisy {
    world: Arc<MockWorld>,
    seed: u64,
    calls: u64,
    pub noise: NoiseProfile,
}

impl MockNoisy {
    pub fn new(world: Arc<MockWorld>, seed: u64) -> Self {
        MockNoisy { world, seed, calls: 0, noise: NoiseProfile::default() }
    }

    fn rng(&self, messages: &[ChatMessage]) -> ChaCha8Rng {
        let prompt = messages.iter().rev().find(|m| m.role == "user").map_or("", |m| m.content.as_str());
        let mut h = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        for v in [self.calls, fnv1a(prompt.as_bytes())] {
            h = (h ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            h ^= h >> 31;
        }
        ChaCha8Rng::seed_from_u64(h)
    }

    fn perceive(&self, pc: &PromptContext, rng: &mut ChaCha8Rng) -> PerceptionDoc {
        let mut records = self.world.perceive(pc).records();
        let pool: Vec<_> = self.world.ctx.registry.profiles().collect();
        let a = rng.random_range(0..pool.len());
        let b = (a + 1 + rng.random_range(0..pool.len() - 1)) % pool.len();
        let subject = pool[a].controlled_params.iter().next().cloned().unwrap_or_else(|| "unknown_param".into());
        records.push(ConflictRecord {
            kind: ConflictKind::ParameterCoupling,
            explanation: format!("{} and {} may both influence {subject}", pool[a].id, pool[b].id),
            subject,
            participants: [Participant::new(pc.intent.id, pool[a].id.clone()), Participant::new(pc.intent.id, pool[b].id.clone())]
                .into_iter()
                .collect(),
        });
        PerceptionDoc::from_records(records, "")
    }

    fn reason(&self, pc: &PromptContext, rng: &mut ChaCha8Rng) -> Result<PolicyDoc, TransportError> {
        if let Some(a) = pc.analogues.iter().find(|a| a.intent_id == pc.intent.id) {
            if rng.random_bool(self.noise.reuse_analogue) {
                return Ok(a.policy.clone());
            }
        }
        let mut p = self.world.truth(&pc.intent)?;
        let slip = if pc.perception.is_some() {
            self.noise.directive_slip_with_perception
        } else {
            self.noise.directive_slip_blind
        };
        if rng.random_bool(slip) {
            let tunable: Vec<usize> = (0..p.nodes.len()).filter(|&i| !p.nodes[i].directive.is_empty()).collect();
            if !tunable.is_empty() {
                let node = &mut p.nodes[tunable[rng.random_range(0..tunable.len())]];
                let keys: Vec<String> = node.directive.keys().cloned().collect();
                let key = &keys[rng.random_range(0..keys.len())];
                let setting = if rng.random_bool(0.5) { "aggressive" } else { "conservative" };
                node.directive.insert(key.clone(), setting.into());
            }
        }
        if rng.random_bool(self.noise.structural_slip) {
            self.corrupt(&mut p, &pc.intent, rng);
        }
        Ok(PolicyDoc::from(&p))
    }

    fn corrupt(&self, p: &mut Pipeline, intent: &Intent, rng: &mut ChaCha8Rng) {
        let mut choice = rng.random_range(0..3);
        let registry = &self.world.ctx.registry;
        if choice == 1 {
            let extras: Vec<_> = registry
                .profiles()
                .filter(|x| !p.contains(&x.id) && x.capabilities.is_disjoint(&intent.required_capabilities))
                .collect();
            if extras.is_empty() {
                choice = 0;
            } else {
                let extra = extras[rng.random_range(0..extras.len())];
                let mut members: Vec<_> = p.node_ids().filter_map(|id| registry.get(id)).collect();
                members.push(extra);
                let rebuilt = stage_sorted_chain(p.intent_id, &members);
                let keep: BTreeMap<XAppId, _> = p.nodes.iter().map(|n| (n.xapp_id.clone(), n.directive.clone())).collect();
                p.nodes = rebuilt
                    .nodes
                    .into_iter()
                    .map(|n| {
                        let d = keep.get(&n.xapp_id).cloned().unwrap_or_else(|| nominal_directive(extra));
                        PipelineNode::new(n.xapp_id, d)
                    })
                    .collect();
                p.edges = rebuilt.edges;
                return;
            }
        }
        if choice == 2 && !p.edges.is_empty() {
            let edges: Vec<_> = p.edges.iter().cloned().collect();
            p.edges.remove(&edges[rng.random_range(0..edges.len())]);
            return;
        }
        let i = rng.random_range(0..p.nodes.len());
        let dup = p.nodes[i].clone();
        p.nodes.insert(i + 1, dup);
    }
}

impl ChatTransport for MockNoisy {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        let mut rng = self.rng(messages);
        self.calls += 1;
        let pc = context_of(messages)?;
        let repair = messages.len() > 2;
        if !repair && rng.random_bool(self.noise.malformed) {
            return Ok("{\"intent_id\": ".into());
        }
        Ok(match pc.agent {
            AgentRole::Perception => to_json(&self.perceive(&pc, &mut rng)),
            AgentRole::Reasoning | AgentRole::SingleAgent => to_json(&self.reason(&pc, &mut rng)?),
            AgentRole::Refinement => {
                let p = self.noise.fix_applied;
                to_json(&refine(&self.world, &pc, |_| rng.random_bool(p))?)
            }
        })
    }

    fn descriptor(&self) -> String {
        format!("mock-noisy:{}", self.seed)
    }
}
