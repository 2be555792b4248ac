//! Open RAN entities shared by every other module: xApp profiles, intents,
//! rApp pipelines and the structural rules a pipeline must satisfy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Symbolic xApp identifier, e.g. `TrafficSteeringA`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct XAppId(pub String);

impl XAppId {
    pub fn new(id: impl Into<String>) -> Self {
        XAppId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for XAppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for XAppId {
    fn from(s: &str) -> Self {
        XAppId(s.to_string())
    }
}

/// Intent identifier. Fixture intents are numbered 1..=7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntentId(pub u32);

impl fmt::Display for IntentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Pipeline stage class. Edges may only go forward: sense < decide < act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sense,
    Decide,
    Act,
}

/// Ternary push on a KPI: -1, 0 or +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Direction {
    Decrease,
    Neutral,
    Increase,
}

impl Direction {
    pub fn sign(self) -> i8 {
        match self {
            Direction::Decrease => -1,
            Direction::Neutral => 0,
            Direction::Increase => 1,
        }
    }

    /// True when both directions are nonzero and point opposite ways.
    pub fn opposes(self, other: Direction) -> bool {
        self.sign() * other.sign() == -1
    }
}

impl TryFrom<i8> for Direction {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Direction::Decrease),
            0 => Ok(Direction::Neutral),
            1 => Ok(Direction::Increase),
            other => Err(format!("direction must be -1, 0 or 1, got {other}")),
        }
    }
}

impl From<Direction> for i8 {
    fn from(d: Direction) -> i8 {
        d.sign()
    }
}

/// Registry entry for one xApp in the Near-RT RIC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XAppProfile {
    pub id: XAppId,
    pub name: String,
    pub vendor: String,
    pub dialect: String,
    pub capabilities: BTreeSet<String>,
    pub controlled_params: BTreeSet<String>,
    pub kpi_effects: BTreeMap<String, Direction>,
    pub stage: Stage,
    pub interfaces: BTreeSet<String>,
}

impl XAppProfile {
    /// KPIs this xApp pushes in a nonzero direction.
    pub fn affected_kpis(&self) -> impl Iterator<Item = &str> {
        self.kpi_effects
            .iter()
            .filter(|(_, d)| **d != Direction::Neutral)
            .map(|(k, _)| k.as_str())
    }

    pub fn effect_on(&self, kpi: &str) -> Direction {
        self.kpi_effects.get(kpi).copied().unwrap_or(Direction::Neutral)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intent {
    pub id: IntentId,
    pub text: String,
    pub target_kpis: BTreeMap<String, Direction>,
    pub required_capabilities: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub required_xapps: BTreeSet<XAppId>,
}

impl Intent {
    pub fn target_on(&self, kpi: &str) -> Direction {
        self.target_kpis.get(kpi).copied().unwrap_or(Direction::Neutral)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.target_kpis.is_empty() || self.target_kpis.values().any(|d| *d == Direction::Neutral) {
            return Err(ModelError::InvalidIntent {
                id: self.id,
                reason: "target_kpis must be nonempty with directions in {-1, +1}".into(),
            });
        }
        if self.required_capabilities.is_empty() {
            return Err(ModelError::InvalidIntent {
                id: self.id,
                reason: "required_capabilities must be nonempty".into(),
            });
        }
        Ok(())
    }
}

/// Symbolic per-xApp configuration: parameter id to setting.
pub type Directive = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineNode {
    pub xapp_id: XAppId,
    #[serde(default)]
    pub directive: Directive,
}

impl PipelineNode {
    pub fn new(xapp_id: impl Into<XAppId>, directive: Directive) -> Self {
        PipelineNode { xapp_id: xapp_id.into(), directive }
    }
}

impl From<String> for XAppId {
    fn from(s: String) -> Self {
        XAppId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

/// One activation predicate, e.g. `cell_load < 0.3`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionPredicate {
    pub variable: String,
    pub op: Comparator,
    pub value: String,
}

/// Deployment conditions attached to an rApp policy. All predicates must
/// hold for activation; an empty list means unconditional activation.
/// Checked for shape only, never evaluated.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentConditions {
    #[serde(default)]
    pub predicates: Vec<ConditionPredicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl DeploymentConditions {
    pub fn validate(&self) -> Result<(), String> {
        for (i, p) in self.predicates.iter().enumerate() {
            if p.variable.trim().is_empty() {
                return Err(format!("predicates[{i}].variable is empty"));
            }
            if p.value.trim().is_empty() {
                return Err(format!("predicates[{i}].value is empty"));
            }
        }
        Ok(())
    }
}

/// An rApp policy: a DAG of configured xApps plus deployment conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    pub intent_id: IntentId,
    pub nodes: Vec<PipelineNode>,
    pub edges: BTreeSet<(XAppId, XAppId)>,
    #[serde(default)]
    pub deployment_conditions: DeploymentConditions,
}

impl Pipeline {
    /// Builds a chain pipeline following `nodes` in order.
    pub fn chain(intent_id: IntentId, nodes: Vec<PipelineNode>) -> Self {
        let edges = nodes
            .windows(2)
            .map(|w| (w[0].xapp_id.clone(), w[1].xapp_id.clone()))
            .collect();
        Pipeline { intent_id, nodes, edges, deployment_conditions: DeploymentConditions::default() }
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &XAppId> {
        self.nodes.iter().map(|n| &n.xapp_id)
    }

    pub fn contains(&self, id: &XAppId) -> bool {
        self.nodes.iter().any(|n| &n.xapp_id == id)
    }

    /// Directive of the first node carrying `id`.
    pub fn directive_of(&self, id: &XAppId) -> Option<&Directive> {
        self.nodes.iter().find(|n| &n.xapp_id == id).map(|n| &n.directive)
    }

    /// True if a directed path leads from `from` to `to`.
    pub fn reaches(&self, from: &XAppId, to: &XAppId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(cur) = stack.pop() {
            if !seen.insert(cur) {
                continue;
            }
            for (a, b) in &self.edges {
                if a == cur {
                    if b == to {
                        return true;
                    }
                    stack.push(b);
                }
            }
        }
        false
    }
}

/// The xApp pool registered in the Near-RT RIC plus its KPI catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    profiles: BTreeMap<XAppId, XAppProfile>,
    kpis: BTreeSet<String>,
}

impl Registry {
    /// Registry whose KPI catalog is the union of all declared effects.
    pub fn new(profiles: Vec<XAppProfile>) -> Result<Self, ModelError> {
        let kpis = profiles
            .iter()
            .flat_map(|p| p.kpi_effects.keys().cloned())
            .collect();
        Self::with_catalog(profiles, kpis)
    }

    pub fn with_catalog(profiles: Vec<XAppProfile>, kpis: BTreeSet<String>) -> Result<Self, ModelError> {
        if profiles.is_empty() {
            return Err(ModelError::EmptyRegistry);
        }
        let mut map = BTreeMap::new();
        for p in profiles {
            if p.capabilities.is_empty() {
                return Err(ModelError::InvalidProfile {
                    id: p.id.clone(),
                    reason: "capabilities must be nonempty".into(),
                });
            }
            if let Some(k) = p.kpi_effects.keys().find(|k| !kpis.contains(*k)) {
                return Err(ModelError::InvalidProfile {
                    id: p.id.clone(),
                    reason: format!("kpi `{k}` is not in the KPI catalog"),
                });
            }
            let id = p.id.clone();
            if map.insert(id.clone(), p).is_some() {
                return Err(ModelError::DuplicateXApp(id));
            }
        }
        Ok(Registry { profiles: map, kpis })
    }

    pub fn get(&self, id: &XAppId) -> Option<&XAppProfile> {
        self.profiles.get(id)
    }

    pub fn contains(&self, id: &XAppId) -> bool {
        self.profiles.contains_key(id)
    }

    /// Profiles in ascending id order.
    pub fn profiles(&self) -> impl Iterator<Item = &XAppProfile> {
        self.profiles.values()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn kpi_catalog(&self) -> &BTreeSet<String> {
        &self.kpis
    }
}

/// The set of currently active rApp pipelines.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentState {
    pub active: Vec<Pipeline>,
}

impl DeploymentState {
    pub fn new(active: Vec<Pipeline>, registry: &Registry) -> Result<Self, ModelError> {
        for p in &active {
            if let Err(v) = validate_pipeline_structure(p, registry) {
                return Err(ModelError::InvalidPipeline { intent: p.intent_id, violations: v });
            }
        }
        Ok(DeploymentState { active })
    }

    pub fn empty() -> Self {
        DeploymentState::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    EmptyNodeSet,
    UnknownXApp { xapp: XAppId },
    DuplicateNode { xapp: XAppId },
    DanglingEdge { from: XAppId, to: XAppId },
    Cycle { members: Vec<XAppId> },
    StageOrder { from: XAppId, to: XAppId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyNodeSet => write!(f, "pipeline has no nodes"),
            Violation::UnknownXApp { xapp } => write!(f, "unknown xApp `{xapp}`"),
            Violation::DuplicateNode { xapp } => write!(f, "xApp `{xapp}` appears more than once"),
            Violation::DanglingEdge { from, to } => {
                write!(f, "edge {from} -> {to} references a node outside the pipeline")
            }
            Violation::Cycle { members } => {
                let names: Vec<_> = members.iter().map(XAppId::as_str).collect();
                write!(f, "cycle among {}", names.join(", "))
            }
            Violation::StageOrder { from, to } => {
                write!(f, "edge {from} -> {to} runs against stage order")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("duplicate xApp id `{0}` in registry")]
    DuplicateXApp(XAppId),
    #[error("invalid xApp profile `{id}`: {reason}")]
    InvalidProfile { id: XAppId, reason: String },
    #[error("invalid intent {id}: {reason}")]
    InvalidIntent { id: IntentId, reason: String },
    #[error("pipeline for intent {intent} is structurally invalid: {violations:?}")]
    InvalidPipeline { intent: IntentId, violations: Vec<Violation> },
    #[error("pipeline has no nodes")]
    EmptyPipeline,
    #[error("pipeline edges contain a cycle")]
    Cyclic,
    #[error("edge {0} -> {1} references a node outside the pipeline")]
    DanglingEdge(XAppId, XAppId),
}

/// Checks every structural rule and reports all violations at once.
pub fn validate_pipeline_structure(p: &Pipeline, registry: &Registry) -> Result<(), Vec<Violation>> {
    let mut out = BTreeSet::new();
    if p.nodes.is_empty() {
        out.insert(Violation::EmptyNodeSet);
    }
    let mut ids = BTreeSet::new();
    for n in &p.nodes {
        if !registry.contains(&n.xapp_id) {
            out.insert(Violation::UnknownXApp { xapp: n.xapp_id.clone() });
        }
        if !ids.insert(&n.xapp_id) {
            out.insert(Violation::DuplicateNode { xapp: n.xapp_id.clone() });
        }
    }
    for (a, b) in &p.edges {
        if !ids.contains(a) || !ids.contains(b) {
            out.insert(Violation::DanglingEdge { from: a.clone(), to: b.clone() });
            continue;
        }
        if let (Some(pa), Some(pb)) = (registry.get(a), registry.get(b)) {
            if pa.stage > pb.stage {
                out.insert(Violation::StageOrder { from: a.clone(), to: b.clone() });
            }
        }
    }
    if let Err(members) = kahn(&ids, &p.edges) {
        out.insert(Violation::Cycle { members });
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out.into_iter().collect())
    }
}

/// Kahn's algorithm over the edges whose endpoints are both in `ids`.
/// Ready nodes are released in ascending id order. On a cycle, returns the
/// nodes that could not be ordered.
fn kahn(ids: &BTreeSet<&XAppId>, edges: &BTreeSet<(XAppId, XAppId)>) -> Result<Vec<XAppId>, Vec<XAppId>> {
    let mut indeg: BTreeMap<&XAppId, usize> = ids.iter().map(|id| (*id, 0)).collect();
    let inner: Vec<_> = edges
        .iter()
        .filter(|(a, b)| ids.contains(a) && ids.contains(b))
        .collect();
    for (_, b) in &inner {
        *indeg.get_mut(b).expect("endpoint present") += 1;
    }
    let mut ready: BTreeSet<&XAppId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
    let mut order = Vec::with_capacity(ids.len());
    while let Some(next) = ready.pop_first() {
        order.push(next.clone());
        for (a, b) in &inner {
            if a == next {
                let d = indeg.get_mut(b).expect("endpoint present");
                *d -= 1;
                if *d == 0 {
                    ready.insert(b);
                }
            }
        }
    }
    if order.len() == ids.len() {
        Ok(order)
    } else {
        let placed: BTreeSet<_> = order.iter().collect();
        Err(ids.iter().filter(|id| !placed.contains(**id)).map(|id| (*id).clone()).collect())
    }
}

/// Topological order of the pipeline's nodes, ties broken by ascending id.
pub fn topological_order(p: &Pipeline) -> Result<Vec<XAppId>, ModelError> {
    if p.nodes.is_empty() {
        return Err(ModelError::EmptyPipeline);
    }
    let ids: BTreeSet<&XAppId> = p.node_ids().collect();
    if let Some((a, b)) = p.edges.iter().find(|(a, b)| !ids.contains(a) || !ids.contains(b)) {
        return Err(ModelError::DanglingEdge(a.clone(), b.clone()));
    }
    kahn(&ids, &p.edges).map_err(|_| ModelError::Cyclic)
}

fn normalized(d: &Directive) -> BTreeMap<&str, &str> {
    d.iter().map(|(k, v)| (k.trim(), v.trim())).collect()
}

pub fn directives_equal(a: &Directive, b: &Directive) -> bool {
    normalized(a) == normalized(b)
}

/// Ground-truth equality: same nodes, same normalized directives, same
/// edges. Deployment conditions are ignored.
pub fn pipelines_equal(p: &Pipeline, q: &Pipeline) -> bool {
    if p.nodes.len() != q.nodes.len() || p.edges != q.edges {
        return false;
    }
    let pm: BTreeMap<&XAppId, _> = p.nodes.iter().map(|n| (&n.xapp_id, normalized(&n.directive))).collect();
    let qm: BTreeMap<&XAppId, _> = q.nodes.iter().map(|n| (&n.xapp_id, normalized(&n.directive))).collect();
    pm.len() == p.nodes.len() && pm == qm
}
