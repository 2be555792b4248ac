//! Four-class conflict taxonomy and the deployment validity predicate.
//!
//! Detectors are pure functions over pipelines plus the registry, intents and
//! vendor compatibility matrix bundled in a [`RicContext`]. Every returned
//! record list is sorted canonically (kind, then subject, then participants)
//! so results are byte-identical regardless of argument or evaluation order.
//!
//! A pipeline is referenced by the id of the intent it serves; pre-deployed
//! rApps carry their originating intent.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{directives_equal, DeploymentState, Intent, IntentId, Pipeline, Registry, XAppId, XAppProfile};

/// Participant xApp id used when a conflict involves an rApp's intent as a
/// whole rather than one of its xApps.
pub const INTENT_LEVEL: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConflictKind {
    ActuatorContention,
    ParameterCoupling,
    ObjectiveInterference,
    VendorInterop,
}

impl ConflictKind {
    pub const ALL: [ConflictKind; 4] = [
        ConflictKind::ActuatorContention,
        ConflictKind::ParameterCoupling,
        ConflictKind::ObjectiveInterference,
        ConflictKind::VendorInterop,
    ];

    /// Group key used by the conflict-report schema.
    pub fn report_key(self) -> &'static str {
        match self {
            ConflictKind::ActuatorContention => "actuator",
            ConflictKind::ParameterCoupling => "parameter",
            ConflictKind::ObjectiveInterference => "objective",
            ConflictKind::VendorInterop => "vendor",
        }
    }
}

impl fmt::Display for ConflictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConflictKind::ActuatorContention => "ActuatorContention",
            ConflictKind::ParameterCoupling => "ParameterCoupling",
            ConflictKind::ObjectiveInterference => "ObjectiveInterference",
            ConflictKind::VendorInterop => "VendorInterop",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Participant {
    pub pipeline: IntentId,
    pub xapp: XAppId,
}

impl Participant {
    pub fn new(pipeline: IntentId, xapp: impl Into<XAppId>) -> Self {
        Participant { pipeline, xapp: xapp.into() }
    }

    pub fn intent_level(pipeline: IntentId) -> Self {
        Participant { pipeline, xapp: XAppId::new(INTENT_LEVEL) }
    }
}

/// A typed conflict finding. `subject` is the contested resource: an xApp id
/// for actuator contention, a parameter id for coupling, a KPI id for
/// objective interference and a `dialect|dialect` pair for vendor conflicts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConflictRecord {
    pub kind: ConflictKind,
    pub subject: String,
    pub participants: BTreeSet<Participant>,
    pub explanation: String,
}

impl ConflictRecord {
    pub fn involves(&self, pipeline: IntentId) -> bool {
        self.participants.iter().any(|p| p.pipeline == pipeline)
    }

    pub fn pipelines(&self) -> BTreeSet<IntentId> {
        self.participants.iter().map(|p| p.pipeline).collect()
    }
}

/// Unordered dialect pairs known not to interoperate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MatrixFile", into = "MatrixFile")]
pub struct VendorCompatibilityMatrix {
    incompatible: BTreeSet<(String, String)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    incompatible: Vec<(String, String)>,
}

impl TryFrom<MatrixFile> for VendorCompatibilityMatrix {
    type Error = String;

    fn try_from(f: MatrixFile) -> Result<Self, String> {
        let mut m = VendorCompatibilityMatrix::default();
        for (a, b) in f.incompatible {
            if a == b {
                return Err(format!("dialect `{a}` cannot be incompatible with itself"));
            }
            m.mark_incompatible(&a, &b);
        }
        Ok(m)
    }
}

impl From<VendorCompatibilityMatrix> for MatrixFile {
    fn from(m: VendorCompatibilityMatrix) -> Self {
        MatrixFile { incompatible: m.incompatible.into_iter().collect() }
    }
}

fn ordered_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl VendorCompatibilityMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Self-pairs are ignored.
    pub fn mark_incompatible(&mut self, a: &str, b: &str) {
        if a != b {
            self.incompatible.insert(ordered_pair(a, b));
        }
    }

    pub fn is_incompatible(&self, a: &str, b: &str) -> bool {
        a != b && self.incompatible.contains(&ordered_pair(a, b))
    }

    pub fn pairs(&self) -> impl Iterator<Item = &(String, String)> {
        self.incompatible.iter()
    }
}

/// Everything the detectors need besides the pipelines themselves.
#[derive(Debug, Clone)]
pub struct RicContext {
    pub registry: Registry,
    pub intents: BTreeMap<IntentId, Intent>,
    pub matrix: VendorCompatibilityMatrix,
}

impl RicContext {
    pub fn new(registry: Registry, intents: impl IntoIterator<Item = Intent>, matrix: VendorCompatibilityMatrix) -> Self {
        RicContext { registry, intents: intents.into_iter().map(|i| (i.id, i)).collect(), matrix }
    }

    pub fn intent(&self, id: IntentId) -> Option<&Intent> {
        self.intents.get(&id)
    }
}

fn profiles<'a>(p: &'a Pipeline, registry: &'a Registry) -> impl Iterator<Item = &'a XAppProfile> + 'a {
    let mut seen = BTreeSet::new();
    p.nodes
        .iter()
        .filter(move |n| seen.insert(&n.xapp_id))
        .filter_map(move |n| registry.get(&n.xapp_id))
}

fn canonical(mut v: Vec<ConflictRecord>) -> Vec<ConflictRecord> {
    v.sort();
    v.dedup();
    v
}

fn ref_pair(a: IntentId, b: IntentId) -> (IntentId, IntentId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Shared xApps configured with differing directives. Identical directives
/// are a legal shared use of one xApp instance.
pub fn detect_actuator_contention(a: &Pipeline, b: &Pipeline) -> Vec<ConflictRecord> {
    let (lo, hi) = ref_pair(a.intent_id, b.intent_id);
    let mut out = Vec::new();
    let shared: BTreeSet<&XAppId> = a.node_ids().filter(|id| b.contains(id)).collect();
    for id in shared {
        let (da, db) = (a.directive_of(id).expect("node present"), b.directive_of(id).expect("node present"));
        if !directives_equal(da, db) {
            out.push(ConflictRecord {
                kind: ConflictKind::ActuatorContention,
                subject: id.to_string(),
                participants: [Participant::new(a.intent_id, id.clone()), Participant::new(b.intent_id, id.clone())]
                    .into_iter()
                    .collect(),
                explanation: format!("rApps {lo} and {hi} configure {id} with different directives"),
            });
        }
    }
    canonical(out)
}

fn writers<'a>(p: &'a Pipeline, registry: &'a Registry) -> BTreeMap<&'a str, BTreeSet<&'a XAppId>> {
    let mut w: BTreeMap<&str, BTreeSet<&XAppId>> = BTreeMap::new();
    for prof in profiles(p, registry) {
        for param in &prof.controlled_params {
            w.entry(param.as_str()).or_default().insert(&prof.id);
        }
    }
    w
}

/// Distinct xApps in two pipelines writing the same network parameter.
pub fn detect_parameter_coupling(a: &Pipeline, b: &Pipeline, registry: &Registry) -> Vec<ConflictRecord> {
    let (lo, hi) = ref_pair(a.intent_id, b.intent_id);
    let wa = writers(a, registry);
    let wb = writers(b, registry);
    let mut out = Vec::new();
    for (param, xa) in &wa {
        let Some(xb) = wb.get(param) else { continue };
        let mut participants = BTreeSet::new();
        for x in xa {
            for y in xb {
                if x != y {
                    participants.insert(Participant::new(a.intent_id, (*x).clone()));
                    participants.insert(Participant::new(b.intent_id, (*y).clone()));
                }
            }
        }
        if !participants.is_empty() {
            out.push(ConflictRecord {
                kind: ConflictKind::ParameterCoupling,
                subject: param.to_string(),
                participants,
                explanation: format!("rApps {lo} and {hi} drive {param} through different xApps"),
            });
        }
    }
    canonical(out)
}

/// Two xApps of one pipeline writing the same parameter without a directed
/// path between them. Ordered writes are sequenced and therefore exempt.
pub fn detect_internal_coupling(p: &Pipeline, registry: &Registry) -> Vec<ConflictRecord> {
    let mut out = Vec::new();
    for (param, ws) in writers(p, registry) {
        let ws: Vec<_> = ws.into_iter().collect();
        for (i, x) in ws.iter().enumerate() {
            for y in &ws[i + 1..] {
                if p.reaches(x, y) || p.reaches(y, x) {
                    continue;
                }
                out.push(ConflictRecord {
                    kind: ConflictKind::ParameterCoupling,
                    subject: param.to_string(),
                    participants: [Participant::new(p.intent_id, (*x).clone()), Participant::new(p.intent_id, (*y).clone())]
                        .into_iter()
                        .collect(),
                    explanation: format!(
                        "rApp {} lets {x} and {y} write {param} without an ordering edge",
                        p.intent_id
                    ),
                });
            }
        }
    }
    canonical(out)
}

/// Opposing KPI targets between the two intents, or an xApp of one pipeline
/// pushing a KPI against the other intent's target. One record per KPI.
pub fn detect_objective_interference(
    a: &Pipeline,
    intent_a: &Intent,
    b: &Pipeline,
    intent_b: &Intent,
    registry: &Registry,
) -> Vec<ConflictRecord> {
    let (lo, hi) = ref_pair(a.intent_id, b.intent_id);
    let pa: Vec<_> = profiles(a, registry).collect();
    let pb: Vec<_> = profiles(b, registry).collect();
    let mut kpis: BTreeSet<&str> = intent_a.target_kpis.keys().map(String::as_str).collect();
    kpis.extend(intent_b.target_kpis.keys().map(String::as_str));

    let mut out = Vec::new();
    for kpi in kpis {
        let (ta, tb) = (intent_a.target_on(kpi), intent_b.target_on(kpi));
        let mut participants = BTreeSet::new();
        let mut reasons = Vec::new();
        if ta.opposes(tb) {
            participants.insert(Participant::intent_level(a.intent_id));
            participants.insert(Participant::intent_level(b.intent_id));
            reasons.push("opposite targets".to_string());
        }
        // (harmed side, its target, the other pipeline's profiles)
        for (harmed, target, others, other_ref) in [(a.intent_id, ta, &pb, b.intent_id), (b.intent_id, tb, &pa, a.intent_id)] {
            for prof in others.iter().filter(|x| x.effect_on(kpi).opposes(target)) {
                participants.insert(Participant::intent_level(harmed));
                participants.insert(Participant::new(other_ref, prof.id.clone()));
                reasons.push(format!("{} works against rApp {harmed}", prof.id));
            }
        }
        if !participants.is_empty() {
            out.push(ConflictRecord {
                kind: ConflictKind::ObjectiveInterference,
                subject: kpi.to_string(),
                participants,
                explanation: format!("rApps {lo} and {hi} interfere on {kpi}: {}", reasons.join("; ")),
            });
        }
    }
    canonical(out)
}

fn in_contact(x: &XAppProfile, y: &XAppProfile) -> bool {
    !x.controlled_params.is_disjoint(&y.controlled_params)
        || x.affected_kpis().any(|k| y.effect_on(k) != crate::model::Direction::Neutral)
}

/// Cross-pipeline vendor conflicts: xApp pairs with incompatible dialects
/// that touch a common parameter or KPI.
pub fn detect_vendor_conflicts(a: &Pipeline, b: &Pipeline, registry: &Registry, m: &VendorCompatibilityMatrix) -> Vec<ConflictRecord> {
    let (lo, hi) = ref_pair(a.intent_id, b.intent_id);
    let mut out = Vec::new();
    for x in profiles(a, registry) {
        for y in profiles(b, registry) {
            if m.is_incompatible(&x.dialect, &y.dialect) && in_contact(x, y) {
                let (d1, d2) = ordered_pair(&x.dialect, &y.dialect);
                out.push(ConflictRecord {
                    kind: ConflictKind::VendorInterop,
                    subject: format!("{d1}|{d2}"),
                    participants: [Participant::new(a.intent_id, x.id.clone()), Participant::new(b.intent_id, y.id.clone())]
                        .into_iter()
                        .collect(),
                    explanation: format!("rApps {lo} and {hi} mix incompatible dialects {d1} and {d2} on shared resources"),
                });
            }
        }
    }
    canonical(out)
}

/// Intra-pipeline vendor conflicts: one record per edge joining
/// incompatible dialects.
pub fn detect_internal_vendor_conflicts(p: &Pipeline, registry: &Registry, m: &VendorCompatibilityMatrix) -> Vec<ConflictRecord> {
    let mut out = Vec::new();
    for (u, v) in &p.edges {
        let (Some(pu), Some(pv)) = (registry.get(u), registry.get(v)) else { continue };
        if m.is_incompatible(&pu.dialect, &pv.dialect) {
            let (d1, d2) = ordered_pair(&pu.dialect, &pv.dialect);
            out.push(ConflictRecord {
                kind: ConflictKind::VendorInterop,
                subject: format!("{d1}|{d2}"),
                participants: [Participant::new(p.intent_id, u.clone()), Participant::new(p.intent_id, v.clone())]
                    .into_iter()
                    .collect(),
                explanation: format!("rApp {} chains {u} into {v} across incompatible dialects", p.intent_id),
            });
        }
    }
    canonical(out)
}

/// Records produced inside a single pipeline.
pub fn internal_conflicts(p: &Pipeline, ctx: &RicContext) -> Vec<ConflictRecord> {
    let mut v = detect_internal_coupling(p, &ctx.registry);
    v.extend(detect_internal_vendor_conflicts(p, &ctx.registry, &ctx.matrix));
    canonical(v)
}

/// All four cross-pipeline detectors for one pair. A missing intent
/// contributes no KPI targets.
pub fn pairwise_conflicts(a: &Pipeline, b: &Pipeline, ctx: &RicContext) -> Vec<ConflictRecord> {
    let reg = &ctx.registry;
    let mut v = detect_actuator_contention(a, b);
    v.extend(detect_parameter_coupling(a, b, reg));
    let blank = |id: IntentId| Intent {
        id,
        text: String::new(),
        target_kpis: BTreeMap::new(),
        required_capabilities: BTreeSet::new(),
        required_xapps: BTreeSet::new(),
    };
    let ia = ctx.intent(a.intent_id).cloned().unwrap_or_else(|| blank(a.intent_id));
    let ib = ctx.intent(b.intent_id).cloned().unwrap_or_else(|| blank(b.intent_id));
    v.extend(detect_objective_interference(a, &ia, b, &ib, reg));
    v.extend(detect_vendor_conflicts(a, b, reg, &ctx.matrix));
    canonical(v)
}

/// Validity of deploying `p` next to `others`: true iff no detector fires.
/// The full record list is returned either way.
pub fn validity<'a>(p: &Pipeline, others: impl IntoIterator<Item = &'a Pipeline>, ctx: &RicContext) -> (bool, Vec<ConflictRecord>) {
    let mut v = internal_conflicts(p, ctx);
    for q in others {
        v.extend(pairwise_conflicts(p, q, ctx));
    }
    let v = canonical(v);
    (v.is_empty(), v)
}

/// Pipelines as vertices, detected conflicts as labeled edges. Records found
/// inside a single pipeline are kept per vertex.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictGraph {
    pub vertices: BTreeSet<IntentId>,
    pub edges: BTreeMap<(IntentId, IntentId), Vec<ConflictRecord>>,
    pub internal: BTreeMap<IntentId, Vec<ConflictRecord>>,
}

impl ConflictGraph {
    pub fn total_records(&self) -> usize {
        self.edges.values().map(Vec::len).sum::<usize>() + self.internal.values().map(Vec::len).sum::<usize>()
    }

    pub fn conflicting(&self, a: IntentId, b: IntentId) -> bool {
        self.edges.contains_key(&ref_pair(a, b))
    }

    /// Every record touching `id`, in canonical order.
    pub fn records_involving(&self, id: IntentId) -> Vec<ConflictRecord> {
        let mut v: Vec<_> = self
            .edges
            .iter()
            .filter(|((a, b), _)| *a == id || *b == id)
            .flat_map(|(_, r)| r.iter().cloned())
            .collect();
        if let Some(r) = self.internal.get(&id) {
            v.extend(r.iter().cloned());
        }
        canonical(v)
    }

    pub fn all_records(&self) -> Vec<ConflictRecord> {
        canonical(
            self.edges
                .values()
                .chain(self.internal.values())
                .flat_map(|r| r.iter().cloned())
                .collect(),
        )
    }
}

/// Runs every detector over each candidate pair, each candidate against each
/// pre-deployed rApp, and inside each candidate.
pub fn build_conflict_graph<'a>(
    candidates: impl IntoIterator<Item = &'a Pipeline>,
    pre: &DeploymentState,
    ctx: &RicContext,
) -> ConflictGraph {
    let mut cands: Vec<&Pipeline> = candidates.into_iter().collect();
    cands.sort_by_key(|p| p.intent_id);
    let mut g = ConflictGraph::default();
    for p in &cands {
        g.vertices.insert(p.intent_id);
        let internal = internal_conflicts(p, ctx);
        if !internal.is_empty() {
            g.internal.insert(p.intent_id, internal);
        }
    }
    for q in &pre.active {
        g.vertices.insert(q.intent_id);
    }
    let mut add = |a: &Pipeline, b: &Pipeline| {
        let recs = pairwise_conflicts(a, b, ctx);
        if !recs.is_empty() {
            let slot = g.edges.entry(ref_pair(a.intent_id, b.intent_id)).or_default();
            slot.extend(recs);
            *slot = canonical(std::mem::take(slot));
        }
    };
    for (i, a) in cands.iter().enumerate() {
        for b in &cands[i + 1..] {
            add(a, b);
        }
        for q in &pre.active {
            add(a, q);
        }
    }
    g
}
