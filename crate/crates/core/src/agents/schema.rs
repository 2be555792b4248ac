//! JSON documents exchanged with the three agents.

use std::collections::BTreeSet;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::conflict::{ConflictGraph, ConflictKind, ConflictRecord, INTENT_LEVEL};
use crate::model::{DeploymentConditions, Directive, IntentId, Pipeline, PipelineNode, Registry, XAppId};

pub const PERCEPTION_SCHEMA: &str = include_str!("../../schemas/perception.schema.json");
pub const POLICY_SCHEMA: &str = include_str!("../../schemas/policy.schema.json");
pub const REFINEMENT_SCHEMA: &str = include_str!("../../schemas/refinement.schema.json");

/// Conflict records grouped by class. This is the single conflict-report
/// format for both machine detection and agent output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConflictGroups {
    #[serde(default)]
    pub actuator: Vec<ConflictRecord>,
    #[serde(default)]
    pub parameter: Vec<ConflictRecord>,
    #[serde(default)]
    pub objective: Vec<ConflictRecord>,
    #[serde(default)]
    pub vendor: Vec<ConflictRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionDoc {
    pub conflicts: ConflictGroups,
    #[serde(default)]
    pub notes: String,
}

impl PerceptionDoc {
    pub fn from_records(records: impl IntoIterator<Item = ConflictRecord>, notes: impl Into<String>) -> Self {
        let mut g = ConflictGroups::default();
        for r in records {
            match r.kind {
                ConflictKind::ActuatorContention => g.actuator.push(r),
                ConflictKind::ParameterCoupling => g.parameter.push(r),
                ConflictKind::ObjectiveInterference => g.objective.push(r),
                ConflictKind::VendorInterop => g.vendor.push(r),
            }
        }
        for v in [&mut g.actuator, &mut g.parameter, &mut g.objective, &mut g.vendor] {
            v.sort();
        }
        PerceptionDoc { conflicts: g, notes: notes.into() }
    }

    pub fn from_graph(g: &ConflictGraph) -> Self {
        Self::from_records(g.all_records(), "")
    }

    pub fn records(&self) -> Vec<ConflictRecord> {
        let g = &self.conflicts;
        let mut v: Vec<_> = g.actuator.iter().chain(&g.parameter).chain(&g.objective).chain(&g.vendor).cloned().collect();
        v.sort();
        v
    }

    pub fn is_empty(&self) -> bool {
        self.records().is_empty()
    }

    pub fn validate(&self, registry: &Registry) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let g = &self.conflicts;
        for (kind, list) in [
            (ConflictKind::ActuatorContention, &g.actuator),
            (ConflictKind::ParameterCoupling, &g.parameter),
            (ConflictKind::ObjectiveInterference, &g.objective),
            (ConflictKind::VendorInterop, &g.vendor),
        ] {
            for (i, r) in list.iter().enumerate() {
                let at = format!("conflicts.{}[{i}]", kind.report_key());
                if r.kind != kind {
                    errs.push(format!("{at}.kind is {} but the record sits under `{}`", r.kind, kind.report_key()));
                }
                if r.participants.len() < 2 {
                    errs.push(format!("{at}.participants needs at least two entries"));
                }
                if r.subject.trim().is_empty() {
                    errs.push(format!("{at}.subject is empty"));
                }
                for p in &r.participants {
                    if p.xapp.as_str() != INTENT_LEVEL && !registry.contains(&p.xapp) {
                        errs.push(format!("{at}.participants names unknown xApp `{}`", p.xapp));
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectedXApp {
    pub xapp_id: XAppId,
    #[serde(default)]
    pub directive: Directive,
}

/// Wire form of an rApp policy: selected xApps, execution edges and
/// deployment conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDoc {
    pub intent_id: IntentId,
    pub selected_xapps: Vec<SelectedXApp>,
    #[serde(default)]
    pub edges: Vec<(XAppId, XAppId)>,
    pub deployment_conditions: DeploymentConditions,
}

impl From<&Pipeline> for PolicyDoc {
    fn from(p: &Pipeline) -> Self {
        PolicyDoc {
            intent_id: p.intent_id,
            selected_xapps: p
                .nodes
                .iter()
                .map(|n| SelectedXApp { xapp_id: n.xapp_id.clone(), directive: n.directive.clone() })
                .collect(),
            edges: p.edges.iter().cloned().collect(),
            deployment_conditions: p.deployment_conditions.clone(),
        }
    }
}

impl PolicyDoc {
    pub fn to_pipeline(&self) -> Pipeline {
        Pipeline {
            intent_id: self.intent_id,
            nodes: self
                .selected_xapps
                .iter()
                .map(|s| PipelineNode { xapp_id: s.xapp_id.clone(), directive: s.directive.clone() })
                .collect(),
            edges: self.edges.iter().cloned().collect(),
            deployment_conditions: self.deployment_conditions.clone(),
        }
    }

    /// Schema-level checks. Structural problems such as duplicates or cycles
    /// are left for the refinement stage.
    pub fn validate(&self, expected: IntentId, registry: &Registry) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.intent_id != expected {
            errs.push(format!("intent_id is {} but the request was for intent {expected}", self.intent_id));
        }
        if self.selected_xapps.is_empty() {
            errs.push("selected_xapps is empty".to_string());
        }
        let mut unknown = BTreeSet::new();
        for s in &self.selected_xapps {
            if !registry.contains(&s.xapp_id) {
                unknown.insert(s.xapp_id.to_string());
            }
        }
        for (a, b) in &self.edges {
            for x in [a, b] {
                if !registry.contains(x) {
                    unknown.insert(x.to_string());
                }
            }
        }
        for u in unknown {
            errs.push(format!("unknown xApp id `{u}`"));
        }
        if let Err(e) = self.deployment_conditions.validate() {
            errs.push(format!("deployment_conditions: {e}"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    RemoveDuplicate,
    DropSuperfluous,
    ReorderStage,
    ReplaceXapp,
    AdjustConditions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edit {
    pub edit_kind: EditKind,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementDoc {
    pub revised_policy: PolicyDoc,
    #[serde(default)]
    pub edits: Vec<Edit>,
}

impl RefinementDoc {
    pub fn validate(&self, input: &PolicyDoc, registry: &Registry) -> Result<(), Vec<String>> {
        let mut errs = self.revised_policy.validate(input.intent_id, registry).err().unwrap_or_default();
        let changed = self.revised_policy != *input;
        if changed && self.edits.is_empty() {
            errs.push("revised_policy differs from the candidate but no edits are listed".to_string());
        }
        if !changed && !self.edits.is_empty() {
            errs.push("edits are listed but revised_policy is unchanged".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// Parses a model reply, tolerating a surrounding Markdown code fence.
pub fn parse_reply<T: DeserializeOwned>(text: &str) -> Result<T, Vec<String>> {
    let t = text.trim();
    let body = t
        .strip_prefix("```json")
        .or_else(|| t.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(t);
    serde_json::from_str(body.trim()).map_err(|e| vec![format!("invalid JSON: {e}")])
}
