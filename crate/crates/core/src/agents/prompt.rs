//! Prompt templates and the structured context block embedded in them.

use serde::{Deserialize, Serialize};

use super::schema::{PerceptionDoc, PolicyDoc, PERCEPTION_SCHEMA, POLICY_SCHEMA, REFINEMENT_SCHEMA};
use super::transport::ChatMessage;
use crate::model::{Intent, XAppProfile};

const PERCEPTION_TEMPLATE: &str = include_str!("../../templates/perception.md");
const REASONING_TEMPLATE: &str = include_str!("../../templates/reasoning.md");
const REFINEMENT_TEMPLATE: &str = include_str!("../../templates/refinement.md");
const SINGLE_AGENT_TEMPLATE: &str = include_str!("../../templates/single_agent.md");

const CONTEXT_OPEN: &str = "<context>";
const CONTEXT_CLOSE: &str = "</context>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Perception,
    Reasoning,
    Refinement,
    SingleAgent,
}

impl AgentRole {
    fn template(self) -> &'static str {
        match self {
            AgentRole::Perception => PERCEPTION_TEMPLATE,
            AgentRole::Reasoning => REASONING_TEMPLATE,
            AgentRole::Refinement => REFINEMENT_TEMPLATE,
            AgentRole::SingleAgent => SINGLE_AGENT_TEMPLATE,
        }
    }

    fn schema(self) -> &'static str {
        match self {
            AgentRole::Perception => PERCEPTION_SCHEMA,
            AgentRole::Reasoning | AgentRole::SingleAgent => POLICY_SCHEMA,
            AgentRole::Refinement => REFINEMENT_SCHEMA,
        }
    }

    /// Version tag from the template's first line, e.g. `perception v1`.
    pub fn template_version(self) -> &'static str {
        self.template()
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("<!-- template: "))
            .and_then(|l| l.strip_suffix(" -->"))
            .unwrap_or("unversioned")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analogue {
    pub intent_id: crate::model::IntentId,
    pub intent_text: String,
    pub policy: PolicyDoc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub doc_id: String,
    pub span: (usize, usize),
    pub text: String,
}

/// Machine-readable context handed to an agent inside its user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub agent: AgentRole,
    pub intent: Intent,
    pub iteration: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub xapps: Vec<XAppProfile>,
    /// Already deployed rApps.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deployed: Vec<PolicyDoc>,
    /// Current proposals for the other intents of the batch.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<PolicyDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perception: Option<PerceptionDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub analogues: Vec<Analogue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieved: Vec<RetrievedChunk>,
    /// Policy under review (refinement only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<PolicyDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub structural_violations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_summary: Option<String>,
}

impl PromptContext {
    pub fn new(agent: AgentRole, intent: Intent, iteration: u32) -> Self {
        PromptContext {
            agent,
            intent,
            iteration,
            xapps: Vec::new(),
            deployed: Vec::new(),
            candidates: Vec::new(),
            perception: None,
            analogues: Vec::new(),
            retrieved: Vec::new(),
            candidate: None,
            structural_violations: Vec::new(),
            failure_summary: None,
        }
    }
}

/// Renders the role's template into a system and a user message.
pub fn render(ctx: &PromptContext) -> [ChatMessage; 2] {
    let template = ctx.agent.template();
    let (system, user) = template
        .split_once("===user===")
        .expect("template has a user section");
    let system = system
        .split_once("===system===")
        .map_or(system, |(_, s)| s)
        .trim()
        .replace("{{SCHEMA}}", ctx.agent.schema().trim());
    let context = serde_json::to_string_pretty(ctx).expect("context serializes");
    let summary = ctx.failure_summary.as_deref().unwrap_or("");
    let user = user
        .trim()
        .replace("{{INTENT_ID}}", &ctx.intent.id.to_string())
        .replace("{{INTENT_TEXT}}", &ctx.intent.text)
        .replace("{{ITERATION}}", &ctx.iteration.to_string())
        .replace("{{FAILURE_SUMMARY}}", summary.trim_end())
        .replace("{{CONTEXT}}", &context);
    [ChatMessage::system(system), ChatMessage::user(user)]
}

/// Follow-up message asking for a corrected document.
pub fn repair_message(errors: &[String]) -> ChatMessage {
    let mut s = String::from("Your previous reply failed validation:\n");
    for e in errors {
        s.push_str("- ");
        s.push_str(e);
        s.push('\n');
    }
    s.push_str("Return only the corrected JSON document.");
    ChatMessage::user(s)
}

/// Recovers the context block from the first user message of a request.
pub fn extract_context(messages: &[ChatMessage]) -> Option<PromptContext> {
    let user = messages.iter().find(|m| m.role == "user")?;
    let start = user.content.find(CONTEXT_OPEN)? + CONTEXT_OPEN.len();
    let end = user.content.rfind(CONTEXT_CLOSE)?;
    serde_json::from_str(user.content.get(start..end)?).ok()
}
