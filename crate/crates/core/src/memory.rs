//! Episodic memory of (intent, policy, outcome) tuples.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::conflict::{ConflictKind, ConflictRecord, INTENT_LEVEL};
use crate::model::{Intent, Pipeline};
use crate::oracle::SolutionScore;
use crate::retrieval::{cosine, Embedder, RetrievalError};

/// What the harness observed after trying a policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub deployed: bool,
    pub correct: bool,
    pub conflicts: Vec<ConflictRecord>,
    pub iteration: u32,
    pub score: SolutionScore,
}

impl OutcomeRecord {
    pub fn failed(&self) -> bool {
        !(self.correct && self.deployed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub intent: Intent,
    pub pipeline: Pipeline,
    pub outcome: OutcomeRecord,
    pub sequence_no: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryKernel {
    entries: Vec<MemoryEntry>,
}

pub const NO_PRIOR_FAILURES: &str = "No prior failures recorded for this intent.";

impl MemoryKernel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    /// Appends a tuple and returns its sequence number.
    pub fn record(&mut self, intent: Intent, pipeline: Pipeline, outcome: OutcomeRecord) -> u64 {
        let sequence_no = self.entries.last().map_or(0, |e| e.sequence_no + 1);
        self.entries.push(MemoryEntry { intent, pipeline, outcome, sequence_no });
        sequence_no
    }

    /// Up to `k` successful (intent, policy) pairs most similar to `intent`.
    /// Same-intent successes come first, then cosine similarity of the
    /// intent texts, then recency.
    pub fn retrieve_analogues(&self, intent: &Intent, k: usize, embedder: &dyn Embedder) -> Result<Vec<(Intent, Pipeline)>, RetrievalError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = embedder.embed(&intent.text)?;
        let mut sims: BTreeMap<&str, f64> = BTreeMap::new();
        let mut ranked = Vec::new();
        for e in self.entries.iter().filter(|e| e.outcome.correct) {
            let sim = match sims.get(e.intent.text.as_str()) {
                Some(s) => *s,
                None => {
                    let s = cosine(&q, &embedder.embed(&e.intent.text)?)?;
                    sims.insert(&e.intent.text, s);
                    s
                }
            };
            ranked.push((e.intent.id == intent.id, sim, e.sequence_no, e));
        }
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| b.1.total_cmp(&a.1)).then_with(|| b.2.cmp(&a.2)));
        Ok(ranked
            .into_iter()
            .take(k)
            .map(|(_, _, _, e)| (e.intent.clone(), e.pipeline.clone()))
            .collect())
    }

    /// Templated digest of this intent's failed attempts, grouped by
    /// conflict kind and offending xApp, most frequent first.
    pub fn failure_summary(&self, intent: &Intent) -> String {
        let failed: Vec<&MemoryEntry> = self
            .entries
            .iter()
            .filter(|e| e.intent.id == intent.id && e.outcome.failed())
            .collect();
        if failed.is_empty() {
            return NO_PRIOR_FAILURES.to_string();
        }
        let mut patterns: BTreeMap<(ConflictKind, String), usize> = BTreeMap::new();
        let mut clean_failures = 0;
        for e in &failed {
            if e.outcome.conflicts.is_empty() {
                clean_failures += 1;
                continue;
            }
            let mut hit: Vec<(ConflictKind, String)> = e
                .outcome
                .conflicts
                .iter()
                .flat_map(|r| offenders(r, intent).into_iter().map(move |x| (r.kind, x)))
                .collect();
            hit.sort();
            hit.dedup();
            for key in hit {
                *patterns.entry(key).or_default() += 1;
            }
        }
        let mut ordered: Vec<_> = patterns.into_iter().collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut out = format!("Prior failures for intent {} ({} failed attempts):\n", intent.id, failed.len());
        for ((kind, xapp), n) in ordered {
            out.push_str(&format!("- {kind} on {xapp}: {n}\n"));
        }
        if clean_failures > 0 {
            out.push_str(&format!("- not deployable or incorrect without detected conflicts: {clean_failures}\n"));
        }
        out
    }

    /// Writes one JSON object per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> std::io::Result<Self> {
        let mut entries: Vec<MemoryEntry> = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: MemoryEntry = serde_json::from_str(&line)?;
            if entries.last().is_some_and(|last| last.sequence_no >= e.sequence_no) {
                return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "sequence numbers must increase"));
            }
            entries.push(e);
        }
        Ok(MemoryKernel { entries })
    }
}

/// xApps of `intent`'s own pipeline named in the record; falls back to the
/// other side's xApps when the intent participates only as a whole.
fn offenders(r: &ConflictRecord, intent: &Intent) -> Vec<String> {
    let own: Vec<String> = r
        .participants
        .iter()
        .filter(|p| p.pipeline == intent.id && p.xapp.as_str() != INTENT_LEVEL)
        .map(|p| p.xapp.to_string())
        .collect();
    if !own.is_empty() {
        return own;
    }
    let other: Vec<String> = r
        .participants
        .iter()
        .filter(|p| p.xapp.as_str() != INTENT_LEVEL)
        .map(|p| p.xapp.to_string())
        .collect();
    if other.is_empty() {
        vec![r.subject.clone()]
    } else {
        other
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conflict::Participant;
    use crate::model::{Direction, IntentId, PipelineNode};
    use crate::retrieval::TrigramEmbedder;
    use std::collections::BTreeSet;

    fn intent(id: u32, text: &str) -> Intent {
        Intent {
            id: IntentId(id),
            text: text.into(),
            target_kpis: [("throughput".to_string(), Direction::Increase)].into_iter().collect(),
            required_capabilities: ["c".to_string()].into_iter().collect(),
            required_xapps: BTreeSet::new(),
        }
    }

    fn pipe(id: u32, x: &str) -> Pipeline {
        Pipeline::chain(IntentId(id), vec![PipelineNode::new(x, Default::default())])
    }

    fn outcome(correct: bool, conflicts: Vec<ConflictRecord>) -> OutcomeRecord {
        OutcomeRecord {
            deployed: correct,
            correct,
            conflicts,
            iteration: 1,
            score: SolutionScore { correct_deployed: 0, deployed: 0, neg_conflicts: 0, neg_total_nodes: 0 },
        }
    }

    fn contention(own: u32, other: u32, x: &str) -> ConflictRecord {
        ConflictRecord {
            kind: ConflictKind::ActuatorContention,
            subject: x.into(),
            participants: [Participant::new(IntentId(own), x), Participant::new(IntentId(other), x)].into_iter().collect(),
            explanation: String::new(),
        }
    }

    #[test]
    fn record_appends_without_dedup() {
        let mut m = MemoryKernel::new();
        assert_eq!(m.len(), 0);
        let i = intent(1, "a");
        assert_eq!(m.record(i.clone(), pipe(1, "x"), outcome(true, vec![])), 0);
        assert_eq!(m.record(i, pipe(1, "x"), outcome(true, vec![])), 1);
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn analogues_only_from_successes() {
        let e = TrigramEmbedder::default();
        let mut m = MemoryKernel::new();
        let i = intent(1, "maximise throughput");
        assert!(m.retrieve_analogues(&i, 3, &e).unwrap().is_empty());
        m.record(i.clone(), pipe(1, "bad"), outcome(false, vec![]));
        assert!(m.retrieve_analogues(&i, 3, &e).unwrap().is_empty());
        m.record(i.clone(), pipe(1, "good"), outcome(true, vec![]));
        let got = m.retrieve_analogues(&i, 3, &e).unwrap();
        assert_eq!(got, vec![(i.clone(), pipe(1, "good"))]);
        assert!(m.retrieve_analogues(&i, 0, &e).unwrap().is_empty());
    }

    #[test]
    fn same_intent_outranks_similar_text() {
        let e = TrigramEmbedder::default();
        let mut m = MemoryKernel::new();
        let q = intent(1, "guarantee low latency for factory slice");
        m.record(intent(2, "guarantee low latency for factory slice"), pipe(2, "near"), outcome(true, vec![]));
        m.record(intent(1, "something else entirely"), pipe(1, "own"), outcome(true, vec![]));
        m.record(intent(3, "energy saving at night"), pipe(3, "far"), outcome(true, vec![]));
        let got: Vec<_> = m.retrieve_analogues(&q, 3, &e).unwrap().into_iter().map(|(i, _)| i.id.0).collect();
        assert_eq!(got, vec![1, 2, 3]);
    }

    #[test]
    fn summary_groups_and_filters() {
        let mut m = MemoryKernel::new();
        let i = intent(1, "a");
        assert_eq!(m.failure_summary(&i), NO_PRIOR_FAILURES);
        m.record(intent(2, "b"), pipe(2, "x"), outcome(false, vec![contention(2, 1, "X")]));
        assert_eq!(m.failure_summary(&i), NO_PRIOR_FAILURES);

        let coupling = ConflictRecord {
            kind: ConflictKind::ParameterCoupling,
            subject: "tx_power".into(),
            participants: [Participant::new(IntentId(1), "P"), Participant::new(IntentId(3), "U")].into_iter().collect(),
            explanation: String::new(),
        };
        m.record(i.clone(), pipe(1, "t"), outcome(false, vec![contention(1, 2, "TrafficSteeringA"), coupling]));
        m.record(i.clone(), pipe(1, "t"), outcome(false, vec![contention(1, 2, "TrafficSteeringA")]));
        m.record(i.clone(), pipe(1, "t"), outcome(false, vec![]));
        let s = m.failure_summary(&i);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "Prior failures for intent 1 (3 failed attempts):");
        assert_eq!(lines[1], "- ActuatorContention on TrafficSteeringA: 2");
        assert_eq!(lines[2], "- ParameterCoupling on P: 1");
        assert!(lines[3].ends_with(": 1"));
    }

    #[test]
    fn jsonl_roundtrip_preserves_behaviour() {
        let e = TrigramEmbedder::default();
        let mut m = MemoryKernel::new();
        let i = intent(1, "a");
        m.record(i.clone(), pipe(1, "t"), outcome(false, vec![contention(1, 2, "T")]));
        m.record(i.clone(), pipe(1, "g"), outcome(true, vec![]));
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        let back = MemoryKernel::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.failure_summary(&i), m.failure_summary(&i));
        assert_eq!(back.retrieve_analogues(&i, 2, &e).unwrap(), m.retrieve_analogues(&i, 2, &e).unwrap());
    }
}
