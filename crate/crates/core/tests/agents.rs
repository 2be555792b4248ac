use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use rapp_core::agents::mock::{MockNoisy, MockOracle, MockWorld};
use rapp_core::agents::orchestrator::{run_reasoning, run_refinement, AgentEnv, AgentFailure, Mode};
use rapp_core::agents::prompt::{render, AgentRole, PromptContext};
use rapp_core::agents::schema::{parse_reply, EditKind, PerceptionDoc, PolicyDoc, RefinementDoc};
use rapp_core::agents::transport::{ChatMessage, ChatTransport, TransportError};
use rapp_core::conflict::build_conflict_graph;
use rapp_core::harness::{load_fixtures, prepare, run_scenario, run_scenario_with_transport, Fixtures, RunOptions, TransportKind, DEFAULT_FIXTURES};
use rapp_core::memory::MemoryKernel;
use rapp_core::model::{DeploymentState, IntentId, Pipeline, XAppId};
use rapp_core::oracle::stage_sorted_chain;

fn fixtures() -> Fixtures {
    load_fixtures(Path::new(DEFAULT_FIXTURES)).unwrap()
}

fn truths(f: &Fixtures) -> BTreeMap<IntentId, Pipeline> {
    prepare(f, 4).unwrap().oracle.per_intent_truth
}

fn context(f: &Fixtures, role: AgentRole, intent: u32) -> PromptContext {
    let mut pc = PromptContext::new(role, f.ric.intent(IntentId(intent)).unwrap().clone(), 1);
    pc.xapps = f.ric.registry.profiles().cloned().collect();
    pc
}

fn ask(t: &mut dyn ChatTransport, pc: &PromptContext) -> String {
    t.complete(&render(pc)).unwrap()
}

fn chain(f: &Fixtures, intent: u32, ids: &[&str]) -> Pipeline {
    let profs: Vec<_> = ids.iter().map(|x| f.ric.registry.get(&XAppId::from(*x)).unwrap()).collect();
    stage_sorted_chain(IntentId(intent), &profs)
}

#[test]
fn oracle_perception_is_the_conflict_graph() {
    let f = fixtures();
    let t = truths(&f);
    let mut oracle = MockOracle::new(MockWorld::new(f.ric.clone(), t.clone()));
    let uplink = chain(&f, 4, &["WirelessAnomalyDetector", "UplinkPowerControlAgent"]);
    let mut pc = context(&f, AgentRole::Perception, 4);
    pc.candidates = vec![PolicyDoc::from(&uplink), PolicyDoc::from(&t[&IntentId(1)])];
    pc.deployed = vec![PolicyDoc::from(&t[&IntentId(2)])];

    let got: PerceptionDoc = parse_reply(&ask(&mut oracle, &pc)).unwrap();
    let pre = DeploymentState { active: vec![t[&IntentId(2)].clone()] };
    let want = PerceptionDoc::from_graph(&build_conflict_graph([&uplink, &t[&IntentId(1)]], &pre, &f.ric));
    assert_eq!(got, want);
    assert!(got.conflicts.parameter.iter().any(|r| r.subject == "tx_power"));
}

#[test]
fn oracle_perception_of_a_lone_intent_is_empty() {
    let f = fixtures();
    let mut oracle = MockOracle::new(MockWorld::new(f.ric.clone(), truths(&f)));
    let got: PerceptionDoc = parse_reply(&ask(&mut oracle, &context(&f, AgentRole::Perception, 3))).unwrap();
    assert!(got.is_empty());
}

#[test]
fn noisy_perception_injects_a_reproducible_spurious_conflict() {
    let f = fixtures();
    let world = MockWorld::new(f.ric.clone(), truths(&f));
    let pc = context(&f, AgentRole::Perception, 3);
    let replies: Vec<String> = (0..2).map(|_| ask(&mut MockNoisy::new(world.clone(), 7), &pc)).collect();
    assert_eq!(replies[0], replies[1]);
    let doc: PerceptionDoc = parse_reply(&replies[0]).unwrap();
    assert!(!doc.conflicts.parameter.is_empty());
}

#[test]
fn oracle_reasoning_returns_the_ground_truth() {
    let f = fixtures();
    let t = truths(&f);
    let mut oracle = MockOracle::new(MockWorld::new(f.ric.clone(), t.clone()));
    for id in 1..=7 {
        let doc: PolicyDoc = parse_reply(&ask(&mut oracle, &context(&f, AgentRole::Reasoning, id))).unwrap();
        assert_eq!(doc.to_pipeline(), t[&IntentId(id)]);
    }
}

fn refine(f: &Fixtures, intent: u32, candidate: &Pipeline) -> RefinementDoc {
    let mut oracle = MockOracle::new(MockWorld::new(f.ric.clone(), truths(f)));
    let mut pc = context(f, AgentRole::Refinement, intent);
    pc.candidate = Some(PolicyDoc::from(candidate));
    parse_reply(&ask(&mut oracle, &pc)).unwrap()
}

#[test]
fn refinement_removes_duplicates() {
    let f = fixtures();
    let truth = truths(&f)[&IntentId(1)].clone();
    let mut dup = truth.clone();
    dup.nodes.push(dup.nodes[1].clone());
    let r = refine(&f, 1, &dup);
    assert_eq!(r.edits.iter().map(|e| e.edit_kind).collect::<Vec<_>>(), vec![EditKind::RemoveDuplicate]);
    assert_eq!(r.revised_policy.to_pipeline(), truth);
}

#[test]
fn refinement_leaves_the_ground_truth_alone() {
    let f = fixtures();
    let truth = truths(&f)[&IntentId(5)].clone();
    let r = refine(&f, 5, &truth);
    assert!(r.edits.is_empty());
    assert_eq!(r.revised_policy, PolicyDoc::from(&truth));
}

#[test]
fn refinement_drops_a_superfluous_anomaly_detector() {
    let f = fixtures();
    let bloated = chain(&f, 2, &["MobilityPredictor", "WirelessAnomalyDetector", "PowerSavingController"]);
    let r = refine(&f, 2, &bloated);
    assert_eq!(r.edits.iter().map(|e| e.edit_kind).collect::<Vec<_>>(), vec![EditKind::DropSuperfluous]);
    assert_eq!(r.revised_policy.to_pipeline(), truths(&f)[&IntentId(2)]);
}

#[test]
fn refinement_restores_a_dropped_edge() {
    let f = fixtures();
    let truth = truths(&f)[&IntentId(3)].clone();
    let mut broken = truth.clone();
    broken.edges.clear();
    let r = refine(&f, 3, &broken);
    assert_eq!(r.edits.iter().map(|e| e.edit_kind).collect::<Vec<_>>(), vec![EditKind::ReorderStage]);
    assert_eq!(r.revised_policy.to_pipeline(), truth);
}

/// Replays canned replies and records the size of each request.
struct Scripted {
    replies: VecDeque<String>,
    request_sizes: Vec<usize>,
}

impl ChatTransport for Scripted {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        self.request_sizes.push(messages.len());
        self.replies.pop_front().ok_or_else(|| TransportError::Http("script exhausted".into()))
    }

    fn descriptor(&self) -> String {
        "scripted".into()
    }
}

#[test]
fn unknown_xapp_triggers_one_repair() {
    let f = fixtures();
    let truth = truths(&f)[&IntentId(1)].clone();
    let mut bad = PolicyDoc::from(&truth);
    bad.selected_xapps[0].xapp_id = XAppId::from("GhostApp");
    let good = PolicyDoc::from(&truth);
    let mut t = Scripted {
        replies: [serde_json::to_string(&bad).unwrap(), serde_json::to_string(&good).unwrap()].into(),
        request_sizes: vec![],
    };
    let mut trace = Vec::new();
    let mut env = AgentEnv { ric: &f.ric, iteration: 1, trace: &mut trace };
    let got = run_reasoning(&mut t, &mut env, context(&f, AgentRole::Reasoning, 1), None, vec![]).unwrap();
    assert_eq!(got, good);
    assert_eq!(t.request_sizes, vec![2, 4]);
    assert_eq!(trace.iter().map(|c| c.repair).collect::<Vec<_>>(), vec![false, true]);
}

#[test]
fn second_invalid_reply_fails_the_attempt() {
    let f = fixtures();
    let mut t = Scripted { replies: ["not json".to_string(), "{}".to_string(), "unused".to_string()].into(), request_sizes: vec![] };
    let mut trace = Vec::new();
    let mut env = AgentEnv { ric: &f.ric, iteration: 1, trace: &mut trace };
    let candidate = PolicyDoc::from(&truths(&f)[&IntentId(1)]);
    let r = run_refinement(&mut t, &mut env, candidate, String::new(), context(&f, AgentRole::Refinement, 1));
    assert!(matches!(r, Err(AgentFailure::Invalid(_))));
    assert_eq!(t.request_sizes.len(), 2);
    assert_eq!(t.replies.len(), 1);
}

#[test]
fn modes_issue_the_expected_agent_calls() {
    let f = fixtures();
    use AgentRole::*;
    let expected: [(Mode, &[AgentRole]); 5] = [
        (Mode::F5, &[Perception, Reasoning, Refinement]),
        (Mode::NR, &[Perception, Reasoning]),
        (Mode::NP, &[Reasoning, Refinement]),
        (Mode::SA, &[SingleAgent]),
        (Mode::FCFS, &[Perception, Reasoning, Refinement]),
    ];
    for (mode, roles) in expected {
        let a = run_scenario(&f, 1, mode, TransportKind::MockOracle, 0, RunOptions::default()).unwrap();
        let mut per_intent: BTreeMap<IntentId, Vec<AgentRole>> = BTreeMap::new();
        for c in a.outcome.trace.iter().filter(|c| c.iteration == 1) {
            assert!(!c.repair);
            per_intent.entry(c.intent).or_default().push(c.role);
        }
        assert_eq!(per_intent.keys().copied().collect::<Vec<_>>(), vec![IntentId(3), IntentId(4)], "{mode}");
        for calls in per_intent.values() {
            assert_eq!(calls.as_slice(), roles, "{mode}");
        }
    }
}

#[test]
fn repairs_happen_at_most_once_per_call() {
    let f = fixtures();
    for seed in 1..=5 {
        let a = run_scenario(&f, 4, Mode::F5, TransportKind::MockNoisy, seed, RunOptions::default()).unwrap();
        let mut seen: BTreeMap<(u32, IntentId, AgentRole), (usize, usize)> = BTreeMap::new();
        for c in &a.outcome.trace {
            let e = seen.entry((c.iteration, c.intent, c.role)).or_default();
            if c.repair {
                e.1 += 1;
            } else {
                e.0 += 1;
            }
        }
        assert!(seen.values().all(|(first, repair)| *first == 1 && *repair <= 1));
    }
}

struct Down;

impl ChatTransport for Down {
    fn complete(&mut self, _: &[ChatMessage]) -> Result<String, TransportError> {
        Err(TransportError::Http("connection refused".into()))
    }

    fn descriptor(&self) -> String {
        "down".into()
    }
}

#[test]
fn transport_outage_is_a_failed_attempt_not_an_error() {
    let f = fixtures();
    let opts = RunOptions { max_iterations: 3, ..RunOptions::default() };
    let a = run_scenario_with_transport(&f, 2, Mode::F5, &mut Down, 0, opts).unwrap();
    assert!(!a.report.converged);
    assert_eq!(a.report.iterations_to_deployment, 3);
    assert_eq!(a.report.generation_accuracy, 0.0);
    assert!(a.memory.is_empty());
}

#[test]
fn run_memory_round_trips_through_jsonl() {
    let f = fixtures();
    let a = run_scenario(&f, 3, Mode::F5, TransportKind::MockNoisy, 4, RunOptions::default()).unwrap();
    assert!(!a.memory.is_empty());
    let mut buf = Vec::new();
    a.memory.write_jsonl(&mut buf).unwrap();
    let back = MemoryKernel::read_jsonl(&buf[..]).unwrap();
    assert_eq!(back, a.memory);
    let iterations: BTreeSet<u32> = back.entries().iter().map(|e| e.outcome.iteration).collect();
    assert_eq!(iterations.len() as u32, a.outcome.iterations_run);
}

#[test]
fn oracle_mode_reports_are_perfect_outside_fcfs() {
    let f = fixtures();
    for s in 1..=4 {
        let r = run_scenario(&f, s, Mode::NP, TransportKind::MockOracle, 0, RunOptions::default()).unwrap().report;
        assert_eq!((r.generation_accuracy, r.deployment_success, r.converged), (1.0, 1.0, true));
        assert_eq!(r.transport, "mock-oracle");
    }
}

#[test]
fn fcfs_fails_exactly_where_ownership_collides() {
    let f = fixtures();
    let got: Vec<f64> = (1..=4)
        .map(|s| run_scenario(&f, s, Mode::FCFS, TransportKind::MockOracle, 0, RunOptions::default()).unwrap().report.deployment_success)
        .collect();
    assert_eq!(got, vec![1.0, 2.0 / 3.0, 2.0 / 4.0, 4.0 / 7.0]);
}
