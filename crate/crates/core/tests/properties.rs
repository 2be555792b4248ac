use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use proptest::prelude::*;

use rapp_core::agents::orchestrator::{enforce_monotonicity, ScoredSolution};
use rapp_core::agents::schema::PolicyDoc;
use rapp_core::conflict::{pairwise_conflicts, validity};
use rapp_core::harness::{load_fixtures, Fixtures, DEFAULT_FIXTURES};
use rapp_core::model::{pipelines_equal, topological_order, IntentId, Pipeline, PipelineNode, XAppId};
use rapp_core::oracle::SolutionScore;
use rapp_core::retrieval::{chunk_document, cosine, k_schedule, DocStore, Embedder, TrigramEmbedder};

fn fixtures() -> &'static Fixtures {
    static F: OnceLock<Fixtures> = OnceLock::new();
    F.get_or_init(|| load_fixtures(Path::new(DEFAULT_FIXTURES)).unwrap())
}

fn ids() -> Vec<XAppId> {
    fixtures().ric.registry.profiles().map(|p| p.id.clone()).collect()
}

/// Pipeline over up to `max` distinct fixture xApps with random directives
/// and edges that follow a random node order, so the graph is acyclic.
fn pipeline(intent: u32, max: usize) -> impl Strategy<Value = Pipeline> {
    let all = ids();
    let n = all.len();
    (
        proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=max),
        any::<u64>(),
        prop::collection::vec(any::<bool>(), 10),
        prop::collection::vec(0usize..3, 10),
    )
        .prop_map(move |(idx, perm_seed, edge_bits, settings)| {
            let mut order = idx.clone();
            let len = order.len();
            for i in 0..len {
                order.swap(i, (perm_seed as usize).wrapping_add(i * 7) % len);
            }
            let reg = &fixtures().ric.registry;
            let nodes: Vec<PipelineNode> = order
                .iter()
                .enumerate()
                .map(|(i, &j)| {
                    let prof = reg.get(&all[j]).unwrap();
                    let d = prof
                        .controlled_params
                        .iter()
                        .map(|p| (p.clone(), ["nominal", "aggressive", " nominal"][settings[i % settings.len()]].to_string()))
                        .collect();
                    PipelineNode::new(all[j].clone(), d)
                })
                .collect();
            let mut edges = BTreeSet::new();
            let mut bit = 0;
            for i in 0..len {
                for j in i + 1..len {
                    if edge_bits[bit % edge_bits.len()] {
                        edges.insert((nodes[i].xapp_id.clone(), nodes[j].xapp_id.clone()));
                    }
                    bit += 1;
                }
            }
            Pipeline { intent_id: IntentId(intent), nodes, edges, deployment_conditions: Default::default() }
        })
}

fn score() -> impl Strategy<Value = SolutionScore> {
    (0i64..4, 0i64..4, -5i64..=0, -9i64..=0).prop_map(|(a, b, c, d)| SolutionScore {
        correct_deployed: a,
        deployed: b,
        neg_conflicts: c,
        neg_total_nodes: d,
    })
}

proptest! {
    #[test]
    fn topological_order_is_a_consistent_permutation(p in pipeline(1, 6)) {
        let order = topological_order(&p).unwrap();
        let mut sorted = order.clone();
        sorted.sort();
        let mut nodes: Vec<XAppId> = p.node_ids().cloned().collect();
        nodes.sort();
        prop_assert_eq!(sorted, nodes);
        let pos: BTreeMap<&XAppId, usize> = order.iter().enumerate().map(|(i, x)| (x, i)).collect();
        for (a, b) in &p.edges {
            prop_assert!(pos[a] < pos[b]);
        }
    }

    #[test]
    fn pipeline_equality_is_an_equivalence(a in pipeline(1, 3), b in pipeline(1, 3), c in pipeline(1, 3)) {
        prop_assert!(pipelines_equal(&a, &a));
        prop_assert_eq!(pipelines_equal(&a, &b), pipelines_equal(&b, &a));
        if pipelines_equal(&a, &b) && pipelines_equal(&b, &c) {
            prop_assert!(pipelines_equal(&a, &c));
        }
    }

    #[test]
    fn pairwise_detection_is_symmetric(a in pipeline(1, 4), b in pipeline(2, 4)) {
        let ctx = &fixtures().ric;
        prop_assert_eq!(pairwise_conflicts(&a, &b, ctx), pairwise_conflicts(&b, &a, ctx));
    }

    #[test]
    fn adding_deployments_never_restores_validity(p in pipeline(1, 3), q in pipeline(2, 3), r in pipeline(3, 3)) {
        let ctx = &fixtures().ric;
        let (alone, _) = validity(&p, [&q], ctx);
        let (more, _) = validity(&p, [&q, &r], ctx);
        prop_assert!(alone || !more);
    }

    #[test]
    fn policy_doc_round_trip(p in pipeline(4, 5)) {
        let json = serde_json::to_string(&PolicyDoc::from(&p)).unwrap();
        let back: PolicyDoc = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.to_pipeline(), p);
    }

    #[test]
    fn chunks_reconstruct_the_document(text in "[a-zé漢 \\n]{0,1600}") {
        let mut out = String::new();
        let mut covered: usize = 0;
        for ((start, end), body) in chunk_document(&text, 500, 50).unwrap() {
            out.extend(body.chars().skip(covered.saturating_sub(start)));
            covered = end;
        }
        prop_assert_eq!(out, text);
    }

    #[test]
    fn k_schedule_is_nondecreasing(i in 1usize..500) {
        prop_assert!(k_schedule(i) <= k_schedule(i + 1));
        prop_assert!(k_schedule(i) <= 50);
    }

    #[test]
    fn trigram_cosine_is_symmetric(a in "[a-z ]{0,60}", b in "[a-z ]{0,60}") {
        let e = TrigramEmbedder::default();
        let (va, vb) = (e.embed(&a).unwrap(), e.embed(&b).unwrap());
        prop_assert_eq!(cosine(&va, &vb).unwrap(), cosine(&vb, &va).unwrap());
    }

    #[test]
    fn unrelated_insertion_keeps_relative_order(docs in prop::collection::vec("[a-f ]{5,40}", 1..8)) {
        let e = TrigramEmbedder::default();
        let mut store = DocStore::new();
        for (i, d) in docs.iter().enumerate() {
            store.add_document(&format!("d{i}"), d, &e).unwrap();
        }
        let query = "abc def";
        let before: Vec<(String, (usize, usize))> =
            store.top_k(query, 50, &e).unwrap().iter().map(|c| (c.doc_id.clone(), c.span)).collect();
        store.add_document("zz", "qqq xxx www", &e).unwrap();
        let after: Vec<(String, (usize, usize))> = store
            .top_k(query, 50, &e)
            .unwrap()
            .iter()
            .map(|c| (c.doc_id.clone(), c.span))
            .filter(|(d, _)| d != "zz")
            .collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn monotonicity_yields_nondecreasing_scores(scores in prop::collection::vec(score(), 1..30)) {
        let mut best = ScoredSolution::empty();
        let mut history = Vec::new();
        for s in scores {
            let cand = ScoredSolution { proposals: BTreeMap::new(), deployed: BTreeSet::new(), score: s };
            best = enforce_monotonicity(best, cand);
            history.push(best.score);
        }
        prop_assert!(history.windows(2).all(|w| w[0] <= w[1]));
    }
}
