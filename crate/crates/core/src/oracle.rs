//! Exact reference algorithms: ground-truth synthesis per intent, the
//! maximum conflict-free deployment subset, and the lexicographic solution
//! score used to keep the orchestration loop monotone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conflict::{internal_conflicts, pairwise_conflicts, RicContext};
use crate::model::{pipelines_equal, DeploymentState, Directive, Intent, IntentId, Pipeline, PipelineNode, XAppId, XAppProfile};

/// Longest pipeline the synthesizer will consider by default.
pub const DEFAULT_MAX_LEN: usize = 5;

/// Upper bound on candidates for the exhaustive subset search.
pub const MAX_SUBSET_CANDIDATES: usize = 12;

/// Setting written into every controlled parameter of a reference pipeline.
pub const NOMINAL_SETTING: &str = "nominal";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("intent {intent} is infeasible: {reason}")]
    Infeasible { intent: IntentId, reason: String },
    #[error("max_len {0} exceeds the supported bound of {DEFAULT_MAX_LEN}")]
    MaxLenTooLarge(usize),
    #[error("{0} candidates exceed the exhaustive search bound of {MAX_SUBSET_CANDIDATES}")]
    TooManyCandidates(usize),
}

/// Lexicographic quality of a proposed solution, compared field by field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SolutionScore {
    pub correct_deployed: i64,
    pub deployed: i64,
    pub neg_conflicts: i64,
    pub neg_total_nodes: i64,
}

impl SolutionScore {
    /// Score of a solution with nothing proposed.
    pub const FLOOR: SolutionScore = SolutionScore {
        correct_deployed: 0,
        deployed: 0,
        neg_conflicts: i64::MIN,
        neg_total_nodes: i64::MIN,
    };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResult {
    pub per_intent_truth: BTreeMap<IntentId, Pipeline>,
    pub max_subset: BTreeSet<IntentId>,
    pub objective_value: usize,
}

/// Reference directive: every controlled parameter set to the nominal value.
pub fn nominal_directive(profile: &XAppProfile) -> Directive {
    profile
        .controlled_params
        .iter()
        .map(|p| (p.clone(), NOMINAL_SETTING.to_string()))
        .collect()
}

/// Chain through `ids` sorted by (stage, id), each node configured nominally.
pub fn stage_sorted_chain(intent: IntentId, ids: &[&XAppProfile]) -> Pipeline {
    let mut sorted: Vec<&XAppProfile> = ids.to_vec();
    sorted.sort_by(|a, b| (a.stage, &a.id).cmp(&(b.stage, &b.id)));
    Pipeline::chain(
        intent,
        sorted.iter().map(|p| PipelineNode::new(p.id.clone(), nominal_directive(p))).collect(),
    )
}

fn combinations(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Minimal stage-sorted chain that includes the required xApps, covers the
/// required capabilities and is internally conflict-free. Ties go to the
/// lexicographically smallest sorted id sequence.
pub fn synthesize_ground_truth(intent: &Intent, ctx: &RicContext, max_len: usize) -> Result<Pipeline, OracleError> {
    if max_len > DEFAULT_MAX_LEN {
        return Err(OracleError::MaxLenTooLarge(max_len));
    }
    let infeasible = |reason: String| OracleError::Infeasible { intent: intent.id, reason };
    let mut required = Vec::new();
    for id in &intent.required_xapps {
        required.push(ctx.registry.get(id).ok_or_else(|| infeasible(format!("required xApp `{id}` is not registered")))?);
    }
    let offered: BTreeSet<&String> = ctx.registry.profiles().flat_map(|p| &p.capabilities).collect();
    if let Some(missing) = intent.required_capabilities.iter().find(|c| !offered.contains(c)) {
        return Err(infeasible(format!("no registered xApp offers `{missing}`")));
    }

    let pool: Vec<&XAppProfile> = ctx
        .registry
        .profiles()
        .filter(|p| !intent.required_xapps.contains(&p.id))
        .collect();
    for size in required.len().max(1)..=max_len {
        let mut best: Option<(Vec<XAppId>, Pipeline)> = None;
        combinations(pool.len(), size - required.len(), |pick| {
            let mut chosen: Vec<&XAppProfile> = required.clone();
            chosen.extend(pick.iter().map(|&i| pool[i]));
            let covered: BTreeSet<&String> = chosen.iter().flat_map(|p| &p.capabilities).collect();
            if !intent.required_capabilities.iter().all(|c| covered.contains(c)) {
                return;
            }
            let candidate = stage_sorted_chain(intent.id, &chosen);
            if !internal_conflicts(&candidate, ctx).is_empty() {
                return;
            }
            let mut key: Vec<XAppId> = chosen.iter().map(|p| p.id.clone()).collect();
            key.sort();
            if best.as_ref().is_none_or(|(k, _)| key < *k) {
                best = Some((key, candidate));
            }
        });
        if let Some((_, p)) = best {
            return Ok(p);
        }
    }
    Err(infeasible(format!("no conflict-free cover within {max_len} xApps")))
}

/// Pairwise compatibility of a candidate set, with each candidate's standing
/// against the already-deployed rApps. Validity decomposes over pairs, so a
/// subset is deployable iff all members are admissible and pairwise
/// compatible.
#[derive(Debug, Clone)]
pub struct CompatibilityTable {
    pub ids: Vec<IntentId>,
    admissible: Vec<bool>,
    compatible: Vec<Vec<bool>>,
}

impl CompatibilityTable {
    pub fn build(candidates: &BTreeMap<IntentId, Pipeline>, pre: &DeploymentState, ctx: &RicContext) -> Self {
        let ids: Vec<IntentId> = candidates.keys().copied().collect();
        let pipes: Vec<&Pipeline> = candidates.values().collect();
        let admissible = pipes
            .iter()
            .map(|p| {
                internal_conflicts(p, ctx).is_empty()
                    && pre.active.iter().all(|q| pairwise_conflicts(p, q, ctx).is_empty())
            })
            .collect();
        let n = pipes.len();
        let mut compatible = vec![vec![true; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let ok = pairwise_conflicts(pipes[i], pipes[j], ctx).is_empty();
                compatible[i][j] = ok;
                compatible[j][i] = ok;
            }
        }
        CompatibilityTable { ids, admissible, compatible }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Whether the members of `mask` (bit i = `ids[i]`) can be deployed together.
    pub fn feasible(&self, mask: u32) -> bool {
        let n = self.ids.len();
        for i in (0..n).filter(|i| mask >> i & 1 == 1) {
            if !self.admissible[i] {
                return false;
            }
            if ((i + 1)..n).any(|j| mask >> j & 1 == 1 && !self.compatible[i][j]) {
                return false;
            }
        }
        true
    }

    pub fn members(&self, mask: u32) -> BTreeSet<IntentId> {
        (0..self.ids.len()).filter(|i| mask >> i & 1 == 1).map(|i| self.ids[i]).collect()
    }

    /// All deployable subsets as bitmasks, including the empty one.
    pub fn feasible_masks(&self) -> impl Iterator<Item = u32> + '_ {
        (0..1u32 << self.ids.len()).filter(|m| self.feasible(*m))
    }
}

/// Number of `members` whose candidate equals its reference pipeline.
pub fn correct_count(members: &BTreeSet<IntentId>, candidates: &BTreeMap<IntentId, Pipeline>, truths: &BTreeMap<IntentId, Pipeline>) -> usize {
    members
        .iter()
        .filter(|id| match (candidates.get(id), truths.get(id)) {
            (Some(c), Some(t)) => pipelines_equal(c, t),
            _ => false,
        })
        .count()
}

/// Largest subset of candidates deployable together with `pre`. Ties go to
/// more correct pipelines (when `truths` is given), then to the
/// lexicographically smallest sorted intent-id sequence.
pub fn max_conflict_free_subset(
    candidates: &BTreeMap<IntentId, Pipeline>,
    pre: &DeploymentState,
    ctx: &RicContext,
    truths: Option<&BTreeMap<IntentId, Pipeline>>,
) -> Result<OracleResult, OracleError> {
    if candidates.len() > MAX_SUBSET_CANDIDATES {
        return Err(OracleError::TooManyCandidates(candidates.len()));
    }
    let table = CompatibilityTable::build(candidates, pre, ctx);
    let mut best: Option<(usize, usize, Vec<IntentId>)> = None;
    for mask in table.feasible_masks() {
        let members = table.members(mask);
        let correct = truths.map_or(0, |t| correct_count(&members, candidates, t));
        let ids: Vec<IntentId> = members.into_iter().collect();
        let better = match &best {
            None => true,
            Some((size, c, lex)) => (ids.len(), correct).cmp(&(*size, *c)).then_with(|| lex.cmp(&ids)).is_gt(),
        };
        if better {
            best = Some((ids.len(), correct, ids));
        }
    }
    let (size, _, ids) = best.expect("empty subset is always feasible");
    Ok(OracleResult {
        per_intent_truth: candidates.clone(),
        max_subset: ids.into_iter().collect(),
        objective_value: size,
    })
}

/// Scores a proposed solution. `conflicts` is the total number of conflict
/// records the proposal produces.
pub fn score_solution(
    proposed: &BTreeMap<IntentId, Pipeline>,
    deployed: &BTreeSet<IntentId>,
    truths: &BTreeMap<IntentId, Pipeline>,
    conflicts: usize,
) -> SolutionScore {
    let deployed: BTreeSet<IntentId> = deployed.iter().filter(|id| proposed.contains_key(id)).copied().collect();
    SolutionScore {
        correct_deployed: correct_count(&deployed, proposed, truths) as i64,
        deployed: deployed.len() as i64,
        neg_conflicts: -(conflicts as i64),
        neg_total_nodes: -(proposed.values().map(|p| p.nodes.len()).sum::<usize>() as i64),
    }
}

/// Reference solution for a batch: ground truths for the new and
/// pre-deployed intents, and the maximum conflict-free subset of the new
/// ground truths alongside the pre-deployed ones.
pub fn solve_batch(new_intents: &[IntentId], pre_deployed: &[IntentId], ctx: &RicContext, max_len: usize) -> Result<(OracleResult, DeploymentState), OracleError> {
    let truth = |id: IntentId| -> Result<Pipeline, OracleError> {
        let intent = ctx.intent(id).ok_or_else(|| OracleError::Infeasible { intent: id, reason: "intent is not in the catalog".into() })?;
        synthesize_ground_truth(intent, ctx, max_len)
    };
    let candidates: BTreeMap<IntentId, Pipeline> = new_intents.iter().map(|&id| truth(id).map(|p| (id, p))).collect::<Result<_, _>>()?;
    let pre = DeploymentState { active: pre_deployed.iter().map(|&id| truth(id)).collect::<Result<_, _>>()? };
    let mut result = max_conflict_free_subset(&candidates, &pre, ctx, Some(&candidates))?;
    for p in &pre.active {
        result.per_intent_truth.insert(p.intent_id, p.clone());
    }
    Ok((result, pre))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conflict::VendorCompatibilityMatrix;
    use crate::model::{Direction, Registry, Stage};

    fn prof(id: &str, caps: &[&str], params: &[&str], stage: Stage) -> XAppProfile {
        XAppProfile {
            id: id.into(),
            name: id.into(),
            vendor: "v".into(),
            dialect: "std".into(),
            capabilities: caps.iter().map(|s| s.to_string()).collect(),
            controlled_params: params.iter().map(|s| s.to_string()).collect(),
            kpi_effects: BTreeMap::new(),
            stage,
            interfaces: BTreeSet::new(),
        }
    }

    fn intent(id: u32, caps: &[&str]) -> Intent {
        Intent {
            id: IntentId(id),
            text: String::new(),
            target_kpis: [("k".to_string(), Direction::Increase)].into_iter().collect(),
            required_capabilities: caps.iter().map(|s| s.to_string()).collect(),
            required_xapps: BTreeSet::new(),
        }
    }

    /// Each candidate is one xApp; xApps sharing a parameter conflict.
    fn coupled(edges: &[(u32, u32)], n: u32) -> (RicContext, BTreeMap<IntentId, Pipeline>) {
        let mut profiles = Vec::new();
        for i in 1..=n {
            let params: Vec<String> = edges
                .iter()
                .filter(|(a, b)| *a == i || *b == i)
                .map(|(a, b)| format!("p{a}_{b}"))
                .collect();
            let refs: Vec<&str> = params.iter().map(String::as_str).collect();
            profiles.push(prof(&format!("x{i}"), &["c"], &refs, Stage::Act));
        }
        let ctx = RicContext::new(Registry::new(profiles).unwrap(), (1..=n).map(|i| intent(i, &["c"])), VendorCompatibilityMatrix::new());
        let cands = (1..=n)
            .map(|i| {
                let p = ctx.registry.get(&XAppId::new(format!("x{i}"))).unwrap();
                (IntentId(i), stage_sorted_chain(IntentId(i), &[p]))
            })
            .collect();
        (ctx, cands)
    }

    #[test]
    fn combinations_visit_in_lex_order() {
        let mut seen = Vec::new();
        combinations(4, 2, |c| seen.push(c.to_vec()));
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        let mut empty = Vec::new();
        combinations(3, 0, |c| empty.push(c.to_vec()));
        assert_eq!(empty, vec![Vec::<usize>::new()]);
    }

    #[test]
    fn synthesis_picks_minimal_lex_smallest_cover() {
        let reg = Registry::new(vec![
            prof("b", &["x"], &[], Stage::Act),
            prof("a", &["x"], &[], Stage::Act),
            prof("s", &["y"], &["q"], Stage::Sense),
            prof("both", &["x", "y"], &[], Stage::Decide),
        ])
        .unwrap();
        let ctx = RicContext::new(reg, [intent(1, &["x", "y"])], VendorCompatibilityMatrix::new());
        let p = synthesize_ground_truth(ctx.intent(IntentId(1)).unwrap(), &ctx, 5).unwrap();
        assert_eq!(p.nodes.len(), 1);
        assert_eq!(p.nodes[0].xapp_id, XAppId::from("both"));

        let mut req = intent(2, &["x", "y"]);
        req.required_xapps.insert("s".into());
        let p = synthesize_ground_truth(&req, &ctx, 5).unwrap();
        let ids: Vec<_> = p.node_ids().map(|x| x.as_str().to_string()).collect();
        assert_eq!(ids, vec!["s", "a"]);
        assert_eq!(p.nodes[0].directive.get("q").map(String::as_str), Some(NOMINAL_SETTING));
    }

    #[test]
    fn synthesis_reports_infeasible() {
        let reg = Registry::new(vec![prof("a", &["x"], &[], Stage::Act)]).unwrap();
        let ctx = RicContext::new(reg, [], VendorCompatibilityMatrix::new());
        assert!(matches!(
            synthesize_ground_truth(&intent(1, &["nothing"]), &ctx, 5),
            Err(OracleError::Infeasible { .. })
        ));
        assert_eq!(synthesize_ground_truth(&intent(1, &["x"]), &ctx, 6), Err(OracleError::MaxLenTooLarge(6)));
    }

    #[test]
    fn subset_examples() {
        let (ctx, cands) = coupled(&[], 3);
        let r = max_conflict_free_subset(&cands, &DeploymentState::empty(), &ctx, None).unwrap();
        assert_eq!(r.objective_value, 3);

        // One conflicting pair (A,B) = (1,2): all 8 subsets enumerated by
        // hand give {1,3} and {2,3} at size 2; the id tie-break keeps {1,3}.
        let (ctx, cands) = coupled(&[(1, 2)], 3);
        let r = max_conflict_free_subset(&cands, &DeploymentState::empty(), &ctx, None).unwrap();
        assert_eq!(r.max_subset, [IntentId(1), IntentId(3)].into_iter().collect());

        let (ctx, cands) = coupled(&[(1, 2), (1, 3), (2, 3)], 3);
        let r = max_conflict_free_subset(&cands, &DeploymentState::empty(), &ctx, None).unwrap();
        assert_eq!(r.max_subset, [IntentId(1)].into_iter().collect());
    }

    #[test]
    fn subset_prefers_correct_pipelines_on_ties() {
        let (ctx, cands) = coupled(&[(1, 2)], 2);
        let mut truths = cands.clone();
        truths.get_mut(&IntentId(1)).unwrap().nodes[0].directive.insert("other".into(), "x".into());
        let r = max_conflict_free_subset(&cands, &DeploymentState::empty(), &ctx, Some(&truths)).unwrap();
        assert_eq!(r.max_subset, [IntentId(2)].into_iter().collect());
    }

    #[test]
    fn subset_respects_pre_deployed() {
        let (ctx, cands) = coupled(&[(1, 3)], 3);
        let pre = DeploymentState { active: vec![cands[&IntentId(3)].clone()] };
        let only: BTreeMap<_, _> = cands.iter().filter(|(k, _)| k.0 != 3).map(|(k, v)| (*k, v.clone())).collect();
        let r = max_conflict_free_subset(&only, &pre, &ctx, None).unwrap();
        assert_eq!(r.max_subset, [IntentId(2)].into_iter().collect());
    }

    #[test]
    fn too_many_candidates_rejected() {
        let (ctx, cands) = coupled(&[], 13);
        assert_eq!(
            max_conflict_free_subset(&cands, &DeploymentState::empty(), &ctx, None),
            Err(OracleError::TooManyCandidates(13))
        );
    }

    #[test]
    fn score_examples() {
        let (_, cands) = coupled(&[], 3);
        let all: BTreeSet<_> = cands.keys().copied().collect();
        assert_eq!(
            score_solution(&cands, &all, &cands, 0),
            SolutionScore { correct_deployed: 3, deployed: 3, neg_conflicts: 0, neg_total_nodes: -3 }
        );
        assert_eq!(
            score_solution(&cands, &BTreeSet::new(), &cands, 4),
            SolutionScore { correct_deployed: 0, deployed: 0, neg_conflicts: -4, neg_total_nodes: -3 }
        );
        let a = SolutionScore { correct_deployed: 3, deployed: 3, neg_conflicts: 0, neg_total_nodes: -6 };
        let b = SolutionScore { correct_deployed: 2, deployed: 3, neg_conflicts: -1, neg_total_nodes: -6 };
        assert!(a > b);
        assert!(SolutionScore::FLOOR < b);
    }
}
