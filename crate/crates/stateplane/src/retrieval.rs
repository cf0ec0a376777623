//! Goal-conditioned retrieval: intent routing over the three state kinds,
//! lexical tf-idf relevance, strength weighting, and per-object policy
//! filtering. Binding org-policy facts travel in a distinguished stratum
//! that bypasses top-k truncation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::governance::{evaluate, Action, PolicySet, Principal};
use crate::model::{PromotionStage, ScopePath, StateKind, StateObject, StatePlaneConfig, Tick};
use crate::segmentation::tokenize;
use crate::store::StateStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentWeights {
    pub semantic: f64,
    pub episodic: f64,
    pub procedural: f64,
}

impl IntentWeights {
    pub fn weight_for(&self, kind: StateKind) -> f64 {
        match kind {
            StateKind::Fact => self.semantic,
            StateKind::Episode => self.episodic,
            StateKind::Procedure => self.procedural,
        }
    }

    pub fn uniform() -> Self {
        IntentWeights { semantic: 1.0 / 3.0, episodic: 1.0 / 3.0, procedural: 1.0 / 3.0 }
    }
}

const PROCEDURAL_CUES: [&str; 5] = ["how", "steps", "procedure", "workflow", "process"];
const SEMANTIC_CUES: [&str; 6] = ["what", "policy", "limit", "rule", "constraint", "allowed"];
const EPISODIC_CUES: [&str; 5] = ["last time", "previously", "decided", "why did", "happened"];

/// Keyword router over the goal text. Multiple matched families average
/// their profiles; no match falls back to (0.4, 0.4, 0.2).
pub fn classify_intent(goal: &str) -> IntentWeights {
    let lower = goal.to_lowercase();
    let tokens: BTreeSet<String> = tokenize(goal).into_iter().collect();
    let mut profiles: Vec<(f64, f64, f64)> = Vec::new();
    if PROCEDURAL_CUES.iter().any(|c| tokens.contains(*c)) {
        profiles.push((0.1, 0.1, 0.8));
    }
    if SEMANTIC_CUES.iter().any(|c| tokens.contains(*c)) {
        profiles.push((0.8, 0.1, 0.1));
    }
    if EPISODIC_CUES.iter().any(|c| {
        if c.contains(' ') { lower.contains(c) } else { tokens.contains(*c) }
    }) {
        profiles.push((0.1, 0.8, 0.1));
    }
    let (s, e, p) = if profiles.is_empty() {
        (0.4, 0.4, 0.2)
    } else {
        let n = profiles.len() as f64;
        profiles
            .iter()
            .fold((0.0, 0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1, acc.2 + x.2))
            .clone()
            .into_scaled(1.0 / n)
    };
    IntentWeights { semantic: s, episodic: e, procedural: p }
}

trait Scale {
    fn into_scaled(self, f: f64) -> Self;
}

impl Scale for (f64, f64, f64) {
    fn into_scaled(self, f: f64) -> Self {
        (self.0 * f, self.1 * f, self.2 * f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: String,
    pub score: f64,
    pub kind: StateKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub ranked: Vec<RankedItem>,
    /// Binding org-policy facts (validated, tenant-scoped); not k-truncated.
    pub binding: Vec<RankedItem>,
    pub applied_policy_rules: Vec<String>,
    pub intent: IntentWeights,
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("policy denied read on {0}")]
    PolicyDenied(String),
}

fn relevance(store: &StateStore, goal_tokens: &[String], id: &str) -> f64 {
    let Some(counts) = store.token_counts_of(id) else { return 0.0 };
    let n = store.live_count() as f64;
    let mut sum = 0.0;
    for tok in goal_tokens {
        let tf = counts.get(tok).copied().unwrap_or(0) as f64;
        if tf > 0.0 {
            let df = store.term_document_frequency(tok) as f64;
            sum += tf * (1.0 + n / df).ln();
        }
    }
    sum
}

/// Retrieves policy-permitted, non-tombstoned state relevant to the goal.
/// Candidates live under the requested scope or on an ancestor path of it.
/// Reinforcement ticks are NOT recorded here; see [`record_results`].
#[allow(clippy::too_many_arguments)]
pub fn retrieve(
    store: &StateStore,
    goal: &str,
    scope: &ScopePath,
    caller: &Principal,
    policy: &PolicySet,
    now: Tick,
    k: usize,
    cfg: &StatePlaneConfig,
) -> Result<RetrievalResult, RetrievalError> {
    retrieve_with_intent(store, goal, scope, caller, policy, now, k, cfg, classify_intent(goal))
}

/// Same as [`retrieve`] but with the intent weights supplied by the caller
/// (the intent-router ablation passes uniform weights).
#[allow(clippy::too_many_arguments)]
pub fn retrieve_with_intent(
    store: &StateStore,
    goal: &str,
    scope: &ScopePath,
    caller: &Principal,
    policy: &PolicySet,
    now: Tick,
    k: usize,
    cfg: &StatePlaneConfig,
    intent: IntentWeights,
) -> Result<RetrievalResult, RetrievalError> {
    let scope_decision = evaluate(caller, Action::Read, scope, policy);
    if !scope_decision.allowed {
        return Err(RetrievalError::PolicyDenied(scope.to_string()));
    }
    let mut applied: BTreeSet<String> = scope_decision.rule_id.iter().cloned().collect();
    let goal_tokens = tokenize(goal);

    let mut ranked = Vec::new();
    let mut binding = Vec::new();
    for obj in store.live_objects() {
        let in_subtree = scope.is_prefix_of(obj.scope());
        let on_ancestor_path = obj.scope().is_prefix_of(scope);
        let is_binding_fact = obj.scope().family() == "tenant"
            && matches!(obj, StateObject::Fact(f) if f.stage == PromotionStage::ValidatedFact);
        if !in_subtree && !on_ancestor_path && !is_binding_fact {
            continue;
        }
        let decision = evaluate(caller, Action::Read, obj.scope(), policy);
        if !decision.allowed {
            continue;
        }
        if let StateObject::Procedure(p) = obj {
            if !p.is_durable(cfg.promotion_min_successes) {
                continue;
            }
        }
        if let Some(rule) = decision.rule_id {
            applied.insert(rule);
        }
        if is_binding_fact {
            // Binding items carry the fact's confidence so reconstruction
            // can truncate lowest-confidence last if it ever must.
            let confidence = match obj {
                StateObject::Fact(f) => f.confidence,
                _ => unreachable!(),
            };
            binding.push(RankedItem { id: obj.id().to_string(), score: confidence, kind: StateKind::Fact });
            continue;
        }
        let rel = relevance(store, &goal_tokens, obj.id());
        let strength = StateStore::strength(obj, now, cfg).min(1.0);
        let score = rel * (0.5 + 0.5 * strength) * intent.weight_for(obj.kind());
        ranked.push((score, obj.created_at(), obj.id().to_string(), obj.kind()));
    }

    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(b.1.cmp(&a.1))
            .then(a.2.cmp(&b.2))
    });
    ranked.truncate(k);
    binding.sort_by(|a, b| a.id.cmp(&b.id));

    Ok(RetrievalResult {
        ranked: ranked
            .into_iter()
            .map(|(score, _, id, kind)| RankedItem { id, score, kind })
            .collect(),
        binding,
        applied_policy_rules: applied.into_iter().collect(),
        intent,
    })
}

/// Appends the reinforcement tick for every returned id, exactly once per
/// call even when an id appears in both strata.
pub fn record_results(store: &mut StateStore, result: &RetrievalResult, now: Tick) {
    let ids: BTreeSet<&str> = result
        .ranked
        .iter()
        .chain(&result.binding)
        .map(|r| r.id.as_str())
        .collect();
    for id in ids {
        let _ = store.record_retrieval(id, now);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::governance::{Effect, PolicyRule};
    use crate::model::{MemoryFact, Provenance, SourceKind};

    fn scope(s: &str) -> ScopePath {
        ScopePath::parse(s).unwrap()
    }

    fn allow_all() -> PolicySet {
        PolicySet::new(
            ["tenant/org", "user", "case", "session"]
                .iter()
                .enumerate()
                .map(|(i, p)| PolicyRule {
                    rule_id: format!("allow-{i}"),
                    effect: Effect::Allow,
                    roles: BTreeSet::new(),
                    actions: [Action::Read, Action::Write].into_iter().collect(),
                    scope_prefix: crate::model::ScopePrefix::parse(p).unwrap(),
                })
                .collect(),
        )
    }

    fn caller() -> Principal {
        Principal::new("acme", "u1", &["analyst"], "s1")
    }

    fn fact(id: &str, statement: &str, conf: f64, sc: &str, stage: PromotionStage) -> StateObject {
        let mut prov = Provenance::new(SourceKind::UserUtterance, "t", 1);
        if stage == PromotionStage::ValidatedFact {
            prov.evidence_links.push("turn-1".into());
        }
        StateObject::Fact(MemoryFact {
            id: id.into(),
            statement: statement.into(),
            confidence: conf,
            provenance: prov,
            scope: scope(sc),
            stage,
            created_at: 1,
            strength_base: conf,
            retrieval_ticks: vec![],
        })
    }

    #[test]
    fn intent_profiles() {
        let w = classify_intent("what is the tech sector limit");
        assert_eq!((w.semantic, w.episodic, w.procedural), (0.8, 0.1, 0.1));
        let w = classify_intent("how do I file the SAR");
        assert_eq!((w.semantic, w.episodic, w.procedural), (0.1, 0.1, 0.8));
        let w = classify_intent("asdf qwerty");
        assert_eq!((w.semantic, w.episodic, w.procedural), (0.4, 0.4, 0.2));
        let w = classify_intent("what did we decide last time");
        assert!((w.semantic - 0.45).abs() < 1e-12);
        assert!((w.episodic - 0.45).abs() < 1e-12);
        assert!((w.procedural - 0.1).abs() < 1e-12);
        let sum = w.semantic + w.episodic + w.procedural;
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_store_empty_result() {
        let store = StateStore::in_memory();
        let cfg = StatePlaneConfig::default();
        let r = retrieve(&store, "anything", &scope("case/project/p7"), &caller(), &allow_all(), 1, 8, &cfg)
            .unwrap();
        assert!(r.ranked.is_empty());
        assert!(r.binding.is_empty());
    }

    #[test]
    fn higher_strength_ranks_first() {
        let cfg = StatePlaneConfig::default();
        let mut store = StateStore::in_memory();
        store.put(fact("weak", "tsla position size", 0.2, "case/project/p7", PromotionStage::UnverifiedNote), 1).unwrap();
        store.put(fact("strong", "tsla position size", 0.9, "case/project/p7", PromotionStage::UnverifiedNote), 1).unwrap();
        let r = retrieve(&store, "tsla position", &scope("case/project/p7"), &caller(), &allow_all(), 2, 8, &cfg)
            .unwrap();
        assert_eq!(r.ranked[0].id, "strong");
        assert_eq!(r.ranked[1].id, "weak");
        assert!(r.ranked[0].score > r.ranked[1].score);
    }

    #[test]
    fn denied_scope_errors() {
        let store = StateStore::in_memory();
        let cfg = StatePlaneConfig::default();
        let err = retrieve(&store, "x", &scope("case/project/p7"), &caller(), &PolicySet::default(), 1, 8, &cfg);
        assert!(matches!(err, Err(RetrievalError::PolicyDenied(_))));
    }

    #[test]
    fn binding_facts_bypass_k() {
        let cfg = StatePlaneConfig::default();
        let mut store = StateStore::in_memory();
        store.put(fact("RISK-12", "tech sector weight must stay at or below 28 percent", 0.95, "tenant/org/acme/policies", PromotionStage::ValidatedFact), 1).unwrap();
        store.put(fact("RISK-03", "no single position above 7 percent", 0.95, "tenant/org/acme/policies", PromotionStage::ValidatedFact), 1).unwrap();
        for i in 0..10 {
            store.put(fact(&format!("noise-{i}"), &format!("unrelated filler number {i}"), 0.5, "case/project/p7", PromotionStage::UnverifiedNote), 1).unwrap();
        }
        let r = retrieve(&store, "should we add tsla", &scope("case/project/p7"), &caller(), &allow_all(), 2, 1, &cfg)
            .unwrap();
        assert_eq!(r.ranked.len(), 1);
        let binding_ids: Vec<&str> = r.binding.iter().map(|b| b.id.as_str()).collect();
        assert_eq!(binding_ids, vec!["RISK-03", "RISK-12"]);
    }

    #[test]
    fn tenant_isolation() {
        let cfg = StatePlaneConfig::default();
        let mut store = StateStore::in_memory();
        store.put(fact("a-sec", "acme secret threshold", 0.9, "tenant/org/acme/policies", PromotionStage::ValidatedFact), 1).unwrap();
        store.put(fact("b-sec", "globex secret threshold", 0.9, "tenant/org/globex/policies", PromotionStage::ValidatedFact), 1).unwrap();
        let r = retrieve(&store, "secret threshold", &scope("tenant/org/acme/policies"), &caller(), &allow_all(), 1, 8, &cfg)
            .unwrap();
        let all: Vec<&str> = r.ranked.iter().chain(&r.binding).map(|x| x.id.as_str()).collect();
        assert!(all.contains(&"a-sec"));
        assert!(!all.contains(&"b-sec"));
    }

    #[test]
    fn retrieval_is_deterministic() {
        let cfg = StatePlaneConfig::default();
        let mut store = StateStore::in_memory();
        for i in 0..20 {
            store.put(fact(&format!("f{i}"), "identical statement text", 0.5, "case/project/p7", PromotionStage::UnverifiedNote), 1).unwrap();
        }
        let r1 = retrieve(&store, "identical statement", &scope("case/project/p7"), &caller(), &allow_all(), 2, 8, &cfg).unwrap();
        let r2 = retrieve(&store, "identical statement", &scope("case/project/p7"), &caller(), &allow_all(), 2, 8, &cfg).unwrap();
        assert_eq!(r1, r2);
        // Ties broken by id ascending.
        assert_eq!(r1.ranked[0].id, "f0");
        assert_eq!(r1.ranked[1].id, "f1");
    }

    #[test]
    fn record_results_records_once() {
        let cfg = StatePlaneConfig::default();
        let mut store = StateStore::in_memory();
        store.put(fact("f1", "alpha beta", 0.5, "case/project/p7", PromotionStage::UnverifiedNote), 1).unwrap();
        let r = retrieve(&store, "alpha", &scope("case/project/p7"), &caller(), &allow_all(), 2, 8, &cfg).unwrap();
        record_results(&mut store, &r, 5);
        assert_eq!(store.get("f1").unwrap().retrieval_ticks(), &[5]);
    }
}
