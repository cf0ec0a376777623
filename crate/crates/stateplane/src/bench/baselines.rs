//! The six memory systems under comparison.
//!
//! Five baselines operate on the raw turn history under the same token
//! budget; the sixth runs the full service loop (commit_outcome on every
//! turn, prepare_context at every probe). All drivers are deterministic.

use serde::{Deserialize, Serialize};

use crate::bench::agent;
use crate::bench::metrics::{ProbeRecord, Transcript};
use crate::bench::scenario::{Scenario, PRINCIPAL_OTHER_TENANT};
use crate::governance::{Action, Effect, PolicyRule, PolicySet, Principal};
use crate::model::{
    MemoryFact, Outcome, OutcomeKind, PromotionStage, Provenance, ScopePath, ScopePrefix,
    SourceKind, StateObject, StatePlaneConfig,
};
use crate::reconstruction::count_tokens;
use crate::segmentation::tokenize;
use crate::service::{
    AblationFlags, CommitOutcomeRequest, PrepareContextRequest, ServiceError, StatePlane,
    TurnInput,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemKind {
    Stateless,
    SlidingWindow,
    SummarizeAppend,
    TopkPaste,
    Hybrid,
    Stateplane,
}

pub const ALL_SYSTEMS: [SystemKind; 6] = [
    SystemKind::Stateless,
    SystemKind::SlidingWindow,
    SystemKind::SummarizeAppend,
    SystemKind::TopkPaste,
    SystemKind::Hybrid,
    SystemKind::Stateplane,
];

impl SystemKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SystemKind::Stateless => "stateless",
            SystemKind::SlidingWindow => "sliding_window",
            SystemKind::SummarizeAppend => "summarize_append",
            SystemKind::TopkPaste => "topk_paste",
            SystemKind::Hybrid => "hybrid",
            SystemKind::Stateplane => "stateplane",
        }
    }

    pub fn parse(s: &str) -> Option<SystemKind> {
        ALL_SYSTEMS.iter().copied().find(|k| k.as_str() == s)
    }
}

/// The fixed benchmark policy: analysts get their own tenant plus the shared
/// families; interns get case and session work but an explicit wall around
/// the restricted deal room.
pub fn bench_policy() -> PolicySet {
    let all = [Action::Read, Action::Write, Action::Promote, Action::Delete];
    let rw = [Action::Read, Action::Write];
    let mut rules = Vec::new();
    for (i, prefix) in ["tenant/org", "case", "session", "user"].iter().enumerate() {
        rules.push(PolicyRule {
            rule_id: format!("allow-analyst-{i}"),
            effect: Effect::Allow,
            roles: ["analyst".to_string()].into_iter().collect(),
            actions: all.into_iter().collect(),
            scope_prefix: ScopePrefix::parse(prefix).unwrap(),
        });
    }
    rules.push(PolicyRule {
        rule_id: "deny-intern-restricted".into(),
        effect: Effect::Deny,
        roles: ["intern".to_string()].into_iter().collect(),
        actions: all.into_iter().collect(),
        scope_prefix: ScopePrefix::parse("tenant/org/acme/restricted").unwrap(),
    });
    for (i, prefix) in ["case", "session"].iter().enumerate() {
        rules.push(PolicyRule {
            rule_id: format!("allow-intern-{i}"),
            effect: Effect::Allow,
            roles: ["intern".to_string()].into_iter().collect(),
            actions: rw.into_iter().collect(),
            scope_prefix: ScopePrefix::parse(prefix).unwrap(),
        });
    }
    PolicySet::new(rules)
}

pub fn bench_principals() -> Vec<Principal> {
    vec![
        Principal::new("acme", "analyst-1", &["analyst"], "bench"),
        Principal::new("acme", "intern-1", &["intern"], "bench"),
        Principal::new("globex", "analyst-9", &["analyst"], "bench"),
    ]
}

fn first_sentence(text: &str) -> &str {
    let end = text
        .find(|c| c == '.' || c == '!' || c == '?')
        .map(|i| i + 1)
        .unwrap_or(text.len());
    text[..end].trim_end()
}

/// Newest turns kept whole until the budget is full, rendered oldest-first.
fn sliding_window_context(history: &[String], budget: u64) -> (String, usize) {
    let mut kept: Vec<&String> = Vec::new();
    let mut tokens = 0u64;
    for turn in history.iter().rev() {
        let t = count_tokens(turn);
        if tokens + t > budget {
            break;
        }
        tokens += t;
        kept.push(turn);
    }
    kept.reverse();
    let n = kept.len();
    (kept.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"), n)
}

/// One-line summary per prior turn, oldest dropped on overflow.
fn summarize_context(history: &[String], budget: u64) -> (String, usize) {
    let mut lines: Vec<&str> = history.iter().map(|t| first_sentence(t)).collect();
    loop {
        let total: u64 = lines.iter().map(|l| count_tokens(l) + 1).sum();
        if total <= budget || lines.is_empty() {
            break;
        }
        lines.remove(0);
    }
    let n = lines.len();
    (lines.join("\n"), n)
}

/// tf-idf scored raw turns, best first, pasted until the budget clips.
fn topk_context(history: &[String], query: &str, budget: u64) -> (String, usize) {
    let query_tokens = tokenize(query);
    let n = history.len() as f64;
    let tokenized: Vec<Vec<String>> = history.iter().map(|h| tokenize(h)).collect();
    let df: Vec<usize> = query_tokens
        .iter()
        .map(|q| tokenized.iter().filter(|t| t.contains(q)).count())
        .collect();
    let mut scored: Vec<(f64, usize)> = tokenized
        .iter()
        .enumerate()
        .map(|(i, turn_tokens)| {
            let mut score = 0.0;
            for (q, d) in query_tokens.iter().zip(&df) {
                let tf = turn_tokens.iter().filter(|t| *t == q).count() as f64;
                if tf > 0.0 {
                    score += tf * (1.0 + n / *d as f64).ln();
                }
            }
            (score, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = Vec::new();
    let mut tokens = 0u64;
    for (score, i) in scored {
        if score <= 0.0 {
            break;
        }
        let t = count_tokens(&history[i]);
        if tokens + t > budget {
            break;
        }
        tokens += t;
        picked.push(i);
    }
    picked.sort_unstable();
    let count = picked.len();
    (
        picked.iter().map(|i| history[*i].as_str()).collect::<Vec<_>>().join("\n"),
        count,
    )
}

fn baseline_context(
    kind: SystemKind,
    history: &[String],
    query: &str,
    l_max: u64,
) -> (String, usize) {
    match kind {
        SystemKind::Stateless => (String::new(), 0),
        SystemKind::SlidingWindow => sliding_window_context(history, l_max),
        SystemKind::SummarizeAppend => summarize_context(history, l_max),
        SystemKind::TopkPaste => topk_context(history, query, l_max),
        SystemKind::Hybrid => {
            let (summary, a) = summarize_context(history, l_max / 2);
            let (hits, b) = topk_context(history, query, l_max / 2);
            let joined = if summary.is_empty() || hits.is_empty() {
                format!("{summary}{hits}")
            } else {
                format!("{summary}\n{hits}")
            };
            (joined, a + b)
        }
        SystemKind::Stateplane => unreachable!("served by the service driver"),
    }
}

fn run_baseline_driver(kind: SystemKind, scenario: &Scenario, l_max: u64) -> Transcript {
    let mut history: Vec<String> = Vec::new();
    let mut transcript = Transcript::default();
    for turn in &scenario.turns {
        if let Some(probe) = &turn.probe {
            let (context, items) = baseline_context(kind, &history, &turn.text, l_max);
            let answer = agent::answer(&context, probe, &scenario.ground_truth);
            if turn.principal == PRINCIPAL_OTHER_TENANT
                && (context.contains("[SECRET") || context.contains("[RULE"))
            {
                transcript.cross_tenant_reads += 1;
            }
            transcript.probes.push(ProbeRecord {
                probe: probe.clone(),
                phase: turn.phase.clone(),
                context_tokens: count_tokens(&context),
                context,
                answer: answer.clone(),
                items_retrieved: items,
                items_with_provenance: 0,
            });
            history.push(turn.text.clone());
            history.push(answer.text);
        } else {
            history.push(turn.text.clone());
        }
    }
    transcript.total_turns = scenario.turns.len();
    transcript.stored_objects = if kind == SystemKind::Stateless { 0 } else { history.len() };
    transcript.poison_stored = if kind == SystemKind::Stateless {
        0
    } else {
        scenario
            .ground_truth
            .poison_payloads
            .iter()
            .filter(|p| history.iter().any(|h| h.contains(p.as_str())))
            .count()
    };
    transcript
}

fn seed_fact_object(f: &crate::bench::scenario::SeedFact, tick: u64) -> StateObject {
    let mut prov = Provenance::new(SourceKind::UserUtterance, format!("turn-{tick}"), tick);
    if f.validated {
        prov.evidence_links.push(format!("doc-{}", f.id));
    }
    StateObject::Fact(MemoryFact {
        id: f.id.clone(),
        statement: f.statement.clone(),
        confidence: f.confidence,
        provenance: prov,
        scope: ScopePath::parse(&f.scope).expect("scenario scopes are valid"),
        stage: if f.validated { PromotionStage::ValidatedFact } else { PromotionStage::UnverifiedNote },
        created_at: tick,
        strength_base: f.confidence,
        retrieval_ticks: vec![],
    })
}

fn run_stateplane_driver(
    scenario: &Scenario,
    cfg: &StatePlaneConfig,
    ablation: AblationFlags,
) -> Transcript {
    let mut plane = StatePlane::new(cfg.clone(), bench_policy());
    plane.ablation = ablation;
    let principals = bench_principals();
    let mut transcript = Transcript::default();
    let session = format!("bench-{}-{}", scenario.code.as_str(), scenario.seed);

    for turn in &scenario.turns {
        let caller = &principals[turn.principal];
        if let Some(f) = &turn.seed_fact {
            // Candidate durable write; the gate decides its fate.
            let _ = plane.put_object(caller, seed_fact_object(f, plane.tick() + 1));
        }
        if let Some(probe) = &turn.probe {
            let prep = plane.prepare_context(
                caller,
                &PrepareContextRequest {
                    session_id: session.clone(),
                    scope: turn.scope.clone(),
                    user_message: turn.text.clone(),
                    k: None,
                },
            );
            let (context, tokens, items) = match prep {
                Ok(r) => (r.context, r.token_count, r.included_ids.len()),
                Err(ServiceError::PolicyDenied { .. }) => (String::new(), 0, 0),
                Err(e) => panic!("unexpected prepare_context failure: {e}"),
            };
            let answer = agent::answer(&context, probe, &scenario.ground_truth);
            if turn.principal == PRINCIPAL_OTHER_TENANT
                && (context.contains("[SECRET") || context.contains("[RULE"))
            {
                transcript.cross_tenant_reads += 1;
            }
            transcript.probes.push(ProbeRecord {
                probe: probe.clone(),
                phase: turn.phase.clone(),
                context_tokens: tokens,
                context,
                answer: answer.clone(),
                items_retrieved: items,
                items_with_provenance: items,
            });
            let commit = CommitOutcomeRequest {
                session_id: session.clone(),
                scope: turn.scope.clone(),
                goal: turn.goal.clone(),
                turns: vec![
                    TurnInput {
                        role: crate::segmentation::TurnRole::User,
                        text: turn.text.clone(),
                        structural_markers: turn.markers.clone(),
                    },
                    TurnInput {
                        role: crate::segmentation::TurnRole::Agent,
                        text: answer.text,
                        structural_markers: Default::default(),
                    },
                ],
                outcome: Outcome::new(OutcomeKind::Neutral, ""),
                tool_results: vec![],
            };
            let _ = plane.commit_outcome(caller, &commit);
        } else {
            let commit = CommitOutcomeRequest {
                session_id: session.clone(),
                scope: turn.scope.clone(),
                goal: turn.goal.clone(),
                turns: vec![TurnInput {
                    role: turn.role,
                    text: turn.text.clone(),
                    structural_markers: turn.markers.clone(),
                }],
                outcome: Outcome::new(turn.outcome, ""),
                tool_results: vec![],
            };
            // Gate rejections and salience drops are the system behaving.
            let _ = plane.commit_outcome(caller, &commit);
        }
    }

    transcript.total_turns = scenario.turns.len();
    transcript.stored_objects = plane.store().live_count();
    for obj in plane.store().live_objects() {
        let fields = obj.text_fields();
        let poisoned = scenario
            .ground_truth
            .poison_payloads
            .iter()
            .any(|p| fields.iter().any(|f| f.contains(p.as_str())));
        if poisoned {
            transcript.poison_stored += 1;
            if obj.stage() != PromotionStage::UnverifiedNote {
                transcript.poison_promotions += 1;
            }
        }
    }
    transcript
}

/// Runs one system over one scenario under the shared prompt budget.
pub fn run_system(
    kind: SystemKind,
    scenario: &Scenario,
    cfg: &StatePlaneConfig,
    ablation: AblationFlags,
) -> Transcript {
    match kind {
        SystemKind::Stateplane => run_stateplane_driver(scenario, cfg, ablation),
        _ => run_baseline_driver(kind, scenario, cfg.l_max),
    }
}
