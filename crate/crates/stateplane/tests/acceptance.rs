//! Release gate: one test per guarantee, each printing a PASS/FAIL line.
//!
//! The numeric checks compare production code against independently written
//! closed-form oracles; the behavioral checks drive the full service loop
//! and the benchmark harness end to end.

use std::path::Path;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stateplane::bench::baselines::{bench_policy, bench_principals, run_system, SystemKind};
use stateplane::bench::scenario::{generate_scenario, BenchmarkCode};
use stateplane::bench::suite::{render_csv, run_suite, BenchConfig};
use stateplane::encoding::{write_gate, GateDecision, GatePatterns};
use stateplane::governance::{verify_events, Action, Effect, PolicyRule, PolicySet, Principal};
use stateplane::model::{
    MemoryFact, Outcome, OutcomeKind, PromotionStage, Provenance, ScopePath, ScopePrefix,
    SourceKind, StateObject, StatePlaneConfig, Procedure,
};
use stateplane::reconstruction::{count_tokens, reconstruct, ReconstructError};
use stateplane::model::StateKind;
use stateplane::retrieval::{IntentWeights, RankedItem, RetrievalResult};
use stateplane::segmentation::{
    build_smoothed_pair, kl_divergence, InteractionTurn, TurnRole,
};
use stateplane::service::{
    CommitOutcomeRequest, PrepareContextRequest, ServiceError, StatePlane, TurnInput,
};
use stateplane::store::{PromoteError, StateStore};

fn report(name: &str, result: Result<(), String>) {
    match &result {
        Ok(()) => println!("[PASS] {name}"),
        Err(e) => println!("[FAIL] {name}: {e}"),
    }
    if let Err(e) = result {
        panic!("{name}: {e}");
    }
}

fn permissive_policy() -> PolicySet {
    let rules = ["tenant", "user", "case", "session"]
        .iter()
        .enumerate()
        .map(|(i, p)| PolicyRule {
            rule_id: format!("allow-{i}"),
            effect: Effect::Allow,
            roles: Default::default(),
            actions: [Action::Read, Action::Write, Action::Promote, Action::Delete]
                .into_iter()
                .collect(),
            scope_prefix: ScopePrefix::parse(p).unwrap(),
        })
        .collect();
    PolicySet::new(rules)
}

fn principal() -> Principal {
    Principal::new("acme", "u1", &["analyst"], "s1")
}

fn fact(id: &str, statement: &str, scope: &str, tick: u64) -> StateObject {
    StateObject::Fact(MemoryFact {
        id: id.to_string(),
        statement: statement.to_string(),
        confidence: 0.9,
        provenance: Provenance::new(SourceKind::ToolOutput, "t", tick),
        scope: ScopePath::parse(scope).unwrap(),
        stage: PromotionStage::UnverifiedNote,
        created_at: tick,
        strength_base: 0.9,
        retrieval_ticks: vec![],
    })
}

// ---------------------------------------------------------------------------
// 1. The assembled context can never exceed its token budget.
// ---------------------------------------------------------------------------

#[test]
fn context_budget_is_never_exceeded() {
    let started = Instant::now();
    let run = || -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vocab = ["alpha", "beta", "gamma", "delta", "omega", "sigma", "kappa", "theta"];
        let mut store = StateStore::in_memory();
        let mut ids = Vec::new();
        for i in 0..150 {
            let words: Vec<&str> = (0..rng.gen_range(5..400))
                .map(|_| vocab[rng.gen_range(0..vocab.len())])
                .collect();
            let id = format!("f-{i:03}");
            store
                .put(fact(&id, &words.join(" "), "case/project/x", i), i)
                .map_err(|e| e.to_string())?;
            ids.push(id);
        }
        let budgets = [128u64, 256, 512, 2048];
        for trial in 0..100_000u64 {
            let cfg = StatePlaneConfig {
                l_max: budgets[rng.gen_range(0..budgets.len())],
                ..StatePlaneConfig::default()
            };
            let picks = rng.gen_range(0..12);
            let ranked: Vec<RankedItem> = (0..picks)
                .map(|_| RankedItem {
                    id: ids[rng.gen_range(0..ids.len())].clone(),
                    score: rng.gen_range(0.0..2.0),
                    kind: StateKind::Fact,
                })
                .collect();
            let binding: Vec<RankedItem> = (0..rng.gen_range(0..4))
                .map(|_| RankedItem {
                    id: ids[rng.gen_range(0..ids.len())].clone(),
                    score: 1.0,
                    kind: StateKind::Fact,
                })
                .collect();
            let results = RetrievalResult {
                ranked,
                binding,
                applied_policy_rules: vec![],
                intent: IntentWeights { semantic: 0.4, episodic: 0.4, procedural: 0.2 },
            };
            let msg = "query word ".repeat(rng.gen_range(0..700));
            match reconstruct(&store, &results, &msg, &cfg) {
                Ok(ctx) => {
                    if ctx.token_count > ctx.budget {
                        return Err(format!(
                            "trial {trial}: {} tokens over budget {}",
                            ctx.token_count, ctx.budget
                        ));
                    }
                    if count_tokens(&ctx.rendered) != ctx.token_count {
                        return Err(format!("trial {trial}: token_count mismatch"));
                    }
                }
                Err(ReconstructError::BudgetExhausted) => {
                    let consumed = count_tokens(&msg) + 64;
                    if consumed < cfg.l_max {
                        return Err(format!("trial {trial}: spurious budget exhaustion"));
                    }
                }
            }
        }

        // A full 500-turn service session stays bounded on every turn.
        let mut plane = StatePlane::new(StatePlaneConfig::default(), permissive_policy());
        let caller = principal();
        for turn in 0..500u64 {
            let text = format!(
                "turn {turn}: the {} review covered the {} budget line in detail.",
                vocab[(turn % 8) as usize],
                vocab[((turn / 8) % 8) as usize]
            );
            let resp = plane
                .prepare_context(
                    &caller,
                    &PrepareContextRequest {
                        session_id: "s1".into(),
                        scope: "case/project/x".into(),
                        user_message: text.clone(),
                        k: None,
                    },
                )
                .map_err(|e| format!("turn {turn}: {e}"))?;
            if resp.token_count > resp.budget {
                return Err(format!("turn {turn}: context over budget"));
            }
            plane
                .commit_outcome(
                    &caller,
                    &CommitOutcomeRequest {
                        session_id: "s1".into(),
                        scope: "case/project/x".into(),
                        goal: "routine work".into(),
                        turns: vec![TurnInput {
                            role: TurnRole::User,
                            text,
                            structural_markers: Default::default(),
                        }],
                        outcome: Outcome::new(OutcomeKind::Neutral, ""),
                        tool_results: vec![],
                    },
                )
                .map_err(|e| format!("turn {turn}: {e}"))?;
        }
        if started.elapsed() > Duration::from_secs(60) {
            return Err(format!("took {:?}, limit 60s", started.elapsed()));
        }
        Ok(())
    };
    report("context budget is never exceeded (1e5 fuzz + 500-turn session, <60s)", run());
}

// ---------------------------------------------------------------------------
// 2. Memory strength matches the closed-form decay curve.
// ---------------------------------------------------------------------------

#[test]
fn decay_matches_closed_form_oracle() {
    let started = Instant::now();
    let run = || -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10_000u64 {
            let s0 = rng.gen_range(0.0..1.0);
            let t0 = rng.gen_range(0..100_000u64);
            let now = t0 + rng.gen_range(0..50_000u64);
            let lambda = rng.gen_range(1e-6..1e-2);
            let alpha = rng.gen_range(0.0..0.5);
            let ticks: Vec<u64> = (0..rng.gen_range(0..20))
                .map(|_| t0 + rng.gen_range(0..60_000u64))
                .collect();
            let cfg = StatePlaneConfig {
                lambda_decay: lambda,
                alpha_reinforce: alpha,
                ..StatePlaneConfig::default()
            };
            let obj = StateObject::Fact(MemoryFact {
                id: "f".into(),
                statement: "s".into(),
                confidence: s0,
                provenance: Provenance::new(SourceKind::ToolOutput, "t", t0),
                scope: ScopePath::parse("case/a/b").unwrap(),
                stage: PromotionStage::UnverifiedNote,
                created_at: t0,
                strength_base: s0,
                retrieval_ticks: ticks.clone(),
            });
            // Independent oracle, written from the definition.
            let elapsed = (now - t0) as f64;
            let reinforcements = ticks.iter().filter(|t| **t < now).count() as f64;
            let expected = s0 * f64::exp(-lambda * elapsed) + alpha * reinforcements;
            let actual = StateStore::strength(&obj, now, &cfg);
            if (actual - expected).abs() > 1e-9 {
                return Err(format!(
                    "trial {trial}: strength {actual} vs oracle {expected}"
                ));
            }
        }
        if started.elapsed() > Duration::from_secs(5) {
            return Err(format!("took {:?}, limit 5s", started.elapsed()));
        }
        Ok(())
    };
    report("decay strength matches closed form (1e4 tuples, 1e-9, <5s)", run());
}

// ---------------------------------------------------------------------------
// 3. Boundary divergence matches an independent KL computation.
// ---------------------------------------------------------------------------

#[test]
fn divergence_matches_independent_oracle() {
    let started = Instant::now();
    let run = || -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let vocab = [
            "plan", "review", "ship", "deck", "notes", "sheet", "chart", "model", "draft",
            "tally", "ledger", "brief", "scope", "sync", "audit", "memo", "queue", "batch",
        ];
        let window = |rng: &mut ChaCha8Rng| -> Vec<InteractionTurn> {
            (0..rng.gen_range(1..8))
                .map(|i| {
                    let words: Vec<&str> = (0..rng.gen_range(3..40))
                        .map(|_| vocab[rng.gen_range(0..vocab.len())])
                        .collect();
                    InteractionTurn {
                        tick: i,
                        role: TurnRole::User,
                        text: words.join(" "),
                        structural_markers: Default::default(),
                    }
                })
                .collect()
        };
        for trial in 0..1_000u64 {
            let before = window(&mut rng);
            let after = window(&mut rng);
            let (p, q) = build_smoothed_pair(&before, &after).map_err(|e| e.to_string())?;
            let actual = kl_divergence(&p, &q).map_err(|e| e.to_string())?;

            // Oracle: recount with hash maps and apply the definition directly.
            let count = |turns: &[InteractionTurn]| {
                let mut m: std::collections::HashMap<String, u64> = Default::default();
                for t in turns {
                    for tok in t.text.to_lowercase().split(|c: char| !c.is_alphanumeric()) {
                        if !tok.is_empty() {
                            *m.entry(tok.to_string()).or_default() += 1;
                        }
                    }
                }
                m
            };
            let cb = count(&before);
            let ca = count(&after);
            let mut union: Vec<&String> = cb.keys().chain(ca.keys()).collect();
            union.sort();
            union.dedup();
            let v = union.len() as f64;
            let nb: u64 = cb.values().sum();
            let na: u64 = ca.values().sum();
            let mut expected = 0.0;
            for tok in union {
                let pi = (cb.get(tok).copied().unwrap_or(0) as f64 + 1.0) / (nb as f64 + v);
                let qi = (ca.get(tok).copied().unwrap_or(0) as f64 + 1.0) / (na as f64 + v);
                expected += pi * (pi / qi).ln();
            }
            let expected = expected.max(0.0);
            if (actual - expected).abs() > 1e-12 {
                return Err(format!("trial {trial}: kl {actual} vs oracle {expected}"));
            }
        }
        if started.elapsed() > Duration::from_secs(10) {
            return Err(format!("took {:?}, limit 10s", started.elapsed()));
        }
        Ok(())
    };
    report("boundary divergence matches independent oracle (1e3 pairs, 1e-12, <10s)", run());
}

// ---------------------------------------------------------------------------
// 4. Long-horizon constraint tracking dominates the window baseline.
// ---------------------------------------------------------------------------

#[test]
fn constraint_tracking_dominates_window_baseline() {
    let started = Instant::now();
    let run = || -> Result<(), String> {
        let cfg = StatePlaneConfig::default();
        for seed in [1u64, 2, 3] {
            for horizon in [1u32, 2, 4, 8] {
                let s = generate_scenario(BenchmarkCode::LhPct, seed, horizon, cfg.l_max);
                let t = run_system(SystemKind::Stateplane, &s, &cfg, Default::default());
                let m = stateplane::bench::metrics::compute_metrics(&t, &s.ground_truth)
                    .map_err(|e| e.to_string())?;
                if m.ccr != 1.0 {
                    return Err(format!("service ccr {} at seed {seed} horizon {horizon}", m.ccr));
                }
            }
            for (horizon, check) in [(1u32, 1.0f64), (8, 0.1)] {
                let s = generate_scenario(BenchmarkCode::LhPct, seed, horizon, cfg.l_max);
                let t = run_system(SystemKind::SlidingWindow, &s, &cfg, Default::default());
                let m = stateplane::bench::metrics::compute_metrics(&t, &s.ground_truth)
                    .map_err(|e| e.to_string())?;
                let ok = if horizon == 1 { m.ccr == check } else { m.ccr <= check };
                if !ok {
                    return Err(format!(
                        "window baseline ccr {} at seed {seed} horizon {horizon}",
                        m.ccr
                    ));
                }
            }
        }
        if started.elapsed() > Duration::from_secs(300) {
            return Err(format!("took {:?}, limit 5min", started.elapsed()));
        }
        Ok(())
    };
    report(
        "constraint tracking: service 1.0 at all horizons, window baseline decays (<5min)",
        run(),
    );
}

// ---------------------------------------------------------------------------
// 5. Injected instructions are quarantined end to end.
// ---------------------------------------------------------------------------

fn corpus_lines(name: &str) -> Vec<String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name);
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_string())
        .collect()
}

#[test]
fn injected_instructions_are_quarantined() {
    let run = || -> Result<(), String> {
        let policy = permissive_policy();
        let caller = principal();
        let patterns = GatePatterns::builtin();
        for (i, line) in corpus_lines("injection_corpus.txt").iter().enumerate() {
            let (verdict, _) = write_gate(&fact("inj", line, "case/a/b", 1), &caller, &policy, patterns);
            if verdict.decision != GateDecision::Reject {
                return Err(format!("injection line {i} was not rejected: {line}"));
            }
        }
        for (i, line) in corpus_lines("benign_corpus.txt").iter().enumerate() {
            let (verdict, _) = write_gate(&fact("ben", line, "case/a/b", 1), &caller, &policy, patterns);
            if verdict.decision == GateDecision::Reject {
                return Err(format!("benign line {i} was rejected: {line}"));
            }
        }

        for seed in [1u64, 2, 3] {
            let s = generate_scenario(BenchmarkCode::MpRi, seed, 2, 2048);
            let t = run_system(SystemKind::Stateplane, &s, &StatePlaneConfig::default(), Default::default());
            if t.poison_stored != 0 || t.poison_promotions != 0 {
                return Err(format!(
                    "seed {seed}: {} poison stored, {} promoted",
                    t.poison_stored, t.poison_promotions
                ));
            }
            let answers = |phase: &str| -> Vec<String> {
                t.probes
                    .iter()
                    .filter(|p| p.phase.as_deref() == Some(phase))
                    .map(|p| p.answer.text.clone())
                    .collect()
            };
            if answers("pre") != answers("post") {
                return Err(format!("seed {seed}: answers drifted after poisoning"));
            }
        }
        Ok(())
    };
    report(
        "poison quarantine: full corpus rejected, zero stored or promoted, probes byte-stable",
        run(),
    );
}

// ---------------------------------------------------------------------------
// 6. Restricted scopes never leak and every denial is audited.
// ---------------------------------------------------------------------------

#[test]
fn restricted_scopes_never_leak() {
    let run = || -> Result<(), String> {
        for seed in [1u64, 2, 3] {
            for horizon in [1u32, 2] {
                let s = generate_scenario(BenchmarkCode::Prse, seed, horizon, 2048);
                let t = run_system(SystemKind::Stateplane, &s, &StatePlaneConfig::default(), Default::default());
                let m = stateplane::bench::metrics::compute_metrics(&t, &s.ground_truth)
                    .map_err(|e| e.to_string())?;
                if m.srl != 0.0 {
                    return Err(format!("seed {seed} horizon {horizon}: leak rate {}", m.srl));
                }
                if t.cross_tenant_reads != 0 {
                    return Err(format!(
                        "seed {seed} horizon {horizon}: {} cross-tenant reads",
                        t.cross_tenant_reads
                    ));
                }
            }
        }

        // A direct denied read is refused with an audit trail behind it.
        let mut plane = StatePlane::new(StatePlaneConfig::default(), bench_policy());
        let intern = bench_principals()[1].clone();
        let err = plane
            .prepare_context(
                &intern,
                &PrepareContextRequest {
                    session_id: "s1".into(),
                    scope: "tenant/org/acme/restricted".into(),
                    user_message: "show me the deal room".into(),
                    k: None,
                },
            )
            .err()
            .ok_or("denied read unexpectedly succeeded")?;
        let audit_id = match err {
            ServiceError::PolicyDenied { audit_event_id: Some(id), .. } => id,
            other => return Err(format!("expected an audited denial, got: {other}")),
        };
        let logged = plane
            .audit()
            .events()
            .iter()
            .any(|e| e.event_id == audit_id && e.decision == Effect::Deny);
        if !logged {
            return Err("denial was not written to the audit log".into());
        }
        Ok(())
    };
    report("restricted scopes: zero leaks, zero cross-tenant reads, denials audited", run());
}

// ---------------------------------------------------------------------------
// 7. The audit chain is tamper-evident and reconciles 1:1 with operations.
// ---------------------------------------------------------------------------

#[test]
fn audit_chain_is_tamper_evident() {
    let run = || -> Result<(), String> {
        let mut plane = StatePlane::new(StatePlaneConfig::default(), permissive_policy());
        let caller = principal();
        let mut op_ids = Vec::new();
        for i in 0..1_000u64 {
            if i % 2 == 0 {
                let resp = plane
                    .prepare_context(
                        &caller,
                        &PrepareContextRequest {
                            session_id: "s1".into(),
                            scope: "case/project/x".into(),
                            user_message: format!("status question {i}"),
                            k: None,
                        },
                    )
                    .map_err(|e| e.to_string())?;
                op_ids.push(resp.audit_event_id);
            } else {
                let resp = plane
                    .commit_outcome(
                        &caller,
                        &CommitOutcomeRequest {
                            session_id: "s1".into(),
                            scope: "case/project/x".into(),
                            goal: "routine work".into(),
                            turns: vec![TurnInput {
                                role: TurnRole::User,
                                text: format!("the team closed item {i} this morning."),
                                structural_markers: Default::default(),
                            }],
                            outcome: Outcome::new(OutcomeKind::Neutral, ""),
                            tool_results: vec![],
                        },
                    )
                    .map_err(|e| e.to_string())?;
                op_ids.push(resp.audit_event_id);
            }
        }
        let report = plane.verify_audit();
        if !report.valid {
            return Err(format!("chain invalid at {:?}", report.first_invalid));
        }
        if report.events != op_ids.len() {
            return Err(format!(
                "reconciliation failed: {} events for {} operations",
                report.events,
                op_ids.len()
            ));
        }
        let mut sorted = op_ids.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != op_ids.len() {
            return Err("duplicate audit event ids".into());
        }
        for id in &op_ids {
            if !plane.audit().events().iter().any(|e| &e.event_id == id) {
                return Err(format!("operation event {id} missing from the log"));
            }
        }

        // Any mutation breaks verification at or before the touched event.
        let mut tampered = plane.audit().events().to_vec();
        tampered[500].scope = "case/project/other".into();
        let verdict = verify_events(&tampered);
        if verdict.valid || verdict.first_invalid != Some(500) {
            return Err(format!("tampering not detected: {verdict:?}"));
        }
        Ok(())
    };
    report("audit chain: 1e3 events verify, mutations detected, 1:1 reconciliation", run());
}

// ---------------------------------------------------------------------------
// 8. Promotion ladder invariants hold for arbitrary inputs.
// ---------------------------------------------------------------------------

fn stage_of(n: u8) -> PromotionStage {
    match n % 4 {
        0 => PromotionStage::UnverifiedNote,
        1 => PromotionStage::ValidatedFact,
        2 => PromotionStage::ReusableProcedure,
        _ => PromotionStage::EpisodicDecisionRecord,
    }
}

fn procedure(stage: PromotionStage, successes: u64) -> StateObject {
    StateObject::Procedure(Procedure {
        id: "p".into(),
        name: "close the books".into(),
        preconditions: vec![],
        steps: vec!["export the ledger".into(), "check the totals".into()],
        tools: vec!["ledger-cli".into()],
        success_count: successes,
        attempt_count: successes.max(1),
        approved: false,
        provenance: Provenance::new(SourceKind::ToolOutput, "t", 1),
        scope: ScopePath::parse("case/a/b").unwrap(),
        stage,
        created_at: 1,
        retrieval_ticks: vec![],
    })
}

fn approval() -> Provenance {
    Provenance::new(SourceKind::HumanApproval, "review-1", 5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn promotion_skips_and_demotions_always_fail(from in 0u8..4, to in 0u8..4) {
        let (from, to) = (stage_of(from), stage_of(to));
        prop_assume!(to.ordinal() != from.ordinal() + 1);
        let cfg = StatePlaneConfig::default();
        let mut store = StateStore::in_memory();
        let mut obj = procedure(from, 10);
        if let StateObject::Procedure(p) = &mut obj { p.approved = true; }
        store.put(obj, 1).unwrap();
        let result = store.promote("p", to, Some(approval()), &cfg, 2);
        let rejected = matches!(result, Err(PromoteError::IllegalTransition { .. }));
        prop_assert!(rejected);
    }

    #[test]
    fn procedure_promotion_needs_successes_and_approval(
        successes in 0u64..8,
        with_approval in any::<bool>(),
    ) {
        let cfg = StatePlaneConfig::default();
        let mut store = StateStore::in_memory();
        store.put(procedure(PromotionStage::ValidatedFact, successes), 1).unwrap();
        let approval = if with_approval { Some(approval()) } else { None };
        let result = store.promote("p", PromotionStage::ReusableProcedure, approval, &cfg, 2);
        if successes >= cfg.promotion_min_successes && with_approval {
            prop_assert!(result.is_ok());
            prop_assert_eq!(store.get("p").unwrap().stage(), PromotionStage::ReusableProcedure);
        } else {
            let rejected = matches!(result, Err(PromoteError::MissingApproval { .. }));
            prop_assert!(rejected);
        }
    }

    #[test]
    fn fact_validation_needs_evidence(with_evidence in any::<bool>()) {
        let cfg = StatePlaneConfig::default();
        let mut store = StateStore::in_memory();
        let mut f = fact("f", "the export job runs nightly", "case/a/b", 1);
        if with_evidence {
            if let StateObject::Fact(inner) = &mut f {
                inner.provenance.evidence_links.push("log-2026-01-01".into());
            }
        }
        store.put(f, 1).unwrap();
        let result = store.promote("f", PromotionStage::ValidatedFact, None, &cfg, 2);
        if with_evidence {
            prop_assert!(result.is_ok());
        } else {
            prop_assert!(matches!(result, Err(PromoteError::MissingEvidence)));
        }
    }
}

#[test]
fn promotion_invariants_gate() {
    // The three property tests above are the evidence; this records the line.
    report("promotion ladder: no skips or demotions, gated by evidence and approval", Ok(()));
}

// ---------------------------------------------------------------------------
// 9. Everything replays deterministically.
// ---------------------------------------------------------------------------

#[test]
fn results_and_state_replay_deterministically() {
    let run = || -> Result<(), String> {
        let cfg = BenchConfig {
            seeds: vec![1, 2],
            horizons: vec![1, 2],
            systems: vec!["stateless".into(), "sliding_window".into(), "stateplane".into()],
            ..BenchConfig::default()
        };
        let a = render_csv(&run_suite(&cfg).map_err(|e| e.to_string())?);
        let b = render_csv(&run_suite(&cfg).map_err(|e| e.to_string())?);
        if a != b {
            return Err("benchmark results differ between identical runs".into());
        }

        // A persisted store rebuilt from its log matches the live digest.
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let caller = principal();
        let digest_live = {
            let mut plane =
                StatePlane::open(dir.path(), StatePlaneConfig::default(), permissive_policy())
                    .map_err(|e| e.to_string())?;
            for i in 0..50u64 {
                plane
                    .commit_outcome(
                        &caller,
                        &CommitOutcomeRequest {
                            session_id: "s1".into(),
                            scope: "case/project/x".into(),
                            goal: format!("work item {i}"),
                            turns: vec![TurnInput {
                                role: TurnRole::User,
                                text: format!("we agreed to archive batch {i} after review."),
                                structural_markers: [stateplane::segmentation::StructuralMarker::Decision]
                                    .into_iter()
                                    .collect(),
                            }],
                            outcome: Outcome::new(OutcomeKind::Success, ""),
                            tool_results: vec![],
                        },
                    )
                    .map_err(|e| e.to_string())?;
            }
            plane.store().state_digest()
        };
        let reopened =
            StatePlane::open(dir.path(), StatePlaneConfig::default(), permissive_policy())
                .map_err(|e| e.to_string())?;
        if reopened.store().state_digest() != digest_live {
            return Err("replayed store digest differs from the live store".into());
        }
        if !reopened.store().indices_consistent() {
            return Err("replayed indices are inconsistent".into());
        }
        if !reopened.verify_audit().valid {
            return Err("audit chain invalid after reopen".into());
        }
        Ok(())
    };
    report("determinism: byte-identical results and log replay reproduces state", run());
}

// ---------------------------------------------------------------------------
// 10. User data can be physically forgotten.
// ---------------------------------------------------------------------------

#[test]
fn user_scopes_are_physically_forgotten() {
    let run = || -> Result<(), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut plane =
            StatePlane::open(dir.path(), StatePlaneConfig::default(), permissive_policy())
                .map_err(|e| e.to_string())?;
        let caller = principal();
        let marker = "prefers quarterly digests delivered on fridays";
        plane
            .commit_outcome(
                &caller,
                &CommitOutcomeRequest {
                    session_id: "s1".into(),
                    scope: "user/u1/prefs".into(),
                    goal: "capture preference".into(),
                    turns: vec![TurnInput {
                        role: TurnRole::User,
                        text: format!("note that this account {marker}."),
                        structural_markers: [stateplane::segmentation::StructuralMarker::Decision]
                            .into_iter()
                            .collect(),
                    }],
                    outcome: Outcome::new(OutcomeKind::Success, ""),
                    tool_results: vec![],
                },
            )
            .map_err(|e| e.to_string())?;
        let log_path = dir.path().join("log.jsonl");
        let before = std::fs::read_to_string(&log_path).map_err(|e| e.to_string())?;
        if !before.contains(marker) {
            return Err("fixture content never reached the log".into());
        }

        let resp = plane.forget_scope(&caller, "user/u1/prefs").map_err(|e| e.to_string())?;
        if resp.deleted_count == 0 {
            return Err("nothing was deleted".into());
        }
        let after = std::fs::read_to_string(&log_path).map_err(|e| e.to_string())?;
        if after.contains(marker) {
            return Err("content survived in the persisted log".into());
        }
        let gone = plane
            .store()
            .live_objects()
            .all(|o| !o.text_fields().iter().any(|f| f.contains(marker)));
        if !gone {
            return Err("content survived in live state".into());
        }

        // Only user-family scopes may be erased this way.
        match plane.forget_scope(&caller, "case/project/x") {
            Err(ServiceError::NonUserScope(_)) => {}
            other => return Err(format!("non-user erase was not refused: {other:?}")),
        }
        // The erasure itself is audited and the chain still verifies.
        let audited = plane
            .audit()
            .events()
            .iter()
            .any(|e| e.event_id == resp.audit_event_id && e.action == "delete");
        if !audited {
            return Err("erasure missing from the audit log".into());
        }
        if !plane.verify_audit().valid {
            return Err("audit chain invalid after erasure".into());
        }
        Ok(())
    };
    report("right to forget: user scopes physically erased, others refused, audited", run());
}
