//! The plane's orchestration layer: one struct owning the store, the audit
//! log, the policy set, and per-session interaction windows, exposing the
//! two hot-path operations (prepare_context, commit_outcome) and the admin
//! operations (decay sweep, right-to-forget, state lookup, chain verify).
//!
//! Every operation is audited before its result is released; if the audit
//! sink fails the operation fails closed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoding::{
    encode_episode, write_gate, GateDecision, GatePatterns, SalienceBreakdown, WriteGateVerdict,
};
use crate::governance::{
    evaluate, Action, AuditError, AuditLog, ChainReport, Effect, PolicySet, Principal,
};
use crate::model::{
    validate_state_object, Outcome, PromotionStage, Provenance, ScopePath, SourceKind,
    StateObject, StatePlaneConfig, Tick,
};
use crate::reconstruction::{reconstruct, ReconstructError};
use crate::retrieval::{
    classify_intent, record_results, retrieve_with_intent, IntentWeights, RetrievalError,
};
use crate::segmentation::{detect_boundary, BoundaryDecision, BoundaryTrigger, InteractionTurn};
use crate::store::{PromoteError, PruneReport, StateStore, StoreError};

/// Component kill switches for ablation runs. All off is the full system.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Replace boundary detection with fixed-interval segmentation.
    pub boundary_off: bool,
    /// Admit every encoded episode regardless of salience.
    pub salience_off: bool,
    /// Bypass the write gate entirely.
    pub write_gate_off: bool,
    /// Freeze decay: no sweeps, strength pinned to its base value.
    pub decay_off: bool,
    /// Use uniform intent weights instead of the keyword router.
    pub intent_uniform: bool,
    /// Disable the redundancy penalty during context fill.
    pub mmr_off: bool,
}

impl AblationFlags {
    /// Parses the CLI names of the toggles.
    pub fn parse_component(name: &str) -> Option<fn(&mut AblationFlags)> {
        match name {
            "boundary" => Some(|f| f.boundary_off = true),
            "salience" => Some(|f| f.salience_off = true),
            "write_gate" => Some(|f| f.write_gate_off = true),
            "decay" => Some(|f| f.decay_off = true),
            "intent" => Some(|f| f.intent_uniform = true),
            "mmr" => Some(|f| f.mmr_off = true),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("policy denied {action} on {scope}")]
    PolicyDenied { action: String, scope: String, audit_event_id: Option<String> },
    #[error("write gate rejected the object: {reasons:?}")]
    GateRejected { reasons: Vec<String>, audit_event_id: Option<String> },
    #[error("user message alone exhausts the context budget")]
    BudgetExhausted,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("forget is restricted to user scopes, got {0}")]
    NonUserScope(String),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Promote(#[from] PromoteError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareContextRequest {
    pub session_id: String,
    pub scope: String,
    pub user_message: String,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareContextResponse {
    pub context: String,
    pub token_count: u64,
    pub budget: u64,
    pub included_ids: Vec<String>,
    pub binding_ids: Vec<String>,
    pub constraints_truncated: bool,
    pub applied_policy_rules: Vec<String>,
    pub audit_event_id: String,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnInput {
    pub role: crate::segmentation::TurnRole,
    pub text: String,
    #[serde(default)]
    pub structural_markers: std::collections::BTreeSet<crate::segmentation::StructuralMarker>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub procedure_id: String,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitOutcomeRequest {
    pub session_id: String,
    pub scope: String,
    pub goal: String,
    pub turns: Vec<TurnInput>,
    pub outcome: Outcome,
    #[serde(default)]
    pub tool_results: Vec<ToolResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitOutcomeResponse {
    pub boundary: BoundaryDecision,
    pub episode_id: Option<String>,
    pub salience: Option<SalienceBreakdown>,
    pub admitted: bool,
    pub gate: Option<WriteGateVerdict>,
    pub audit_event_id: String,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgetResponse {
    pub deleted_count: usize,
    pub audit_event_id: String,
}

#[derive(Debug, Clone, Default)]
struct SessionState {
    /// Recent turns, the boundary detector's sliding context.
    window: Vec<InteractionTurn>,
    /// Turns since the last closed segment.
    pending: Vec<InteractionTurn>,
}

const DEFAULT_K: usize = 8;

pub struct StatePlane {
    pub cfg: StatePlaneConfig,
    store: StateStore,
    audit: AuditLog,
    policy: PolicySet,
    patterns: GatePatterns,
    sessions: BTreeMap<String, SessionState>,
    tick: Tick,
    next_object_id: u64,
    pub ablation: AblationFlags,
}

impl StatePlane {
    pub fn new(cfg: StatePlaneConfig, policy: PolicySet) -> Self {
        StatePlane {
            cfg,
            store: StateStore::in_memory(),
            audit: AuditLog::in_memory(),
            policy,
            patterns: GatePatterns::builtin().clone(),
            sessions: BTreeMap::new(),
            tick: 0,
            next_object_id: 0,
            ablation: AblationFlags::default(),
        }
    }

    /// Opens (or creates) a durable plane under `dir`: the state log plus
    /// the audit log live side by side.
    pub fn open(dir: &Path, cfg: StatePlaneConfig, policy: PolicySet) -> Result<Self, ServiceError> {
        let store = StateStore::open(dir)?;
        let audit = AuditLog::open(&dir.join("audit.jsonl"))?;
        let tick = audit.events().last().map(|e| e.tick).unwrap_or(0);
        let next_object_id = store.log_position();
        Ok(StatePlane {
            cfg,
            store,
            audit,
            policy,
            patterns: GatePatterns::builtin().clone(),
            sessions: BTreeMap::new(),
            tick,
            next_object_id,
            ablation: AblationFlags::default(),
        })
    }

    pub fn store(&self) -> &StateStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut StateStore {
        &mut self.store
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn audit_mut(&mut self) -> &mut AuditLog {
        &mut self.audit
    }

    pub fn policy(&self) -> &PolicySet {
        &self.policy
    }

    pub fn set_policy(&mut self, policy: PolicySet) {
        self.policy = policy;
    }

    pub fn tick(&self) -> Tick {
        self.tick
    }

    fn advance(&mut self) -> Tick {
        self.tick += 1;
        self.tick
    }

    fn fresh_id(&mut self, prefix: &str) -> String {
        let id = format!("{prefix}-{:08}", self.next_object_id);
        self.next_object_id += 1;
        id
    }

    fn effective_cfg(&self) -> StatePlaneConfig {
        let mut cfg = self.cfg.clone();
        if self.ablation.decay_off {
            cfg.lambda_decay = 0.0;
        }
        if self.ablation.mmr_off {
            cfg.mmr_rho = 0.0;
        }
        cfg
    }

    /// Retrieval + policy filtering + bounded reconstruction, audited as one
    /// read. The audit append happens before reinforcement ticks are
    /// recorded and before the context is released.
    pub fn prepare_context(
        &mut self,
        caller: &Principal,
        req: &PrepareContextRequest,
    ) -> Result<PrepareContextResponse, ServiceError> {
        let tick = self.advance();
        let scope = ScopePath::parse(&req.scope)
            .map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
        let cfg = self.effective_cfg();
        let intent = if self.ablation.intent_uniform {
            IntentWeights::uniform()
        } else {
            classify_intent(&req.user_message)
        };
        let result = match retrieve_with_intent(
            &self.store,
            &req.user_message,
            &scope,
            caller,
            &self.policy,
            tick,
            req.k.unwrap_or(DEFAULT_K),
            &cfg,
            intent,
        ) {
            Ok(r) => r,
            Err(RetrievalError::PolicyDenied(s)) => {
                let event = self.audit.append(
                    tick,
                    caller,
                    "read",
                    &s,
                    Effect::Deny,
                    None,
                    vec![],
                )?;
                return Err(ServiceError::PolicyDenied {
                    action: "read".into(),
                    scope: s,
                    audit_event_id: Some(event.event_id),
                });
            }
        };
        let context = match reconstruct(&self.store, &result, &req.user_message, &cfg) {
            Ok(c) => c,
            Err(ReconstructError::BudgetExhausted) => return Err(ServiceError::BudgetExhausted),
        };
        let included_ids: Vec<String> = context
            .sections
            .iter()
            .flat_map(|(_, items)| items.iter())
            .map(|i| i.id.clone())
            .collect();
        let binding_ids: Vec<String> = result.binding.iter().map(|b| b.id.clone()).collect();
        let event = self.audit.append(
            tick,
            caller,
            "read",
            &req.scope,
            Effect::Allow,
            result.applied_policy_rules.first().cloned(),
            included_ids.clone(),
        )?;
        record_results(&mut self.store, &result, tick);
        Ok(PrepareContextResponse {
            context: context.rendered,
            token_count: context.token_count,
            budget: context.budget,
            included_ids,
            binding_ids,
            constraints_truncated: context.constraints_truncated,
            applied_policy_rules: result.applied_policy_rules,
            audit_event_id: event.event_id,
            tick,
        })
    }

    /// Ingests the turns of a completed exchange. When the last turn closes
    /// an event boundary, the accumulated segment is encoded, salience-
    /// filtered, gated, and (if admitted) persisted.
    pub fn commit_outcome(
        &mut self,
        caller: &Principal,
        req: &CommitOutcomeRequest,
    ) -> Result<CommitOutcomeResponse, ServiceError> {
        let tick = self.advance();
        let scope = ScopePath::parse(&req.scope)
            .map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
        if req.turns.is_empty() {
            return Err(ServiceError::InvalidRequest("turns must be non-empty".into()));
        }
        let decision = evaluate(caller, Action::Write, &scope, &self.policy);
        if !decision.allowed {
            let event = self.audit.append(
                tick,
                caller,
                "write",
                &req.scope,
                Effect::Deny,
                decision.rule_id,
                vec![],
            )?;
            return Err(ServiceError::PolicyDenied {
                action: "write".into(),
                scope: req.scope.clone(),
                audit_event_id: Some(event.event_id),
            });
        }

        for tr in &req.tool_results {
            // Counters update regardless of how the segment resolves.
            match self.store.record_procedure_result(&tr.procedure_id, tr.success, tick) {
                Ok(()) | Err(StoreError::NotFound(_)) => {}
                Err(e) => return Err(e.into()),
            }
            self.try_auto_promote(&tr.procedure_id, tick);
        }

        let cfg = self.effective_cfg();
        let session = self.sessions.entry(req.session_id.clone()).or_default();
        let mut boundary = BoundaryDecision { is_boundary: false, kl_score: 0.0, trigger: BoundaryTrigger::None };
        for (i, t) in req.turns.iter().enumerate() {
            let turn = InteractionTurn {
                tick,
                role: t.role,
                text: t.text.clone(),
                structural_markers: t.structural_markers.clone(),
            };
            let d = detect_boundary(&session.window, &turn, &cfg);
            session.window.push(turn.clone());
            session.pending.push(turn);
            if session.window.len() > 2 * cfg.window_w {
                let excess = session.window.len() - 2 * cfg.window_w;
                session.window.drain(..excess);
            }
            if i == req.turns.len() - 1 {
                boundary = d;
            }
        }
        if self.ablation.boundary_off {
            // Fixed-interval segmentation stands in for the detector.
            let fire = session.pending.len() >= cfg.window_w;
            boundary = BoundaryDecision {
                is_boundary: fire,
                kl_score: 0.0,
                trigger: if fire { BoundaryTrigger::Structural } else { BoundaryTrigger::None },
            };
        }

        if !boundary.is_boundary {
            let event = self.audit.append(
                tick,
                caller,
                "write",
                &req.scope,
                Effect::Allow,
                decision.rule_id,
                vec![],
            )?;
            return Ok(CommitOutcomeResponse {
                boundary,
                episode_id: None,
                salience: None,
                admitted: false,
                gate: None,
                audit_event_id: event.event_id,
                tick,
            });
        }

        let segment = std::mem::take(&mut session.pending);
        let id = self.fresh_id("ep");
        let (episode, salience) = encode_episode(
            &segment,
            &req.goal,
            req.outcome.clone(),
            &boundary,
            &self.store,
            &scope,
            &req.session_id,
            tick,
            id,
            &cfg,
        )
        .map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;

        let admitted = self.ablation.salience_off
            || salience.combined >= cfg.effective_tau();
        if !admitted {
            let event = self.audit.append(
                tick,
                caller,
                "write",
                &req.scope,
                Effect::Allow,
                decision.rule_id,
                vec![],
            )?;
            return Ok(CommitOutcomeResponse {
                boundary,
                episode_id: None,
                salience: Some(salience),
                admitted: false,
                gate: None,
                audit_event_id: event.event_id,
                tick,
            });
        }

        let candidate = StateObject::Episode(episode);
        let (verdict, sanitized) = if self.ablation.write_gate_off {
            (
                WriteGateVerdict {
                    decision: GateDecision::Accept,
                    reasons: vec![],
                    redactions: vec![],
                },
                candidate,
            )
        } else {
            write_gate(&candidate, caller, &self.policy, &self.patterns)
        };
        if verdict.decision == GateDecision::Reject {
            let event = self.audit.append(
                tick,
                caller,
                "write",
                &req.scope,
                Effect::Deny,
                Some("write_gate".to_string()),
                vec![],
            )?;
            return Err(ServiceError::GateRejected {
                reasons: verdict.reasons,
                audit_event_id: Some(event.event_id),
            });
        }
        let report = validate_state_object(&sanitized);
        if !report.is_valid() {
            return Err(ServiceError::InvalidRequest(report.violations.join("; ")));
        }
        let stored_id = sanitized.id().to_string();
        // Audit before release: the append must land before the put result
        // is visible to the caller.
        let event = self.audit.append(
            tick,
            caller,
            "write",
            &req.scope,
            Effect::Allow,
            decision.rule_id,
            vec![stored_id.clone()],
        )?;
        self.store.put(sanitized, tick)?;
        Ok(CommitOutcomeResponse {
            boundary,
            episode_id: Some(stored_id),
            salience: Some(salience),
            admitted: true,
            gate: Some(verdict),
            audit_event_id: event.event_id,
            tick,
        })
    }

    /// Best-effort advance of a procedure that just crossed the success
    /// threshold. Promotion failures are silent: requirements may simply not
    /// be met yet.
    fn try_auto_promote(&mut self, id: &str, tick: Tick) {
        let Some(StateObject::Procedure(p)) = self.store.get(id) else { return };
        if p.stage == PromotionStage::ValidatedFact
            && p.approved
            && p.success_count >= self.cfg.promotion_min_successes
        {
            let approval = Provenance::new(
                SourceKind::HumanApproval,
                p.provenance.source_ref.clone(),
                tick,
            );
            let _ = self.store.promote(
                id,
                PromotionStage::ReusableProcedure,
                Some(approval),
                &self.cfg,
                tick,
            );
        }
    }

    /// Directly stores a pre-built object through the write gate. This is
    /// the seeding path used by admin tooling and the benchmarks.
    pub fn put_object(
        &mut self,
        caller: &Principal,
        obj: StateObject,
    ) -> Result<String, ServiceError> {
        let tick = self.advance();
        let (verdict, sanitized) = if self.ablation.write_gate_off {
            (
                WriteGateVerdict { decision: GateDecision::Accept, reasons: vec![], redactions: vec![] },
                obj,
            )
        } else {
            write_gate(&obj, caller, &self.policy, &self.patterns)
        };
        if verdict.decision == GateDecision::Reject {
            let event = self.audit.append(
                tick,
                caller,
                "write",
                &sanitized.scope().to_string(),
                Effect::Deny,
                Some("write_gate".to_string()),
                vec![],
            )?;
            return Err(ServiceError::GateRejected {
                reasons: verdict.reasons,
                audit_event_id: Some(event.event_id),
            });
        }
        let report = validate_state_object(&sanitized);
        if !report.is_valid() {
            return Err(ServiceError::InvalidRequest(report.violations.join("; ")));
        }
        let scope = sanitized.scope().to_string();
        let id = sanitized.id().to_string();
        self.audit.append(
            tick,
            caller,
            "write",
            &scope,
            Effect::Allow,
            None,
            vec![id.clone()],
        )?;
        self.store.put(sanitized, tick)?;
        Ok(id)
    }

    /// Promotes an object one stage forward under policy control.
    pub fn promote_object(
        &mut self,
        caller: &Principal,
        id: &str,
        target: PromotionStage,
        approval: Option<Provenance>,
    ) -> Result<StateObject, ServiceError> {
        let tick = self.advance();
        let scope = match self.store.get(id) {
            Some(obj) => obj.scope().clone(),
            None => return Err(ServiceError::NotFound(id.to_string())),
        };
        let decision = evaluate(caller, Action::Promote, &scope, &self.policy);
        if !decision.allowed {
            let event = self.audit.append(
                tick,
                caller,
                "promote",
                &scope.to_string(),
                Effect::Deny,
                decision.rule_id,
                vec![id.to_string()],
            )?;
            return Err(ServiceError::PolicyDenied {
                action: "promote".into(),
                scope: scope.to_string(),
                audit_event_id: Some(event.event_id),
            });
        }
        let cfg = self.cfg.clone();
        let promoted = self.store.promote(id, target, approval, &cfg, tick)?;
        self.audit.append(
            tick,
            caller,
            "promote",
            &scope.to_string(),
            Effect::Allow,
            decision.rule_id,
            vec![id.to_string()],
        )?;
        Ok(promoted)
    }

    /// Tombstones everything whose strength decayed below the prune floor.
    pub fn decay_sweep(&mut self, caller: &Principal) -> Result<PruneReport, ServiceError> {
        let tick = self.advance();
        if self.ablation.decay_off {
            return Ok(PruneReport { pruned_ids: vec![], tombstoned_count: 0 });
        }
        let cfg = self.cfg.clone();
        let report = self.store.decay_sweep(tick, &cfg)?;
        self.audit.append(
            tick,
            caller,
            "delete",
            "session/sweep",
            Effect::Allow,
            Some("decay_sweep".to_string()),
            report.pruned_ids.clone(),
        )?;
        Ok(report)
    }

    /// Right-to-forget: physical removal of all state under a user scope.
    pub fn forget_scope(
        &mut self,
        caller: &Principal,
        scope_str: &str,
    ) -> Result<ForgetResponse, ServiceError> {
        let tick = self.advance();
        let scope = ScopePath::parse(scope_str)
            .map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
        if scope.family() != "user" {
            return Err(ServiceError::NonUserScope(scope_str.to_string()));
        }
        let decision = evaluate(caller, Action::Delete, &scope, &self.policy);
        if !decision.allowed {
            let event = self.audit.append(
                tick,
                caller,
                "delete",
                scope_str,
                Effect::Deny,
                decision.rule_id,
                vec![],
            )?;
            return Err(ServiceError::PolicyDenied {
                action: "delete".into(),
                scope: scope_str.to_string(),
                audit_event_id: Some(event.event_id),
            });
        }
        let deleted = self.store.delete_scope(&scope, tick)?;
        // The audit records the deletion event, never the deleted content.
        let event = self.audit.append(
            tick,
            caller,
            "delete",
            scope_str,
            Effect::Allow,
            decision.rule_id,
            vec![format!("deleted:{deleted}")],
        )?;
        Ok(ForgetResponse { deleted_count: deleted, audit_event_id: event.event_id })
    }

    /// Policy-checked single object lookup.
    pub fn get_state(
        &mut self,
        caller: &Principal,
        id: &str,
    ) -> Result<StateObject, ServiceError> {
        let tick = self.advance();
        let Some(obj) = self.store.get(id).cloned() else {
            return Err(ServiceError::NotFound(id.to_string()));
        };
        let decision = evaluate(caller, Action::Read, obj.scope(), &self.policy);
        let scope = obj.scope().to_string();
        if !decision.allowed {
            let event = self.audit.append(
                tick,
                caller,
                "read",
                &scope,
                Effect::Deny,
                decision.rule_id,
                vec![id.to_string()],
            )?;
            return Err(ServiceError::PolicyDenied {
                action: "read".into(),
                scope,
                audit_event_id: Some(event.event_id),
            });
        }
        self.audit.append(
            tick,
            caller,
            "read",
            &scope,
            Effect::Allow,
            decision.rule_id,
            vec![id.to_string()],
        )?;
        Ok(obj)
    }

    /// Re-hashes the whole audit chain.
    pub fn verify_audit(&self) -> ChainReport {
        self.audit.verify_chain()
    }
}
