//! Access control and auditing: ABAC policy evaluation with deny-overrides
//! and default-deny, a SHA-256 hash-chained append-only audit log, and the
//! user-scoped right-to-forget.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{ScopePath, ScopePrefix, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub tenant_id: String,
    pub user_id: String,
    pub roles: BTreeSet<String>,
    pub session_id: String,
}

impl Principal {
    pub fn new(tenant: &str, user: &str, roles: &[&str], session: &str) -> Self {
        Principal {
            tenant_id: tenant.to_string(),
            user_id: user.to_string(),
            roles: roles.iter().map(|r| r.to_string()).collect(),
            session_id: session.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Read,
    Write,
    Promote,
    Delete,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::Read => f.write_str("read"),
            Action::Write => f.write_str("write"),
            Action::Promote => f.write_str("promote"),
            Action::Delete => f.write_str("delete"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Allow,
    Deny,
}

/// One ABAC rule. Empty `roles` means any role matches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub rule_id: String,
    pub effect: Effect,
    #[serde(default)]
    pub roles: BTreeSet<String>,
    pub actions: BTreeSet<Action>,
    pub scope_prefix: ScopePrefix,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySet {
    pub rules: Vec<PolicyRule>,
}

impl PolicySet {
    pub fn new(rules: Vec<PolicyRule>) -> Self {
        PolicySet { rules }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let rules: Vec<PolicyRule> = serde_json::from_reader(File::open(path)?)?;
        Ok(PolicySet { rules })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub allowed: bool,
    pub rule_id: Option<String>,
}

/// Deny-overrides over all matching rules; no match means deny. A hard
/// tenant wall denies any `tenant/org/<t>` scope whose tenant segment is
/// not the caller's, regardless of rules.
pub fn evaluate(
    principal: &Principal,
    action: Action,
    scope: &ScopePath,
    policy: &PolicySet,
) -> Decision {
    if scope.family() == "tenant" {
        if let Some(tenant_seg) = scope.segments().get(2) {
            if *tenant_seg != principal.tenant_id {
                return Decision { allowed: false, rule_id: Some("tenant_wall".to_string()) };
            }
        }
    }
    let mut allow: Option<&PolicyRule> = None;
    for rule in &policy.rules {
        if !rule.actions.contains(&action) {
            continue;
        }
        if !rule.scope_prefix.is_prefix_of(scope) {
            continue;
        }
        if !rule.roles.is_empty() && rule.roles.is_disjoint(&principal.roles) {
            continue;
        }
        match rule.effect {
            Effect::Deny => {
                return Decision { allowed: false, rule_id: Some(rule.rule_id.clone()) };
            }
            Effect::Allow => {
                if allow.is_none() {
                    allow = Some(rule);
                }
            }
        }
    }
    match allow {
        Some(rule) => Decision { allowed: true, rule_id: Some(rule.rule_id.clone()) },
        None => Decision { allowed: false, rule_id: None },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyFlag {
    BulkRead,
    RepeatedDeny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub event_id: String,
    pub tick: Tick,
    pub actor: Principal,
    pub action: String,
    pub scope: String,
    pub decision: Effect,
    pub rule_id: Option<String>,
    pub object_refs: Vec<String>,
    pub anomaly_flags: BTreeSet<AnomalyFlag>,
    /// Hex-encoded SHA-256 of the previous event; 64 zeros at genesis.
    pub prev_hash: String,
    pub hash: String,
}

pub const GENESIS_HASH: &str =
    "0000000000000000000000000000000000000000000000000000000000000000";

/// Canonical byte serialization hashed into the chain: fixed field order,
/// `|`-separated, no whitespace.
fn canonical_bytes(e: &AuditEvent) -> Vec<u8> {
    let roles: Vec<&str> = e.actor.roles.iter().map(|r| r.as_str()).collect();
    let flags: Vec<String> = e
        .anomaly_flags
        .iter()
        .map(|f| serde_json::to_string(f).unwrap().trim_matches('"').to_string())
        .collect();
    format!(
        "{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
        e.event_id,
        e.tick,
        e.actor.tenant_id,
        e.actor.user_id,
        roles.join(","),
        e.actor.session_id,
        e.action,
        e.scope,
        match e.decision { Effect::Allow => "allow", Effect::Deny => "deny" },
        e.rule_id.as_deref().unwrap_or(""),
        e.object_refs.join(","),
        flags.join(","),
    )
    .into_bytes()
}

fn chain_hash(prev_hash_hex: &str, e: &AuditEvent) -> String {
    let mut hasher = Sha256::new();
    hasher.update(hex::decode(prev_hash_hex).unwrap_or_default());
    hasher.update(canonical_bytes(e));
    hex::encode(hasher.finalize())
}

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("audit sink unavailable: {0}")]
    Unavailable(String),
    #[error("audit log corrupt at line {0}")]
    Corrupt(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainReport {
    pub valid: bool,
    pub events: usize,
    pub first_invalid: Option<usize>,
}

/// Append-only hash-chained audit log. Appends are persisted before the
/// governed action's result is returned; if the sink fails, the governed
/// action fails closed.
pub struct AuditLog {
    path: Option<PathBuf>,
    events: Vec<AuditEvent>,
    next_id: u64,
    recent_denies: Vec<(String, Tick)>,
    /// Test hook: when set, appends fail as if the sink were down.
    pub fail_appends: bool,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog { path: None, events: Vec::new(), next_id: 0, recent_denies: Vec::new(), fail_appends: false }
    }

    pub fn open(path: &Path) -> Result<Self, AuditError> {
        let mut log = AuditLog::in_memory();
        if path.exists() {
            let file = File::open(path).map_err(|e| AuditError::Unavailable(e.to_string()))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| AuditError::Unavailable(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: AuditEvent =
                    serde_json::from_str(&line).map_err(|_| AuditError::Corrupt(i))?;
                log.events.push(event);
            }
            log.next_id = log.events.len() as u64;
        }
        log.path = Some(path.to_path_buf());
        Ok(log)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    #[allow(clippy::too_many_arguments)]
    pub fn append(
        &mut self,
        tick: Tick,
        actor: &Principal,
        action: &str,
        scope: &str,
        decision: Effect,
        rule_id: Option<String>,
        object_refs: Vec<String>,
    ) -> Result<AuditEvent, AuditError> {
        if self.fail_appends {
            return Err(AuditError::Unavailable("simulated sink failure".to_string()));
        }
        let mut anomaly_flags = BTreeSet::new();
        if object_refs.len() > 100 {
            anomaly_flags.insert(AnomalyFlag::BulkRead);
        }
        if decision == Effect::Deny {
            let key = format!("{}/{}", actor.tenant_id, actor.user_id);
            self.recent_denies.retain(|(_, t)| tick.saturating_sub(*t) < 100);
            self.recent_denies.push((key.clone(), tick));
            let denies = self.recent_denies.iter().filter(|(k, _)| *k == key).count();
            if denies >= 5 {
                anomaly_flags.insert(AnomalyFlag::RepeatedDeny);
            }
        }
        let prev_hash = self
            .events
            .last()
            .map(|e| e.hash.clone())
            .unwrap_or_else(|| GENESIS_HASH.to_string());
        let mut event = AuditEvent {
            event_id: format!("audit-{:08}", self.next_id),
            tick,
            actor: actor.clone(),
            action: action.to_string(),
            scope: scope.to_string(),
            decision,
            rule_id,
            object_refs,
            anomaly_flags,
            prev_hash: prev_hash.clone(),
            hash: String::new(),
        };
        event.hash = chain_hash(&prev_hash, &event);
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&event)
                .map_err(|e| AuditError::Unavailable(e.to_string()))?;
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| AuditError::Unavailable(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| AuditError::Unavailable(e.to_string()))?;
        }
        self.next_id += 1;
        self.events.push(event.clone());
        Ok(event)
    }

    /// Walks the chain from genesis re-hashing every event.
    pub fn verify_chain(&self) -> ChainReport {
        verify_events(&self.events)
    }
}

pub fn verify_events(events: &[AuditEvent]) -> ChainReport {
    let mut prev = GENESIS_HASH.to_string();
    for (i, e) in events.iter().enumerate() {
        if e.prev_hash != prev || chain_hash(&prev, e) != e.hash {
            return ChainReport { valid: false, events: events.len(), first_invalid: Some(i) };
        }
        prev = e.hash.clone();
    }
    ChainReport { valid: true, events: events.len(), first_invalid: None }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgetReport {
    pub deleted_count: usize,
    pub audit_event_id: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ForgetError {
    #[error("scope {0} is not user-scoped; only user/* state may be forgotten")]
    NonUserScope(String),
    #[error("policy denied delete on {0}")]
    PolicyDenied(String),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("store error: {0}")]
    Store(String),
}
