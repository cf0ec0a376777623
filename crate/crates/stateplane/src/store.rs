//! Durable typed state store.
//!
//! Persistence is an append-only JSON-lines record log; indices and even the
//! snapshot file are optimizations that can always be rebuilt from the log.
//! Forgetting is tombstoning (objects leave retrieval but stay in the log
//! for audit), except for user-scoped right-to-forget deletion which
//! physically rewrites the log.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoding::EpisodeView;
use crate::model::{
    PromotionStage, Provenance, ScopePath, SourceKind, StateObject, StatePlaneConfig, Tick,
};
use crate::segmentation::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("object {0} not found")]
    NotFound(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

#[derive(Debug, thiserror::Error)]
pub enum PromoteError {
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: PromotionStage, to: PromotionStage },
    #[error("validated fact requires non-empty evidence links")]
    MissingEvidence,
    #[error("reusable procedure requires {min} successes and human approval")]
    MissingApproval { min: u64 },
    #[error("decision record requires a prior redaction pass")]
    UnredactedContent,
    #[error("object {0} not found")]
    NotFound(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Put,
    Promote,
    Tombstone,
    Retrieval,
    ProcedureResult,
    ScopeDelete,
}

/// One line of the append-only log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub kind: RecordKind,
    pub payload: serde_json::Value,
    pub ts: Tick,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PromotePayload {
    id: String,
    from: PromotionStage,
    to: PromotionStage,
    approval: Option<Provenance>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RetrievalPayload {
    id: String,
    tick: Tick,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScopeDeletePayload {
    scope: String,
    deleted_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEntry {
    pub object: StateObject,
    pub tombstoned: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneReport {
    pub pruned_ids: Vec<String>,
    pub tombstoned_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    log_position: u64,
    objects: BTreeMap<String, StoredEntry>,
}

pub struct StateStore {
    objects: BTreeMap<String, StoredEntry>,
    /// scope prefix string -> live ids under it.
    scope_index: BTreeMap<String, BTreeSet<String>>,
    /// token -> live ids containing it.
    term_index: BTreeMap<String, BTreeSet<String>>,
    /// id -> term frequencies over all text fields.
    token_counts: BTreeMap<String, BTreeMap<String, u64>>,
    log_position: u64,
    dir: Option<PathBuf>,
}

const LOG_FILE: &str = "log.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

impl StateStore {
    pub fn in_memory() -> Self {
        StateStore {
            objects: BTreeMap::new(),
            scope_index: BTreeMap::new(),
            term_index: BTreeMap::new(),
            token_counts: BTreeMap::new(),
            log_position: 0,
            dir: None,
        }
    }

    /// Opens a store directory, loading the snapshot if present and then
    /// replaying the log tail. The log is the source of truth.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(|e| StoreError::Storage(e.to_string()))?;
        let mut store = StateStore::in_memory();
        let snap_path = dir.join(SNAPSHOT_FILE);
        if snap_path.exists() {
            let snap: Snapshot = serde_json::from_reader(
                File::open(&snap_path).map_err(|e| StoreError::Storage(e.to_string()))?,
            )
            .map_err(|e| StoreError::Storage(e.to_string()))?;
            store.log_position = snap.log_position;
            for (id, entry) in snap.objects {
                store.index_entry(&id, &entry);
                store.objects.insert(id, entry);
            }
        }
        let log_path = dir.join(LOG_FILE);
        if log_path.exists() {
            let file = File::open(&log_path).map_err(|e| StoreError::Storage(e.to_string()))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| StoreError::Storage(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: LogRecord =
                    serde_json::from_str(&line).map_err(|e| StoreError::Storage(e.to_string()))?;
                if record.seq < store.log_position {
                    continue; // covered by the snapshot
                }
                store.apply_record(&record);
                store.log_position = record.seq + 1;
            }
        }
        store.dir = Some(dir.to_path_buf());
        Ok(store)
    }

    pub fn log_position(&self) -> u64 {
        self.log_position
    }

    fn index_entry(&mut self, id: &str, entry: &StoredEntry) {
        if entry.tombstoned {
            return;
        }
        for prefix in entry.object.scope().prefixes() {
            self.scope_index
                .entry(prefix.to_string())
                .or_default()
                .insert(id.to_string());
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for field in entry.object.text_fields() {
            for tok in tokenize(field) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        for tok in counts.keys() {
            self.term_index.entry(tok.clone()).or_default().insert(id.to_string());
        }
        self.token_counts.insert(id.to_string(), counts);
    }

    fn unindex_entry(&mut self, id: &str) {
        if let Some(entry) = self.objects.get(id) {
            let scope = entry.object.scope().clone();
            for prefix in scope.prefixes() {
                if let Some(set) = self.scope_index.get_mut(&prefix.to_string()) {
                    set.remove(id);
                    if set.is_empty() {
                        self.scope_index.remove(&prefix.to_string());
                    }
                }
            }
        }
        if let Some(counts) = self.token_counts.remove(id) {
            for tok in counts.keys() {
                if let Some(set) = self.term_index.get_mut(tok) {
                    set.remove(id);
                    if set.is_empty() {
                        self.term_index.remove(tok);
                    }
                }
            }
        }
    }

    fn apply_record(&mut self, record: &LogRecord) {
        match record.kind {
            RecordKind::Put => {
                if let Ok(object) = serde_json::from_value::<StateObject>(record.payload.clone()) {
                    let id = object.id().to_string();
                    let entry = StoredEntry { object, tombstoned: false };
                    self.index_entry(&id, &entry);
                    self.objects.insert(id, entry);
                }
            }
            RecordKind::Promote => {
                if let Ok(p) = serde_json::from_value::<PromotePayload>(record.payload.clone()) {
                    if let Some(entry) = self.objects.get_mut(&p.id) {
                        entry.object.set_stage(p.to);
                    }
                }
            }
            RecordKind::Tombstone => {
                if let Some(id) = record.payload.get("id").and_then(|v| v.as_str()) {
                    let id = id.to_string();
                    self.unindex_entry(&id);
                    if let Some(entry) = self.objects.get_mut(&id) {
                        entry.tombstoned = true;
                    }
                }
            }
            RecordKind::Retrieval => {
                if let Ok(p) = serde_json::from_value::<RetrievalPayload>(record.payload.clone()) {
                    if let Some(entry) = self.objects.get_mut(&p.id) {
                        entry.object.retrieval_ticks_mut().push(p.tick);
                    }
                }
            }
            RecordKind::ProcedureResult => {
                if let (Some(id), Some(success)) = (
                    record.payload.get("id").and_then(|v| v.as_str()),
                    record.payload.get("success").and_then(|v| v.as_bool()),
                ) {
                    if let Some(entry) = self.objects.get_mut(id) {
                        if let StateObject::Procedure(p) = &mut entry.object {
                            p.attempt_count += 1;
                            if success {
                                p.success_count += 1;
                            }
                        }
                    }
                }
            }
            RecordKind::ScopeDelete => {
                // Objects were already removed when the log was rewritten;
                // on replay of a rewritten log there is nothing left to do.
            }
        }
    }

    fn append_record(&mut self, kind: RecordKind, payload: serde_json::Value, ts: Tick) -> Result<(), StoreError> {
        let record = LogRecord { seq: self.log_position, kind, payload, ts };
        if let Some(dir) = &self.dir {
            let line = serde_json::to_string(&record).map_err(|e| StoreError::Storage(e.to_string()))?;
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(LOG_FILE))
                .map_err(|e| StoreError::Storage(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| StoreError::Storage(e.to_string()))?;
        }
        self.log_position += 1;
        Ok(())
    }

    /// Persists a validated, gated object: log first, then index.
    pub fn put(&mut self, mut obj: StateObject, now: Tick) -> Result<String, StoreError> {
        let id = obj.id().to_string();
        if self.objects.contains_key(&id) {
            return Err(StoreError::DuplicateId(id));
        }
        obj.retrieval_ticks_mut().clear();
        if let StateObject::Fact(f) = &mut obj {
            f.strength_base = f.confidence;
        }
        self.append_record(RecordKind::Put, serde_json::to_value(&obj).unwrap(), now)?;
        let entry = StoredEntry { object: obj, tombstoned: false };
        self.index_entry(&id, &entry);
        self.objects.insert(id.clone(), entry);
        Ok(id)
    }

    /// Live (non-tombstoned) object lookup.
    pub fn get(&self, id: &str) -> Option<&StateObject> {
        self.objects.get(id).filter(|e| !e.tombstoned).map(|e| &e.object)
    }

    /// Lookup including tombstones, for audit export.
    pub fn get_any(&self, id: &str) -> Option<&StoredEntry> {
        self.objects.get(id)
    }

    pub fn live_objects(&self) -> impl Iterator<Item = &StateObject> {
        self.objects.values().filter(|e| !e.tombstoned).map(|e| &e.object)
    }

    pub fn live_count(&self) -> usize {
        self.objects.values().filter(|e| !e.tombstoned).count()
    }

    pub fn total_count(&self) -> usize {
        self.objects.len()
    }

    /// Live ids under a scope prefix.
    pub fn ids_under(&self, prefix: &ScopePath) -> BTreeSet<String> {
        self.scope_index.get(&prefix.to_string()).cloned().unwrap_or_default()
    }

    pub fn term_document_frequency(&self, token: &str) -> usize {
        self.term_index.get(token).map(|s| s.len()).unwrap_or(0)
    }

    pub fn token_counts_of(&self, id: &str) -> Option<&BTreeMap<String, u64>> {
        self.token_counts.get(id)
    }

    /// Eq. of exponential decay with additive reinforcement:
    /// s0 * exp(-lambda * (now - t0)) + alpha * |{t_r < now}|.
    pub fn strength(obj: &StateObject, now: Tick, cfg: &StatePlaneConfig) -> f64 {
        let elapsed = now.saturating_sub(obj.created_at()) as f64;
        let reinforced = obj.retrieval_ticks().iter().filter(|t| **t < now).count() as f64;
        obj.strength_base() * (-cfg.lambda_decay * elapsed).exp()
            + cfg.alpha_reinforce * reinforced
    }

    /// Tombstones every object whose strength fell below epsilon. Decision
    /// records are exempt: they must stay auditable.
    pub fn decay_sweep(&mut self, now: Tick, cfg: &StatePlaneConfig) -> Result<PruneReport, StoreError> {
        let mut pruned_ids = Vec::new();
        let candidates: Vec<String> = self
            .objects
            .iter()
            .filter(|(_, e)| !e.tombstoned)
            .filter(|(_, e)| e.object.stage() != PromotionStage::EpisodicDecisionRecord)
            .filter(|(_, e)| Self::strength(&e.object, now, cfg) < cfg.epsilon_prune)
            .map(|(id, _)| id.clone())
            .collect();
        for id in candidates {
            self.append_record(RecordKind::Tombstone, serde_json::json!({ "id": id }), now)?;
            self.unindex_entry(&id);
            if let Some(entry) = self.objects.get_mut(&id) {
                entry.tombstoned = true;
            }
            pruned_ids.push(id);
        }
        let tombstoned_count = self.objects.values().filter(|e| e.tombstoned).count();
        Ok(PruneReport { pruned_ids, tombstoned_count })
    }

    /// Records a reinforcement retrieval. Strength at the same tick is
    /// unchanged: only strictly earlier retrievals count.
    pub fn record_retrieval(&mut self, id: &str, now: Tick) -> Result<(), StoreError> {
        if self.get(id).is_none() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        self.append_record(
            RecordKind::Retrieval,
            serde_json::to_value(RetrievalPayload { id: id.to_string(), tick: now }).unwrap(),
            now,
        )?;
        if let Some(entry) = self.objects.get_mut(id) {
            entry.object.retrieval_ticks_mut().push(now);
        }
        Ok(())
    }

    /// Bumps a procedure's attempt counter, and its success counter when the
    /// tool run succeeded. Logged so counters survive replay.
    pub fn record_procedure_result(&mut self, id: &str, success: bool, now: Tick) -> Result<(), StoreError> {
        match self.get(id) {
            Some(StateObject::Procedure(_)) => {}
            _ => return Err(StoreError::NotFound(id.to_string())),
        }
        self.append_record(
            RecordKind::ProcedureResult,
            serde_json::json!({ "id": id, "success": success }),
            now,
        )?;
        if let Some(entry) = self.objects.get_mut(id) {
            if let StateObject::Procedure(p) = &mut entry.object {
                p.attempt_count += 1;
                if success {
                    p.success_count += 1;
                }
            }
        }
        Ok(())
    }

    /// Advances an object one step along the promotion chain, enforcing the
    /// per-stage evidence, approval, and redaction requirements. The original
    /// log entry is immutable; promotion appends a new record.
    pub fn promote(
        &mut self,
        id: &str,
        target: PromotionStage,
        approval: Option<Provenance>,
        cfg: &StatePlaneConfig,
        now: Tick,
    ) -> Result<StateObject, PromoteError> {
        let entry = self
            .objects
            .get(id)
            .filter(|e| !e.tombstoned)
            .ok_or_else(|| PromoteError::NotFound(id.to_string()))?;
        let from = entry.object.stage();
        if !from.can_transition_to(target) {
            return Err(PromoteError::IllegalTransition { from, to: target });
        }
        match target {
            PromotionStage::ValidatedFact => {
                if entry.object.provenance().evidence_links.is_empty() {
                    return Err(PromoteError::MissingEvidence);
                }
            }
            PromotionStage::ReusableProcedure => {
                let min = cfg.promotion_min_successes;
                let ok_counts = match &entry.object {
                    StateObject::Procedure(p) => p.success_count >= min,
                    _ => false,
                };
                let ok_approval = approval
                    .as_ref()
                    .map(|a| a.source_kind == SourceKind::HumanApproval && !a.source_ref.is_empty())
                    .unwrap_or(false);
                if !ok_counts || !ok_approval {
                    return Err(PromoteError::MissingApproval { min });
                }
            }
            PromotionStage::EpisodicDecisionRecord => {
                if !crate::encoding::is_fully_redacted(&entry.object) {
                    return Err(PromoteError::UnredactedContent);
                }
            }
            PromotionStage::UnverifiedNote => unreachable!("no transition targets the first stage"),
        }
        let payload = PromotePayload { id: id.to_string(), from, to: target, approval };
        self.append_record(RecordKind::Promote, serde_json::to_value(&payload).unwrap(), now)?;
        let entry = self.objects.get_mut(id).unwrap();
        entry.object.set_stage(target);
        Ok(entry.object.clone())
    }

    /// Physically removes all objects under a user scope by rewriting the
    /// log, then records a content-free deletion summary.
    pub fn delete_scope(&mut self, scope: &ScopePath, now: Tick) -> Result<usize, StoreError> {
        let doomed: BTreeSet<String> = self
            .objects
            .iter()
            .filter(|(_, e)| scope.is_prefix_of(e.object.scope()))
            .map(|(id, _)| id.clone())
            .collect();
        if let Some(dir) = &self.dir.clone() {
            let log_path = dir.join(LOG_FILE);
            if log_path.exists() {
                let file = File::open(&log_path).map_err(|e| StoreError::Storage(e.to_string()))?;
                let mut kept = Vec::new();
                for line in BufReader::new(file).lines() {
                    let line = line.map_err(|e| StoreError::Storage(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let record: LogRecord = serde_json::from_str(&line)
                        .map_err(|e| StoreError::Storage(e.to_string()))?;
                    let refers_doomed = match record.kind {
                        RecordKind::Put => serde_json::from_value::<StateObject>(record.payload.clone())
                            .map(|o| doomed.contains(o.id()))
                            .unwrap_or(false),
                        RecordKind::Promote
                        | RecordKind::Tombstone
                        | RecordKind::Retrieval
                        | RecordKind::ProcedureResult => record
                            .payload
                            .get("id")
                            .and_then(|v| v.as_str())
                            .map(|id| doomed.contains(id))
                            .unwrap_or(false),
                        RecordKind::ScopeDelete => false,
                    };
                    if !refers_doomed {
                        kept.push(line);
                    }
                }
                let tmp = dir.join("log.jsonl.tmp");
                {
                    let mut out = File::create(&tmp).map_err(|e| StoreError::Storage(e.to_string()))?;
                    for line in &kept {
                        writeln!(out, "{line}").map_err(|e| StoreError::Storage(e.to_string()))?;
                    }
                }
                std::fs::rename(&tmp, &log_path).map_err(|e| StoreError::Storage(e.to_string()))?;
            }
        }
        for id in &doomed {
            self.unindex_entry(id);
            self.objects.remove(id);
        }
        self.append_record(
            RecordKind::ScopeDelete,
            serde_json::to_value(ScopeDeletePayload {
                scope: scope.to_string(),
                deleted_count: doomed.len(),
            })
            .unwrap(),
            now,
        )?;
        // The snapshot may still hold deleted content; rewrite it.
        if self.dir.is_some() {
            self.write_snapshot()?;
        }
        Ok(doomed.len())
    }

    /// Writes the snapshot optimization file. The log stays authoritative.
    pub fn write_snapshot(&self) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let snap = Snapshot { log_position: self.log_position, objects: self.objects.clone() };
        let tmp = dir.join("snapshot.json.tmp");
        let file = File::create(&tmp).map_err(|e| StoreError::Storage(e.to_string()))?;
        serde_json::to_writer(file, &snap).map_err(|e| StoreError::Storage(e.to_string()))?;
        std::fs::rename(tmp, dir.join(SNAPSHOT_FILE)).map_err(|e| StoreError::Storage(e.to_string()))?;
        Ok(())
    }

    /// Canonical serialization of the full store state, for replay and
    /// determinism checks.
    pub fn state_digest(&self) -> String {
        serde_json::to_string(&self.objects).unwrap()
    }

    /// Rebuilds all indices from the object map and compares with the
    /// incrementally maintained ones.
    pub fn indices_consistent(&self) -> bool {
        let mut fresh = StateStore::in_memory();
        for (id, entry) in &self.objects {
            fresh.index_entry(id, entry);
        }
        fresh.scope_index == self.scope_index
            && fresh.term_index == self.term_index
            && fresh.token_counts == self.token_counts
    }
}

impl EpisodeView for StateStore {
    fn episode_token_sets(&self, family: &str) -> Vec<BTreeSet<String>> {
        self.live_objects()
            .filter_map(|o| match o {
                StateObject::Episode(e) if e.scope.family() == family => {
                    Some(crate::encoding::episode_token_set(e))
                }
                _ => None,
            })
            .collect()
    }
}
