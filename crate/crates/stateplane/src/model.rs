//! Typed state objects, scopes, provenance, and the promotion lifecycle.
//!
//! Everything durable in the plane is one of three schemas: a [`MemoryFact`]
//! (validated or unverified statement), an [`Episode`] (goal / actions /
//! outcome / rationale tuple), or a [`Procedure`] (reusable step sequence).
//! All three carry provenance, a hierarchical [`ScopePath`], and a
//! [`PromotionStage`] that only ever moves forward.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Logical interaction tick. One tick per interaction, strictly monotonic.
/// Wall-clock time is metadata only; all decay math runs on ticks.
pub type Tick = u64;

fn segment_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[a-z0-9_-]+$").unwrap())
}

/// The four namespace families a scope may be rooted at.
pub const SCOPE_FAMILIES: [&str; 4] = ["tenant", "user", "case", "session"];

/// Hierarchical namespace path, e.g. `tenant/org/acme` or `case/project/p7`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ScopePath {
    segments: Vec<String>,
}

impl ScopePath {
    pub fn parse(s: &str) -> Result<Self, ScopeError> {
        let segments: Vec<String> = s.split('/').map(|p| p.to_string()).collect();
        if segments.len() < 2 {
            return Err(ScopeError::TooShallow(s.to_string()));
        }
        if !SCOPE_FAMILIES.contains(&segments[0].as_str()) {
            return Err(ScopeError::UnknownFamily(segments[0].clone()));
        }
        for seg in &segments {
            if !segment_re().is_match(seg) {
                return Err(ScopeError::BadSegment(seg.clone()));
            }
        }
        Ok(ScopePath { segments })
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    /// The namespace family this scope is rooted at (`tenant`, `user`, ...).
    pub fn family(&self) -> &str {
        &self.segments[0]
    }

    pub fn depth(&self) -> usize {
        self.segments.len()
    }

    /// True iff `self`'s segments are a leading sublist of `other`'s.
    /// Reflexive: every scope is a prefix of itself.
    pub fn is_prefix_of(&self, other: &ScopePath) -> bool {
        self.segments.len() <= other.segments.len()
            && self.segments.iter().zip(&other.segments).all(|(a, b)| a == b)
    }

    /// All ancestor prefixes of this scope, shallowest first, including self.
    /// Prefixes shorter than two segments are not valid scopes and are skipped.
    pub fn prefixes(&self) -> impl Iterator<Item = ScopePath> + '_ {
        (2..=self.segments.len()).map(|n| ScopePath {
            segments: self.segments[..n].to_vec(),
        })
    }
}

impl fmt::Display for ScopePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.segments.join("/"))
    }
}

impl TryFrom<String> for ScopePath {
    type Error = ScopeError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ScopePath::parse(&s)
    }
}

impl From<ScopePath> for String {
    fn from(s: ScopePath) -> String {
        s.to_string()
    }
}

/// A scope prefix for policy rules. Unlike [`ScopePath`] it may be a bare
/// family (`user`), matching every scope in that family.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ScopePrefix {
    segments: Vec<String>,
}

impl ScopePrefix {
    pub fn parse(s: &str) -> Result<Self, ScopeError> {
        let segments: Vec<String> = s.split('/').map(|p| p.to_string()).collect();
        if segments.is_empty() || segments[0].is_empty() {
            return Err(ScopeError::TooShallow(s.to_string()));
        }
        if !SCOPE_FAMILIES.contains(&segments[0].as_str()) {
            return Err(ScopeError::UnknownFamily(segments[0].clone()));
        }
        for seg in &segments {
            if !segment_re().is_match(seg) {
                return Err(ScopeError::BadSegment(seg.clone()));
            }
        }
        Ok(ScopePrefix { segments })
    }

    pub fn is_prefix_of(&self, scope: &ScopePath) -> bool {
        self.segments.len() <= scope.segments().len()
            && self.segments.iter().zip(scope.segments()).all(|(a, b)| a == b)
    }
}

impl fmt::Display for ScopePrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.segments.join("/"))
    }
}

impl TryFrom<String> for ScopePrefix {
    type Error = ScopeError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ScopePrefix::parse(&s)
    }
}

impl From<ScopePrefix> for String {
    fn from(s: ScopePrefix) -> String {
        s.to_string()
    }
}

impl From<ScopePath> for ScopePrefix {
    fn from(s: ScopePath) -> ScopePrefix {
        ScopePrefix { segments: s.segments().to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScopeError {
    #[error("scope `{0}` must have at least two segments")]
    TooShallow(String),
    #[error("scope family `{0}` is not one of tenant/user/case/session")]
    UnknownFamily(String),
    #[error("scope segment `{0}` must match [a-z0-9_-]+")]
    BadSegment(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    UserUtterance,
    ToolOutput,
    AgentOutput,
    HumanApproval,
    System,
}

/// Where a piece of state came from and what backs it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_kind: SourceKind,
    pub source_ref: String,
    pub recorded_at: Tick,
    #[serde(default)]
    pub evidence_links: Vec<String>,
}

impl Provenance {
    pub fn new(source_kind: SourceKind, source_ref: impl Into<String>, recorded_at: Tick) -> Self {
        Provenance {
            source_kind,
            source_ref: source_ref.into(),
            recorded_at,
            evidence_links: Vec::new(),
        }
    }
}

/// Lifecycle stage of a state object. Transitions move one step forward
/// along the chain and never backward or skipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromotionStage {
    UnverifiedNote,
    ValidatedFact,
    ReusableProcedure,
    EpisodicDecisionRecord,
}

impl PromotionStage {
    pub fn ordinal(self) -> u8 {
        match self {
            PromotionStage::UnverifiedNote => 1,
            PromotionStage::ValidatedFact => 2,
            PromotionStage::ReusableProcedure => 3,
            PromotionStage::EpisodicDecisionRecord => 4,
        }
    }

    /// Legal transitions are exactly the adjacent forward steps of the chain.
    pub fn can_transition_to(self, target: PromotionStage) -> bool {
        target.ordinal() == self.ordinal() + 1
    }
}

impl fmt::Display for PromotionStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PromotionStage::UnverifiedNote => "unverified_note",
            PromotionStage::ValidatedFact => "validated_fact",
            PromotionStage::ReusableProcedure => "reusable_procedure",
            PromotionStage::EpisodicDecisionRecord => "episodic_decision_record",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryFact {
    pub id: String,
    pub statement: String,
    pub confidence: f64,
    pub provenance: Provenance,
    pub scope: ScopePath,
    pub stage: PromotionStage,
    pub created_at: Tick,
    pub strength_base: f64,
    #[serde(default)]
    pub retrieval_ticks: Vec<Tick>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Success,
    Failure,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub kind: OutcomeKind,
    #[serde(default)]
    pub detail: String,
}

impl Outcome {
    pub fn new(kind: OutcomeKind, detail: impl Into<String>) -> Self {
        Outcome { kind, detail: detail.into() }
    }
}

/// Temporal anchor of an episode: creation tick plus owning session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Temporal {
    pub created_at: Tick,
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub goal: String,
    pub actions: Vec<String>,
    pub outcome: Outcome,
    pub rationale: String,
    pub temporal: Temporal,
    pub salience: f64,
    pub provenance: Provenance,
    pub scope: ScopePath,
    #[serde(default = "default_stage")]
    pub stage: PromotionStage,
    #[serde(default)]
    pub retrieval_ticks: Vec<Tick>,
}

fn default_stage() -> PromotionStage {
    PromotionStage::UnverifiedNote
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Procedure {
    pub id: String,
    pub name: String,
    pub preconditions: Vec<String>,
    pub steps: Vec<String>,
    pub tools: Vec<String>,
    pub success_count: u64,
    pub attempt_count: u64,
    pub approved: bool,
    pub provenance: Provenance,
    pub scope: ScopePath,
    #[serde(default = "default_stage")]
    pub stage: PromotionStage,
    pub created_at: Tick,
    #[serde(default)]
    pub retrieval_ticks: Vec<Tick>,
}

impl Procedure {
    /// Derived, never stored: success_count / attempt_count.
    pub fn success_rate(&self) -> Option<f64> {
        if self.attempt_count > 0 {
            Some(self.success_count as f64 / self.attempt_count as f64)
        } else {
            None
        }
    }

    /// A procedure is retrievable only after repeated success plus approval.
    pub fn is_durable(&self, min_successes: u64) -> bool {
        self.approved && self.success_count >= min_successes
    }
}

/// Discriminated union over the three canonical schemas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateObject {
    Fact(MemoryFact),
    Episode(Episode),
    Procedure(Procedure),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Fact,
    Episode,
    Procedure,
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateKind::Fact => f.write_str("fact"),
            StateKind::Episode => f.write_str("episode"),
            StateKind::Procedure => f.write_str("procedure"),
        }
    }
}

impl StateObject {
    pub fn id(&self) -> &str {
        match self {
            StateObject::Fact(x) => &x.id,
            StateObject::Episode(x) => &x.id,
            StateObject::Procedure(x) => &x.id,
        }
    }

    pub fn kind(&self) -> StateKind {
        match self {
            StateObject::Fact(_) => StateKind::Fact,
            StateObject::Episode(_) => StateKind::Episode,
            StateObject::Procedure(_) => StateKind::Procedure,
        }
    }

    pub fn scope(&self) -> &ScopePath {
        match self {
            StateObject::Fact(x) => &x.scope,
            StateObject::Episode(x) => &x.scope,
            StateObject::Procedure(x) => &x.scope,
        }
    }

    pub fn provenance(&self) -> &Provenance {
        match self {
            StateObject::Fact(x) => &x.provenance,
            StateObject::Episode(x) => &x.provenance,
            StateObject::Procedure(x) => &x.provenance,
        }
    }

    pub fn stage(&self) -> PromotionStage {
        match self {
            StateObject::Fact(x) => x.stage,
            StateObject::Episode(x) => x.stage,
            StateObject::Procedure(x) => x.stage,
        }
    }

    pub fn set_stage(&mut self, stage: PromotionStage) {
        match self {
            StateObject::Fact(x) => x.stage = stage,
            StateObject::Episode(x) => x.stage = stage,
            StateObject::Procedure(x) => x.stage = stage,
        }
    }

    pub fn created_at(&self) -> Tick {
        match self {
            StateObject::Fact(x) => x.created_at,
            StateObject::Episode(x) => x.temporal.created_at,
            StateObject::Procedure(x) => x.created_at,
        }
    }

    pub fn retrieval_ticks(&self) -> &[Tick] {
        match self {
            StateObject::Fact(x) => &x.retrieval_ticks,
            StateObject::Episode(x) => &x.retrieval_ticks,
            StateObject::Procedure(x) => &x.retrieval_ticks,
        }
    }

    pub fn retrieval_ticks_mut(&mut self) -> &mut Vec<Tick> {
        match self {
            StateObject::Fact(x) => &mut x.retrieval_ticks,
            StateObject::Episode(x) => &mut x.retrieval_ticks,
            StateObject::Procedure(x) => &mut x.retrieval_ticks,
        }
    }

    /// Initial strength for decay: salience for episodes, confidence for
    /// facts, 1.0 for procedures.
    pub fn strength_base(&self) -> f64 {
        match self {
            StateObject::Fact(x) => x.strength_base,
            StateObject::Episode(x) => x.salience,
            StateObject::Procedure(_) => 1.0,
        }
    }

    /// All free-text fields, for write gating and rendering.
    pub fn text_fields(&self) -> Vec<&str> {
        match self {
            StateObject::Fact(x) => vec![x.statement.as_str()],
            StateObject::Episode(x) => {
                let mut v = vec![x.goal.as_str(), x.rationale.as_str(), x.outcome.detail.as_str()];
                v.extend(x.actions.iter().map(|s| s.as_str()));
                v
            }
            StateObject::Procedure(x) => {
                let mut v = vec![x.name.as_str()];
                v.extend(x.preconditions.iter().map(|s| s.as_str()));
                v.extend(x.steps.iter().map(|s| s.as_str()));
                v
            }
        }
    }
}

/// Plane-wide tunables. Defaults are the reference configuration; every
/// knob is exposed so ablations can toggle components off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatePlaneConfig {
    /// KL threshold for event boundary detection.
    pub theta_boundary: f64,
    /// Salience admission threshold on the write path.
    pub tau_salience: f64,
    /// Exponential decay rate per tick.
    pub lambda_decay: f64,
    /// Reinforcement bonus per past retrieval.
    pub alpha_reinforce: f64,
    /// Prune threshold: below this strength an object is tombstoned.
    pub epsilon_prune: f64,
    /// Hard token budget for reconstructed context.
    pub l_max: u64,
    /// Compression/relevance trade-off; consumed by the admission surrogate.
    pub beta_tradeoff: f64,
    /// (utility, surprise, novelty) weights, non-negative, summing to 1.
    pub salience_weights: (f64, f64, f64),
    /// Sliding window length for boundary detection.
    pub window_w: usize,
    /// Redundancy penalty for context selection.
    pub mmr_rho: f64,
    /// Successes required before a procedure may become reusable.
    pub promotion_min_successes: u64,
}

impl Default for StatePlaneConfig {
    fn default() -> Self {
        StatePlaneConfig {
            theta_boundary: 0.15,
            tau_salience: 0.35,
            lambda_decay: std::f64::consts::LN_2 / 2880.0,
            alpha_reinforce: 0.1,
            epsilon_prune: 0.05,
            l_max: 2048,
            beta_tradeoff: 1.0,
            salience_weights: (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0),
            window_w: 10,
            mmr_rho: 0.5,
            promotion_min_successes: 3,
        }
    }
}

impl StatePlaneConfig {
    /// Effective salience admission threshold: larger beta admits more.
    pub fn effective_tau(&self) -> f64 {
        self.tau_salience / self.beta_tradeoff
    }
}

/// Outcome of validating a state object. Validation never fails; it reports.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_unit_interval(report: &mut Vec<String>, name: &str, v: f64) {
    if !(0.0..=1.0).contains(&v) || v.is_nan() {
        report.push(format!("{name} {v} outside [0,1]"));
    }
}

/// Checks every schema invariant and lists each violation. Deterministic
/// and total: an empty report means the object is storable.
pub fn validate_state_object(obj: &StateObject) -> ValidationReport {
    let mut v = Vec::new();
    if obj.id().is_empty() {
        v.push("id empty".to_string());
    }
    if obj.provenance().source_kind == SourceKind::HumanApproval
        && obj.provenance().source_ref.is_empty()
    {
        v.push("human_approval provenance without source_ref".to_string());
    }
    match obj {
        StateObject::Fact(f) => {
            if f.statement.is_empty() {
                v.push("statement empty".to_string());
            }
            check_unit_interval(&mut v, "confidence", f.confidence);
            check_unit_interval(&mut v, "strength_base", f.strength_base);
            match f.stage {
                PromotionStage::UnverifiedNote => {}
                PromotionStage::ValidatedFact => {
                    if f.provenance.evidence_links.is_empty() {
                        v.push("validated fact without provenance links".to_string());
                    }
                }
                other => v.push(format!("fact at illegal stage {other}")),
            }
        }
        StateObject::Episode(e) => {
            if e.goal.is_empty() {
                v.push("goal empty".to_string());
            }
            if e.rationale.is_empty() {
                v.push("rationale empty".to_string());
            }
            check_unit_interval(&mut v, "salience", e.salience);
        }
        StateObject::Procedure(p) => {
            if p.name.is_empty() {
                v.push("name empty".to_string());
            }
            if p.success_count > p.attempt_count {
                v.push(format!(
                    "success_count {} exceeds attempt_count {}",
                    p.success_count, p.attempt_count
                ));
            }
        }
    }
    ValidationReport { violations: v }
}

/// Prefix test over scopes; thin wrapper kept for call-site symmetry.
pub fn scope_is_prefix(a: &ScopePath, b: &ScopePath) -> bool {
    a.is_prefix_of(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope(s: &str) -> ScopePath {
        ScopePath::parse(s).unwrap()
    }

    fn prov(tick: Tick) -> Provenance {
        Provenance::new(SourceKind::System, "t", tick)
    }

    fn fact(stage: PromotionStage, links: Vec<String>) -> StateObject {
        let mut p = prov(1);
        p.evidence_links = links;
        StateObject::Fact(MemoryFact {
            id: "f1".into(),
            statement: "tech sector cap is 28 percent".into(),
            confidence: 0.9,
            provenance: p,
            scope: scope("tenant/org/acme"),
            stage,
            created_at: 1,
            strength_base: 0.9,
            retrieval_ticks: vec![],
        })
    }

    #[test]
    fn scope_parse_and_prefix() {
        assert!(scope("tenant/org").is_prefix_of(&scope("tenant/org/acme")));
        assert!(!scope("tenant/org/acme").is_prefix_of(&scope("tenant/org")));
        assert!(scope("user/u42").is_prefix_of(&scope("user/u42")));
        assert!(ScopePath::parse("tenant").is_err());
        assert!(ScopePath::parse("vendor/x").is_err());
        assert!(ScopePath::parse("tenant/Org").is_err());
    }

    #[test]
    fn prefix_is_partial_order() {
        // Exhaustive over all path pairs of depth <= 3 from a 4-name alphabet.
        let names = ["tenant", "user", "aa", "bb"];
        let mut paths = Vec::new();
        for a in names {
            for b in names {
                paths.push(vec![a, b]);
                for c in names {
                    paths.push(vec![a, b, c]);
                }
            }
        }
        let to_scope = |segs: &Vec<&str>| ScopePath { segments: segs.iter().map(|s| s.to_string()).collect() };
        for p in &paths {
            let sp = to_scope(p);
            assert!(sp.is_prefix_of(&sp), "reflexive");
            for q in &paths {
                let sq = to_scope(q);
                if sp.is_prefix_of(&sq) && sq.is_prefix_of(&sp) {
                    assert_eq!(sp, sq, "antisymmetric");
                }
                for r in &paths {
                    let sr = to_scope(r);
                    if sp.is_prefix_of(&sq) && sq.is_prefix_of(&sr) {
                        assert!(sp.is_prefix_of(&sr), "transitive");
                    }
                }
            }
        }
    }

    #[test]
    fn validate_rejects_empty_rationale() {
        let e = StateObject::Episode(Episode {
            id: "e1".into(),
            goal: "g".into(),
            actions: vec![],
            outcome: Outcome::new(OutcomeKind::Neutral, ""),
            rationale: "".into(),
            temporal: Temporal { created_at: 1, session_id: "s1".into() },
            salience: 0.5,
            provenance: prov(1),
            scope: scope("session/thread/s1"),
            stage: PromotionStage::UnverifiedNote,
            retrieval_ticks: vec![],
        });
        let report = validate_state_object(&e);
        assert_eq!(report.violations, vec!["rationale empty".to_string()]);
    }

    #[test]
    fn validated_fact_requires_evidence_links() {
        let report = validate_state_object(&fact(PromotionStage::ValidatedFact, vec![]));
        assert_eq!(
            report.violations,
            vec!["validated fact without provenance links".to_string()]
        );
        let ok = validate_state_object(&fact(
            PromotionStage::ValidatedFact,
            vec!["e1".to_string()],
        ));
        assert!(ok.is_valid());
    }

    #[test]
    fn procedure_counts_validate() {
        let p = StateObject::Procedure(Procedure {
            id: "p1".into(),
            name: "file sar".into(),
            preconditions: vec![],
            steps: vec!["open portal".into()],
            tools: vec!["portal".into()],
            success_count: 2,
            attempt_count: 5,
            approved: true,
            provenance: prov(1),
            scope: scope("tenant/org/acme"),
            stage: PromotionStage::UnverifiedNote,
            created_at: 1,
            retrieval_ticks: vec![],
        });
        assert!(validate_state_object(&p).is_valid());
        if let StateObject::Procedure(p) = &p {
            assert_eq!(p.success_rate(), Some(0.4));
            assert!(!p.is_durable(3));
        }
    }

    #[test]
    fn serde_round_trip_uses_kind_tag() {
        let obj = fact(PromotionStage::UnverifiedNote, vec![]);
        let json = serde_json::to_string(&obj).unwrap();
        assert!(json.contains("\"kind\":\"fact\""));
        let back: StateObject = serde_json::from_str(&json).unwrap();
        assert_eq!(obj, back);
    }

    #[test]
    fn stage_chain_is_adjacent_forward_only() {
        use PromotionStage::*;
        assert!(UnverifiedNote.can_transition_to(ValidatedFact));
        assert!(ValidatedFact.can_transition_to(ReusableProcedure));
        assert!(ReusableProcedure.can_transition_to(EpisodicDecisionRecord));
        assert!(!UnverifiedNote.can_transition_to(ReusableProcedure));
        assert!(!UnverifiedNote.can_transition_to(EpisodicDecisionRecord));
        assert!(!ValidatedFact.can_transition_to(UnverifiedNote));
        assert!(!EpisodicDecisionRecord.can_transition_to(UnverifiedNote));
    }

    #[test]
    fn default_config_ranges() {
        let cfg = StatePlaneConfig::default();
        assert_eq!(cfg.l_max, 2048);
        assert!((cfg.lambda_decay - std::f64::consts::LN_2 / 2880.0).abs() < 1e-15);
        let (wu, ws, wn) = cfg.salience_weights;
        assert!((wu + ws + wn - 1.0).abs() < 1e-12);
    }
}
