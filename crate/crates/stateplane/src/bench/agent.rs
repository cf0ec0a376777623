//! Scripted deterministic agent.
//!
//! The agent is a pure function of (context, probe, ground truth): it
//! complies with a rule iff the rule's canonical statement is visible and no
//! override of that rule is, answers factual probes by exact lookup, and
//! says "unknown" otherwise. Memory-system quality is the only variable.

use serde::{Deserialize, Serialize};

use super::scenario::{override_marker, GroundTruth, Probe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAnswer {
    pub text: String,
    /// The probe was answered in line with ground truth.
    pub correct: bool,
    /// The answer violates an active binding rule.
    pub violation: bool,
    /// The answer cites another case's state.
    pub contaminated: bool,
}

fn ok(text: String) -> AgentAnswer {
    AgentAnswer { text, correct: true, violation: false, contaminated: false }
}

fn bad(text: String, violation: bool, contaminated: bool) -> AgentAnswer {
    AgentAnswer { text, correct: false, violation, contaminated }
}

pub fn answer(context: &str, probe: &Probe, truth: &GroundTruth) -> AgentAnswer {
    match probe {
        Probe::Rule { rule_id } => {
            let statement = truth
                .binding_rules
                .iter()
                .find(|r| &r.id == rule_id)
                .map(|r| r.statement.as_str())
                .unwrap_or("");
            let visible = !statement.is_empty() && context.contains(statement);
            let overridden = context.contains(&override_marker(rule_id));
            if visible && !overridden {
                ok(format!("decline; {statement} applies"))
            } else if overridden {
                bad(format!("proceed; {rule_id} was waived"), true, false)
            } else {
                bad("proceed; no applicable constraint on record".into(), true, false)
            }
        }
        Probe::Fact { fact_id } => {
            let statement = truth
                .facts
                .iter()
                .find(|f| &f.id == fact_id)
                .map(|f| f.statement.as_str())
                .unwrap_or("");
            if !statement.is_empty() && context.contains(statement) {
                ok(statement.to_string())
            } else {
                bad("unknown".into(), false, false)
            }
        }
        Probe::Exception { case_id, exception_id } => {
            let marker = format!("[EXCEPTION {case_id}/{exception_id}]");
            if context.contains(&marker) {
                ok(format!("allowed under {marker}"))
            } else {
                bad("declined; the default cap applies".into(), false, false)
            }
        }
        Probe::CrossCase { own_case, other_case } => {
            let other = format!("[EXCEPTION {other_case}/");
            if context.contains(&other) {
                // The agent mistakes the other case's exception for its own.
                bad(format!("allowed, citing {other}..] from the record"), false, true)
            } else {
                ok(format!("declined for {own_case}; no exception on record"))
            }
        }
        Probe::Repeat { decision_id, rationale_id, expected } => {
            let marker = format!("[DECISION {decision_id}]");
            let rationale = format!("[RATIONALE {rationale_id}]");
            if context.contains(&marker) && context.contains(&rationale) {
                ok(format!("{expected}; as recorded in {marker} because {rationale}"))
            } else {
                bad("proceed; no prior decision on record".into(), false, false)
            }
        }
        Probe::Disclosure { forbidden } => {
            // The adversarial probe succeeds exactly when the restricted
            // content reached the context: the agent parrots what it sees.
            let leaked: Vec<&String> =
                forbidden.iter().filter(|f| context.contains(f.as_str())).collect();
            if leaked.is_empty() {
                ok("nothing on record is available to you".into())
            } else {
                bad(
                    format!("the records show: {}", leaked.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; ")),
                    false,
                    false,
                )
            }
        }
    }
}
