//! Event boundary detection over the interaction stream.
//!
//! The latent cognitive state is proxied by a smoothed unigram distribution
//! over a sliding window of turns. A boundary fires when the KL divergence
//! between the window before and after a new turn exceeds the configured
//! threshold, or when the turn carries a structural marker (goal shift,
//! decision, failure, surprise) regardless of lexical drift.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{StatePlaneConfig, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnRole {
    User,
    Agent,
    Tool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuralMarker {
    GoalShift,
    Decision,
    Failure,
    Surprise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionTurn {
    pub tick: Tick,
    pub role: TurnRole,
    pub text: String,
    #[serde(default)]
    pub structural_markers: BTreeSet<StructuralMarker>,
}

impl InteractionTurn {
    pub fn new(tick: Tick, role: TurnRole, text: impl Into<String>) -> Self {
        InteractionTurn {
            tick,
            role,
            text: text.into(),
            structural_markers: BTreeSet::new(),
        }
    }

    pub fn with_markers(mut self, markers: impl IntoIterator<Item = StructuralMarker>) -> Self {
        self.structural_markers.extend(markers);
        self
    }
}

/// Smoothed unigram distribution; the lexical surrogate for P(S|H).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistribution {
    pub vocab: Vec<String>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SegmentationError {
    #[error("cannot build a distribution from zero turns")]
    EmptyInput,
    #[error("distributions are over different vocabularies")]
    VocabMismatch,
}

/// Lowercase tokens split on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

fn token_counts(turns: &[InteractionTurn]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for turn in turns {
        for tok in tokenize(&turn.text) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    counts
}

/// Raw (unsmoothed) unigram distribution over the turns' own vocabulary.
pub fn build_distribution(turns: &[InteractionTurn]) -> Result<FeatureDistribution, SegmentationError> {
    if turns.is_empty() {
        return Err(SegmentationError::EmptyInput);
    }
    let counts = token_counts(turns);
    let total: u64 = counts.values().sum();
    let total = total.max(1) as f64;
    let (vocab, probs) = counts
        .into_iter()
        .map(|(t, c)| (t, c as f64 / total))
        .unzip();
    Ok(FeatureDistribution { vocab, probs })
}

/// Builds both distributions add-one smoothed over the union vocabulary, so
/// KL between them is always finite.
pub fn build_smoothed_pair(
    before: &[InteractionTurn],
    after: &[InteractionTurn],
) -> Result<(FeatureDistribution, FeatureDistribution), SegmentationError> {
    if before.is_empty() || after.is_empty() {
        return Err(SegmentationError::EmptyInput);
    }
    let counts_b = token_counts(before);
    let counts_a = token_counts(after);
    let vocab: Vec<String> = counts_b
        .keys()
        .chain(counts_a.keys())
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let smooth = |counts: &BTreeMap<String, u64>| {
        let total: u64 = counts.values().sum();
        let denom = total as f64 + vocab.len() as f64;
        let probs: Vec<f64> = vocab
            .iter()
            .map(|t| (counts.get(t).copied().unwrap_or(0) as f64 + 1.0) / denom)
            .collect();
        FeatureDistribution { vocab: vocab.clone(), probs }
    };
    Ok((smooth(&counts_b), smooth(&counts_a)))
}

/// KL(p || q) = sum p_i * ln(p_i / q_i). Requires a shared vocabulary.
pub fn kl_divergence(p: &FeatureDistribution, q: &FeatureDistribution) -> Result<f64, SegmentationError> {
    if p.vocab != q.vocab {
        return Err(SegmentationError::VocabMismatch);
    }
    let mut sum = 0.0;
    for (pi, qi) in p.probs.iter().zip(&q.probs) {
        if *pi > 0.0 {
            sum += pi * (pi / qi).ln();
        }
    }
    // Gibbs guarantees non-negativity; clamp away float dust near zero.
    Ok(sum.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTrigger {
    Kl,
    Structural,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDecision {
    pub is_boundary: bool,
    pub kl_score: f64,
    pub trigger: BoundaryTrigger,
}

/// Compares the last-W-turn distribution before and after appending
/// `new_turn`. Structural markers short-circuit to a boundary regardless of
/// the KL score. An empty window (cold start) is always a boundary.
pub fn detect_boundary(
    window: &[InteractionTurn],
    new_turn: &InteractionTurn,
    cfg: &StatePlaneConfig,
) -> BoundaryDecision {
    let structural = !new_turn.structural_markers.is_empty();
    if window.is_empty() {
        return BoundaryDecision {
            is_boundary: true,
            kl_score: 0.0,
            trigger: if structural { BoundaryTrigger::Structural } else { BoundaryTrigger::Kl },
        };
    }
    let w = cfg.window_w.max(1);
    let before: Vec<InteractionTurn> = window.iter().rev().take(w).rev().cloned().collect();
    let mut extended: Vec<InteractionTurn> = window.to_vec();
    extended.push(new_turn.clone());
    let after: Vec<InteractionTurn> = extended.iter().rev().take(w).rev().cloned().collect();
    let (p, q) = build_smoothed_pair(&before, &after).expect("both spans non-empty");
    let kl_score = kl_divergence(&p, &q).expect("shared vocabulary by construction");

    if structural {
        BoundaryDecision { is_boundary: true, kl_score, trigger: BoundaryTrigger::Structural }
    } else if kl_score > cfg.theta_boundary {
        BoundaryDecision { is_boundary: true, kl_score, trigger: BoundaryTrigger::Kl }
    } else {
        BoundaryDecision { is_boundary: false, kl_score, trigger: BoundaryTrigger::None }
    }
}
