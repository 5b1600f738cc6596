use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::RoutingDecision;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Language,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Vision => "vision",
            Modality::Language => "language",
        })
    }
}

/// Token bucket for routing statistics.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tag {
    pub modality: Modality,
    pub domain: String,
}

impl Tag {
    pub fn new(modality: Modality, domain: impl Into<String>) -> Self {
        Tag { modality, domain: domain.into() }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.modality, self.domain)
    }
}

/// Per-layer, per-expert routing counts bucketed by tag. Each (token,
/// selected expert) slot is counted once regardless of its gate; gate mass is
/// tracked separately.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoutingTrace {
    pub n_experts: usize,
    pub counts: BTreeMap<(usize, usize, Tag), u64>,
    pub total_slots: BTreeMap<(usize, Tag), u64>,
    pub tokens: BTreeMap<(usize, Tag), u64>,
    pub gate_mass: BTreeMap<(usize, usize, Tag), f64>,
}

impl RoutingTrace {
    pub fn new(n_experts: usize) -> Self {
        RoutingTrace { n_experts, ..Default::default() }
    }

    pub fn record(&mut self, tag: &Tag, decision: &RoutingDecision) {
        let layer = decision.layer;
        for (&e, &g) in decision.expert_indices.iter().zip(&decision.gate_weights) {
            *self.counts.entry((layer, e, tag.clone())).or_default() += 1;
            *self.gate_mass.entry((layer, e, tag.clone())).or_default() += g;
        }
        *self.total_slots.entry((layer, tag.clone())).or_default() += decision.expert_indices.len() as u64;
        *self.tokens.entry((layer, tag.clone())).or_default() += 1;
    }

    /// Adds another trace's counts into this one. Commutative and associative over counts.
    pub fn merge(&mut self, other: &RoutingTrace) {
        self.n_experts = self.n_experts.max(other.n_experts);
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.total_slots {
            *self.total_slots.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.tokens {
            *self.tokens.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.gate_mass {
            *self.gate_mass.entry(k.clone()).or_default() += v;
        }
    }

    pub fn layers(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.total_slots.keys().map(|(l, _)| *l).collect();
        out.dedup();
        out
    }

    pub fn tags(&self) -> Vec<Tag> {
        let mut out: Vec<Tag> = self.total_slots.keys().map(|(_, t)| t.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn count(&self, layer: usize, expert: usize, tag: &Tag) -> u64 {
        self.counts.get(&(layer, expert, tag.clone())).copied().unwrap_or(0)
    }

    pub fn slots(&self, layer: usize, tag: &Tag) -> u64 {
        self.total_slots.get(&(layer, tag.clone())).copied().unwrap_or(0)
    }

    /// Checks that expert counts add up to the slot total for every bucket.
    pub fn check_conservation(&self) -> Result<()> {
        for ((layer, tag), &total) in &self.total_slots {
            let sum: u64 = (0..self.n_experts).map(|e| self.count(*layer, e, tag)).sum();
            if sum != total {
                return Err(Error::Internal(format!("layer {layer} tag {tag}: {sum} counted slots vs {total} total")));
            }
        }
        Ok(())
    }
}
