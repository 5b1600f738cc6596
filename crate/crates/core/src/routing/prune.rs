use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::{RouteOptions, RoutingDecision};

/// Which experts stay routable in each layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PruneSpec {
    /// Explicit kept sets; layers not listed keep every expert.
    Keep(BTreeMap<usize, BTreeSet<usize>>),
    /// `n` experts per layer drawn independently at random.
    Uniform { n: usize, seed: u64 },
}

impl PruneSpec {
    /// Keeps, per layer, exactly the experts used in a decision log.
    pub fn from_decisions(decisions: &[RoutingDecision]) -> Self {
        let mut keep: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for d in decisions {
            keep.entry(d.layer).or_default().extend(d.expert_indices.iter().copied());
        }
        PruneSpec::Keep(keep)
    }

    pub fn keep_all(n_layers: usize, n_experts: usize) -> Self {
        PruneSpec::Keep((0..n_layers).map(|l| (l, (0..n_experts).collect())).collect())
    }

    /// Per-layer active masks.
    pub fn to_mask(&self, n_layers: usize, n_experts: usize) -> Result<Vec<Vec<bool>>> {
        match self {
            PruneSpec::Keep(keep) => {
                let mut mask = vec![vec![true; n_experts]; n_layers];
                for (&layer, set) in keep {
                    if layer >= n_layers {
                        return Err(Error::Config(format!("prune spec names layer {layer} of {n_layers}")));
                    }
                    if set.is_empty() {
                        return Err(Error::Config(format!("layer {layer} keeps no experts")));
                    }
                    if let Some(&e) = set.iter().find(|&&e| e >= n_experts) {
                        return Err(Error::Config(format!("layer {layer} keeps expert {e} of {n_experts}")));
                    }
                    mask[layer] = (0..n_experts).map(|e| set.contains(&e)).collect();
                }
                Ok(mask)
            }
            PruneSpec::Uniform { n, seed } => {
                if *n == 0 || *n > n_experts {
                    return Err(Error::Config(format!("cannot keep {n} of {n_experts} experts")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..n_layers)
                    .map(|_| {
                        let mut m = vec![false; n_experts];
                        for e in rand::seq::index::sample(&mut rng, n_experts, *n) {
                            m[e] = true;
                        }
                        m
                    })
                    .collect())
            }
        }
    }
}

/// A model with restricted routing. Holds a reference to the model and a
/// mask; weights are never copied or changed.
#[derive(Debug)]
pub struct PrunedModel<'a, M> {
    pub model: &'a M,
    pub active: Vec<Vec<bool>>,
}

impl<'a, M> PrunedModel<'a, M> {
    pub fn kept(&self, layer: usize) -> usize {
        self.active[layer].iter().filter(|&&a| a).count()
    }

    /// Routing options for top-`k` routing; each layer uses `min(k, kept)` experts.
    pub fn route(&self, k: usize) -> RouteOptions<'_> {
        RouteOptions { k, active: Some(&self.active) }
    }
}

pub fn prune_experts<'a, M>(model: &'a M, n_layers: usize, n_experts: usize, spec: &PruneSpec) -> Result<PrunedModel<'a, M>> {
    Ok(PrunedModel { model, active: spec.to_mask(n_layers, n_experts)? })
}
