use super::trace::{RoutingTrace, Tag};
use crate::error::{Error, Result};

/// Fraction of the `(layer, tag)` routing slots that went to each expert.
pub fn usage_distribution(trace: &RoutingTrace, layer: usize, tag: &Tag) -> Result<Vec<f64>> {
    let total = trace.slots(layer, tag);
    if total == 0 {
        return Err(Error::Query(format!("no routed tokens for layer {layer}, tag {tag}")));
    }
    Ok((0..trace.n_experts).map(|e| trace.count(layer, e, tag) as f64 / total as f64).collect())
}

/// Like [`usage_distribution`] but weighting each slot by its gate.
pub fn gate_mass_distribution(trace: &RoutingTrace, layer: usize, tag: &Tag) -> Result<Vec<f64>> {
    let mass: Vec<f64> = (0..trace.n_experts)
        .map(|e| trace.gate_mass.get(&(layer, e, tag.clone())).copied().unwrap_or(0.0))
        .collect();
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return Err(Error::Query(format!("no routed tokens for layer {layer}, tag {tag}")));
    }
    Ok(mass.into_iter().map(|m| m / total).collect())
}

/// Shannon entropy in nats; zero entries contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    h.max(0.0)
}

/// Usage entropy of every traced layer for one tag, as `(layer, nats)`.
pub fn entropy_profile(trace: &RoutingTrace, tag: &Tag) -> Result<Vec<(usize, f64)>> {
    trace.layers().into_iter().map(|l| Ok((l, entropy(&usage_distribution(trace, l, tag)?)))).collect()
}
