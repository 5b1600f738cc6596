use serde::Serialize;

use super::prune::PruneSpec;
use crate::error::{Error, Result};
use crate::moe::RouteOptions;

/// Metric values for one swept setting (`k` or `n`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: usize,
    pub runs: Vec<f64>,
    pub mean: f64,
    /// Population variance over runs.
    pub variance: f64,
}

impl SweepPoint {
    pub fn new(value: usize, runs: Vec<f64>) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let variance = runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        // identical runs give exactly zero, not rounding noise
        let variance = if runs.iter().all(|&r| r == runs[0]) { 0.0 } else { variance };
        SweepPoint { value, runs, mean, variance }
    }
}

/// Parses `"1,2,4"`, `"1..8"` (inclusive) or a mix such as `"1..3,8"`.
pub fn parse_values(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Input(format!("cannot parse value list {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// Evaluates `metric` once per `k`, everything else fixed.
pub fn sweep_active_experts<F>(n_experts: usize, k_values: &[usize], mut metric: F) -> Result<Vec<SweepPoint>>
where
    F: FnMut(&RouteOptions) -> Result<f64>,
{
    if let Some(&k) = k_values.iter().find(|&&k| k == 0 || k > n_experts) {
        return Err(Error::Config(format!("k={k} outside [1, {n_experts}]")));
    }
    k_values
        .iter()
        .map(|&k| Ok(SweepPoint::new(k, vec![metric(&RouteOptions::with_k(k))?])))
        .collect()
}

/// Seed of run `run` at keep-count `n`; every (n, run) pair draws its own masks.
pub fn run_seed(seed: u64, n: usize, run: usize) -> u64 {
    seed ^ ((n as u64) << 32 | run as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Random pruning: for each `n`, `runs` independent draws of `n` kept experts
/// per layer, evaluated at top-`k` routing.
pub fn prune_sweep<F>(
    n_layers: usize,
    n_experts: usize,
    k: usize,
    n_values: &[usize],
    runs: usize,
    seed: u64,
    mut metric: F,
) -> Result<Vec<SweepPoint>>
where
    F: FnMut(&RouteOptions) -> Result<f64>,
{
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let mut out = Vec::new();
    for &n in n_values {
        let mut values = Vec::with_capacity(runs);
        for run in 0..runs {
            let mask = PruneSpec::Uniform { n, seed: run_seed(seed, n, run) }.to_mask(n_layers, n_experts)?;
            values.push(metric(&RouteOptions { k, active: Some(&mask) })?);
        }
        out.push(SweepPoint::new(n, values));
    }
    Ok(out)
}
