//! Routing analyses: usage distributions, active-expert sweeps and pruning.

pub mod prune;
pub mod report;
pub mod stats;
pub mod sweep;
pub mod trace;

pub use prune::{prune_experts, PruneSpec, PrunedModel};
pub use stats::{entropy, entropy_profile, gate_mass_distribution, usage_distribution};
pub use sweep::{parse_values, prune_sweep, sweep_active_experts, SweepPoint};
pub use trace::{Modality, RoutingTrace, Tag};
