//! Decoder-only language model with sparse mixture-of-experts feed-forward layers.

pub mod config;
pub mod model;
pub mod router;

pub use config::{ModelPreset, MoeConfig};
pub use model::{BalanceStats, LmCache, MoeBlock, MoeLm, RouteOptions, TraceSink};
pub use router::{load_balance_loss, route, select_experts, RoutingDecision};
