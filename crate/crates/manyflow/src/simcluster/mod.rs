//! Cluster execution backends: a deterministic discrete-event simulator
//! and a process-spawning local runner.
//!
//! Both drive the same dispatch [`Engine`](crate::dispatch::Engine); they
//! differ only in what "running a task" means. The simulator models
//! dispatch latency, transfer time, node capacity, and scheduled node
//! failures, and is exact — the same config and graph always produce the
//! same event log. The local runner executes real commands in per-task
//! directories under a run root.

mod local;
mod sim;

pub use local::{run_local, LocalError, LocalOptions, LocalOutcome};
pub use sim::{run_simulated, SimResult};

use crate::dataflow::GraphError;
use crate::datastore::{StoreError, StoreKind};
use crate::dispatch::DispatchError;
use std::collections::BTreeMap;

/// Simulated cluster shape and timing, loaded from TOML. Every field has
/// a default, so `{}` is a valid config.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Single-slot compute nodes.
    pub nodes: u32,
    /// Per-node storage cap in bytes (node-memory and striped backends).
    pub node_capacity: u64,
    /// Link bandwidth in bytes/second for every transfer.
    pub bandwidth: f64,
    /// Seconds a dispatcher spends issuing one launch; the whole point of
    /// sharding is dividing this bottleneck by the shard count.
    pub dispatch_latency: f64,
    /// Task compute time when neither the script nor `app_durations`
    /// provides one.
    pub default_duration: f64,
    /// Per-app compute time overrides, keyed by app name.
    pub app_durations: BTreeMap<String, f64>,
    pub store: StoreKind,
    /// Stripe size for the striped backend.
    pub chunk_bytes: u64,
    /// Re-runs allowed per task beyond its first attempt.
    pub max_retries: u32,
    /// Nodes to kill at fixed simulated times.
    pub failures: Vec<FailureSpec>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            nodes: 4,
            node_capacity: 256 * 1024 * 1024,
            bandwidth: 100e6,
            dispatch_latency: 0.0,
            default_duration: 0.001,
            app_durations: BTreeMap::new(),
            store: StoreKind::Shared,
            chunk_bytes: 4096,
            max_retries: 3,
            failures: Vec::new(),
        }
    }
}

impl ClusterConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(StoreError::Io)?;
        Self::from_toml_str(&text).map_err(|e| SimError::Config {
            message: e.to_string(),
        })
    }
}

/// Kill `node` at simulated time `at` (seconds). The node's slot, its
/// stored bytes, and any task running on it are lost together.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct FailureSpec {
    pub at: f64,
    pub node: u32,
}

/// What a simulated run measured.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SimMetrics {
    /// Simulated time of the last task completion, seconds.
    pub makespan: f64,
    pub tasks_completed: u64,
    /// Completions per simulated second.
    pub throughput: f64,
    /// Bytes sent, per transfer source ("n3" or "shared-fs").
    pub egress_bytes: BTreeMap<String, u64>,
    /// Retry events observed (failures, node deaths, volatile re-runs).
    pub reruns: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error("bad cluster config: {message}")]
    Config { message: String },
    #[error("seed content for `{name}` does not match its binding digest")]
    SeedDigest { name: String },
    #[error("failure schedule names node n{node}, but the cluster has {nodes}")]
    UnknownFailureNode { node: u32, nodes: u32 },
}
