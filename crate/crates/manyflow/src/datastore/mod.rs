//! Artifact storage: backends, consistent-hash placement, and collective
//! transfer planning.
//!
//! Three backends share one interface: a shared filesystem (everything
//! visible everywhere), a node-memory store with consistent-hash location
//! and per-node capacity caps, and a striped store that spreads fixed-size
//! chunks across consecutive ring nodes. [`cdm`] plans collective movement
//! (broadcast/scatter/gather) over whatever the backend reports as current
//! locations.

mod cdm;
mod ring;
mod store;

pub use cdm::{execute_plan, plan_transfers, CdmHint, Pattern, PlannedTransfer, Subject, TransferPlan};
pub use ring::{HashRing, DEFAULT_REPLICAS};
pub use store::{ClusterStore, PutOutcome, StoreKind, Transfer};

use crate::hash::digest_hex;
use std::collections::BTreeSet;

/// A compute node, identified by a small index. Prints as `n<index>`; the
/// printed form is also what feeds the hash ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Where a full copy of an artifact lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Location {
    SharedFs,
    Node(NodeId),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::SharedFs => f.write_str("shared-fs"),
            Location::Node(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Persistence {
    Persistent,
    Volatile,
}

impl std::fmt::Display for Persistence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Persistence::Persistent => f.write_str("persistent"),
            Persistence::Volatile => f.write_str("volatile"),
        }
    }
}

/// Handle to a stored artifact. Content itself lives in a backend; the ref
/// carries enough to find it, verify it, and decide fault handling.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactRef {
    /// Logical POSIX-style relative path under the run root.
    pub name: String,
    pub size: u64,
    /// 64-bit FNV-1a content hash.
    pub digest: u64,
    pub persistence: Persistence,
    pub locations: BTreeSet<Location>,
}

impl ArtifactRef {
    pub fn digest_hex(&self) -> String {
        format!("{:016x}", self.digest)
    }

    /// Row for `artifacts.jsonl`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "size": self.size,
            "digest": self.digest_hex(),
            "persistence": self.persistence.to_string(),
            "locations": self.locations.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
        })
    }
}

/// Compute the digest the same way every backend does.
pub fn content_digest(bytes: &[u8]) -> u64 {
    crate::hash::fnv1a(bytes)
}

/// Hex form used in logs and manifests.
pub fn content_digest_hex(bytes: &[u8]) -> String {
    digest_hex(bytes)
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("hash ring has no nodes")]
    EmptyRing,
    #[error("{name} ({size} B) does not fit on {node}: {used}/{capacity} B used")]
    Capacity {
        node: NodeId,
        name: String,
        size: u64,
        used: u64,
        capacity: u64,
    },
    #[error("artifact {name} has no live copy")]
    MissingArtifact { name: String },
    #[error("unknown node {node}")]
    UnknownNode { node: NodeId },
    #[error("bad transfer hint: {reason}")]
    BadHint { reason: String },
    #[error("artifact {name}: digest mismatch after transfer")]
    DigestMismatch { name: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_forms_are_stable() {
        assert_eq!(NodeId(3).to_string(), "n3");
        assert_eq!(Location::SharedFs.to_string(), "shared-fs");
        assert_eq!(Location::Node(NodeId(0)).to_string(), "n0");
        assert_eq!(Persistence::Volatile.to_string(), "volatile");
    }

    #[test]
    fn artifact_json_row_shape() {
        let a = ArtifactRef {
            name: "out/x.dat".into(),
            size: 12,
            digest: 0xabc,
            persistence: Persistence::Persistent,
            locations: BTreeSet::from([Location::SharedFs, Location::Node(NodeId(1))]),
        };
        let v = a.to_json();
        assert_eq!(v["digest"], "0000000000000abc");
        assert_eq!(v["locations"], serde_json::json!(["shared-fs", "n1"]));
    }
}
