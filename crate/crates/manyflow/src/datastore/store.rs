//! The three storage backends behind one mutable store facade.
//!
//! `Shared` models a parallel filesystem: one namespace every node can
//! read, no per-node state. `NodeMemory` keeps whole artifacts in the RAM
//! of their ring-home node, capped by per-node capacity, with persistent
//! artifacts written through to the shared namespace. `Striped` cuts
//! content into fixed-size chunks laid round-robin across consecutive
//! distinct ring nodes.
//!
//! The store holds real bytes; it backs simulated runs and the transfer
//! planner. Local process runs keep artifacts on disk instead and do not
//! go through this type.

use super::ring::HashRing;
use super::{ArtifactRef, Location, NodeId, Persistence, StoreError};
use crate::hash::fnv1a;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoreKind {
    Shared,
    NodeMemory,
    Striped,
}

impl std::str::FromStr for StoreKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shared" => Ok(StoreKind::Shared),
            "node-memory" => Ok(StoreKind::NodeMemory),
            "striped" => Ok(StoreKind::Striped),
            other => Err(format!(
                "unknown store kind `{other}` (expected shared, node-memory, or striped)"
            )),
        }
    }
}

/// One completed or planned data movement.
#[derive(Debug, Clone, PartialEq)]
pub struct Transfer {
    pub name: String,
    pub from: Location,
    pub to: Location,
    pub bytes: u64,
}

#[derive(Debug)]
struct NodeStore {
    capacity: u64,
    used: u64,
    /// Full artifacts under their name; chunks under `name#i`.
    held: BTreeMap<String, Vec<u8>>,
}

impl NodeStore {
    fn insert(&mut self, key: String, bytes: Vec<u8>) {
        self.used += bytes.len() as u64;
        if let Some(old) = self.held.insert(key, bytes) {
            self.used -= old.len() as u64;
        }
    }
}

/// Outcome of a `put`: the registered ref plus the movements implied by
/// writing from the producing node to wherever the backend homes content.
#[derive(Debug)]
pub struct PutOutcome {
    pub artifact: ArtifactRef,
    pub transfers: Vec<Transfer>,
}

#[derive(Debug)]
pub struct ClusterStore {
    kind: StoreKind,
    ring: HashRing,
    nodes: BTreeMap<NodeId, NodeStore>,
    shared: BTreeMap<String, Vec<u8>>,
    chunk_bytes: u64,
    /// Striped placement: chunk index → holding node, as placed at put time.
    chunks: BTreeMap<String, Vec<NodeId>>,
    artifacts: BTreeMap<String, ArtifactRef>,
}

impl ClusterStore {
    pub fn new(kind: StoreKind, node_count: u32, node_capacity: u64, chunk_bytes: u64) -> Self {
        let nodes: BTreeMap<NodeId, NodeStore> = (0..node_count)
            .map(|i| {
                (
                    NodeId(i),
                    NodeStore {
                        capacity: node_capacity,
                        used: 0,
                        held: BTreeMap::new(),
                    },
                )
            })
            .collect();
        ClusterStore {
            kind,
            ring: HashRing::with_nodes(super::DEFAULT_REPLICAS, nodes.keys().copied()),
            nodes,
            shared: BTreeMap::new(),
            chunk_bytes: chunk_bytes.max(1),
            chunks: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }

    pub fn ring(&self) -> &HashRing {
        &self.ring
    }

    pub fn chunk_bytes(&self) -> u64 {
        self.chunk_bytes
    }

    pub fn artifact(&self, name: &str) -> Option<&ArtifactRef> {
        self.artifacts.get(name)
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &ArtifactRef> {
        self.artifacts.values()
    }

    pub fn node_used(&self, node: NodeId) -> Option<u64> {
        self.nodes.get(&node).map(|n| n.used)
    }

    pub fn node_capacity(&self, node: NodeId) -> Option<u64> {
        self.nodes.get(&node).map(|n| n.capacity)
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    /// Does `node` hold a complete local copy (full artifact, or every
    /// chunk of a striped artifact)?
    pub fn holds(&self, name: &str, node: NodeId) -> bool {
        let Some(store) = self.nodes.get(&node) else {
            return false;
        };
        if store.held.contains_key(name) {
            return true;
        }
        if let Some(placed) = self.chunks.get(name) {
            return !placed.is_empty()
                && placed.iter().enumerate().all(|(i, n)| {
                    *n == node && store.held.contains_key(&chunk_key(name, i))
                });
        }
        false
    }

    /// Store new content. `origin` is the node that produced the bytes;
    /// transfers describe movement from there to the backend's placement.
    pub fn put(
        &mut self,
        name: &str,
        content: &[u8],
        persistence: Persistence,
        origin: Option<NodeId>,
    ) -> Result<PutOutcome, StoreError> {
        let digest = fnv1a(content);
        if let Some(existing) = self.artifacts.get(name) {
            // Re-puts happen when a producer re-runs after volatile loss.
            // Determinism requires the content to be identical.
            if existing.digest != digest || existing.size != content.len() as u64 {
                return Err(StoreError::DigestMismatch { name: name.into() });
            }
        }
        let size = content.len() as u64;
        let from = origin.map(Location::Node).unwrap_or(Location::SharedFs);
        let mut transfers = Vec::new();
        let mut locations = BTreeSet::new();

        match self.kind {
            StoreKind::Shared => {
                self.shared.insert(name.into(), content.to_vec());
                locations.insert(Location::SharedFs);
                if from != Location::SharedFs {
                    transfers.push(Transfer {
                        name: name.into(),
                        from,
                        to: Location::SharedFs,
                        bytes: size,
                    });
                }
            }
            StoreKind::NodeMemory => {
                let home = self.ring.locate(name)?;
                self.reserve(home, name, size)?;
                self.nodes
                    .get_mut(&home)
                    .expect("home node is live")
                    .insert(name.into(), content.to_vec());
                locations.insert(Location::Node(home));
                if from != Location::Node(home) {
                    transfers.push(Transfer {
                        name: name.into(),
                        from,
                        to: Location::Node(home),
                        bytes: size,
                    });
                }
            }
            StoreKind::Striped => {
                self.clear_chunks(name);
                let n_chunks = n_chunks(size, self.chunk_bytes);
                let targets = self.ring.successors(name, n_chunks)?;
                let mut per_node: BTreeMap<NodeId, u64> = BTreeMap::new();
                let placed: Vec<NodeId> = (0..n_chunks).map(|i| targets[i % targets.len()]).collect();
                for (i, node) in placed.iter().enumerate() {
                    *per_node.entry(*node).or_default() += chunk_len(size, self.chunk_bytes, i);
                }
                // atomic: check every node before committing any chunk
                for (node, add) in &per_node {
                    self.reserve_check(*node, name, *add)?;
                }
                for (i, node) in placed.iter().enumerate() {
                    let lo = i as u64 * self.chunk_bytes;
                    let hi = (lo + self.chunk_bytes).min(size);
                    let bytes = content[lo as usize..hi as usize].to_vec();
                    let len = bytes.len() as u64;
                    self.nodes
                        .get_mut(node)
                        .expect("placement node is live")
                        .insert(chunk_key(name, i), bytes);
                    locations.insert(Location::Node(*node));
                    if from != Location::Node(*node) {
                        transfers.push(Transfer {
                            name: name.into(),
                            from,
                            to: Location::Node(*node),
                            bytes: len,
                        });
                    }
                }
                self.chunks.insert(name.into(), placed);
            }
        }

        if persistence == Persistence::Persistent && self.kind != StoreKind::Shared {
            // write-through so node loss can never take the only copy
            self.shared.insert(name.into(), content.to_vec());
            if !locations.contains(&Location::SharedFs) {
                transfers.push(Transfer {
                    name: name.into(),
                    from,
                    to: Location::SharedFs,
                    bytes: size,
                });
            }
            locations.insert(Location::SharedFs);
        }

        let artifact = match self.artifacts.get_mut(name) {
            Some(existing) => {
                existing.locations.extend(locations);
                existing.clone()
            }
            None => {
                let a = ArtifactRef {
                    name: name.into(),
                    size,
                    digest,
                    persistence,
                    locations,
                };
                self.artifacts.insert(name.into(), a.clone());
                a
            }
        };
        Ok(PutOutcome { artifact, transfers })
    }

    fn reserve_check(&self, node: NodeId, name: &str, size: u64) -> Result<(), StoreError> {
        let store = self
            .nodes
            .get(&node)
            .ok_or(StoreError::UnknownNode { node })?;
        // replacing an identical entry frees its bytes first
        let replaced = store.held.get(name).map(|b| b.len() as u64).unwrap_or(0);
        let used = store.used - replaced;
        if size > store.capacity || used + size > store.capacity {
            return Err(StoreError::Capacity {
                node,
                name: name.into(),
                size,
                used,
                capacity: store.capacity,
            });
        }
        Ok(())
    }

    fn reserve(&mut self, node: NodeId, name: &str, size: u64) -> Result<(), StoreError> {
        self.reserve_check(node, name, size)
    }

    /// Drop any chunk entries a previous put of `name` left on live nodes.
    fn clear_chunks(&mut self, name: &str) {
        if let Some(placed) = self.chunks.remove(name) {
            for (i, node) in placed.iter().enumerate() {
                if let Some(store) = self.nodes.get_mut(node) {
                    if let Some(old) = store.held.remove(&chunk_key(name, i)) {
                        store.used -= old.len() as u64;
                    }
                }
            }
        }
    }

    /// Read back full content from any live copy.
    pub fn get(&self, name: &str) -> Result<Vec<u8>, StoreError> {
        if let Some(bytes) = self.shared.get(name) {
            return Ok(bytes.clone());
        }
        for (node, store) in &self.nodes {
            let _ = node;
            if let Some(bytes) = store.held.get(name) {
                return Ok(bytes.clone());
            }
        }
        if let Some(placed) = self.chunks.get(name) {
            let mut out = Vec::new();
            for (i, node) in placed.iter().enumerate() {
                let chunk = self
                    .nodes
                    .get(node)
                    .and_then(|s| s.held.get(&chunk_key(name, i)))
                    .ok_or_else(|| StoreError::MissingArtifact { name: name.into() })?;
                out.extend_from_slice(chunk);
            }
            return Ok(out);
        }
        Err(StoreError::MissingArtifact { name: name.into() })
    }

    /// Make `dest` hold a complete local copy, returning the movements
    /// performed. Already-holding destinations cost zero bytes.
    pub fn stage_to(&mut self, name: &str, dest: NodeId) -> Result<Vec<Transfer>, StoreError> {
        let artifact = self
            .artifacts
            .get(name)
            .ok_or_else(|| StoreError::MissingArtifact { name: name.into() })?
            .clone();
        if !self.nodes.contains_key(&dest) {
            return Err(StoreError::UnknownNode { node: dest });
        }
        if self.kind == StoreKind::Shared {
            // a shared filesystem has no node-local copies: every read is
            // a fresh pull of `size` bytes from the shared namespace
            return Ok(vec![Transfer {
                name: name.into(),
                from: Location::SharedFs,
                to: Location::Node(dest),
                bytes: artifact.size,
            }]);
        }
        if self.holds(name, dest) {
            return Ok(vec![Transfer {
                name: name.into(),
                from: Location::Node(dest),
                to: Location::Node(dest),
                bytes: 0,
            }]);
        }

        // full copies first; for striped content fall back to per-chunk pulls
        let full_source = self.full_copy_source(name);
        let transfers = if let Some(src) = full_source {
            let content = match src {
                Location::SharedFs => self.shared[name].clone(),
                Location::Node(n) => self.nodes[&n].held[name].clone(),
            };
            self.verify(name, &artifact, &content)?;
            self.reserve(dest, name, artifact.size)?;
            self.nodes
                .get_mut(&dest)
                .expect("checked live")
                .insert(name.into(), content);
            vec![Transfer {
                name: name.into(),
                from: src,
                to: Location::Node(dest),
                bytes: artifact.size,
            }]
        } else if let Some(placed) = self.chunks.get(name).cloned() {
            let mut content = Vec::new();
            let mut parts = Vec::new();
            for (i, node) in placed.iter().enumerate() {
                let chunk = self
                    .nodes
                    .get(node)
                    .and_then(|s| s.held.get(&chunk_key(name, i)))
                    .ok_or_else(|| StoreError::MissingArtifact { name: name.into() })?;
                parts.push(Transfer {
                    name: name.into(),
                    from: Location::Node(*node),
                    to: Location::Node(dest),
                    bytes: chunk.len() as u64,
                });
                content.extend_from_slice(chunk);
            }
            self.verify(name, &artifact, &content)?;
            self.reserve(dest, name, artifact.size)?;
            self.nodes
                .get_mut(&dest)
                .expect("checked live")
                .insert(name.into(), content);
            parts
        } else {
            return Err(StoreError::MissingArtifact { name: name.into() });
        };

        self.artifacts
            .get_mut(name)
            .expect("artifact present")
            .locations
            .insert(Location::Node(dest));
        Ok(transfers)
    }

    fn verify(&self, name: &str, artifact: &ArtifactRef, content: &[u8]) -> Result<(), StoreError> {
        if fnv1a(content) != artifact.digest {
            return Err(StoreError::DigestMismatch { name: name.into() });
        }
        Ok(())
    }

    fn full_copy_source(&self, name: &str) -> Option<Location> {
        for (node, store) in &self.nodes {
            if store.held.contains_key(name) {
                return Some(Location::Node(*node));
            }
        }
        if self.shared.contains_key(name) {
            return Some(Location::SharedFs);
        }
        None
    }

    /// Full-copy holders, smallest node first, shared-fs last. Transfer
    /// planning picks origins from this list.
    pub fn full_locations(&self, name: &str) -> Vec<Location> {
        let mut out: Vec<Location> = self
            .nodes
            .iter()
            .filter(|(_, s)| s.held.contains_key(name))
            .map(|(n, _)| Location::Node(*n))
            .collect();
        if self.shared.contains_key(name) {
            out.push(Location::SharedFs);
        }
        out
    }

    /// Store a full copy at a specific node, registering the artifact if
    /// new. Collective-transfer execution lands bytes wherever the plan
    /// says, not at the ring home.
    pub fn store_at(
        &mut self,
        name: &str,
        content: &[u8],
        persistence: Persistence,
        dest: NodeId,
    ) -> Result<ArtifactRef, StoreError> {
        if !self.nodes.contains_key(&dest) {
            return Err(StoreError::UnknownNode { node: dest });
        }
        let digest = fnv1a(content);
        if let Some(existing) = self.artifacts.get(name) {
            if existing.digest != digest {
                return Err(StoreError::DigestMismatch { name: name.into() });
            }
        }
        if !self.holds(name, dest) {
            self.reserve(dest, name, content.len() as u64)?;
            self.nodes
                .get_mut(&dest)
                .expect("checked live")
                .insert(name.into(), content.to_vec());
        }
        let entry = self
            .artifacts
            .entry(name.to_string())
            .or_insert_with(|| ArtifactRef {
                name: name.into(),
                size: content.len() as u64,
                digest,
                persistence,
                locations: BTreeSet::new(),
            });
        entry.locations.insert(Location::Node(dest));
        Ok(entry.clone())
    }

    /// True while some combination of live copies can reconstruct the
    /// artifact: a shared copy, a whole copy on a live node, or — for
    /// striped content — every chunk on a live node.
    pub fn readable(&self, name: &str) -> bool {
        if self.shared.contains_key(name) {
            return true;
        }
        if self.nodes.values().any(|s| s.held.contains_key(name)) {
            return true;
        }
        if let (Some(artifact), Some(placement)) = (self.artifacts.get(name), self.chunks.get(name))
        {
            let n = n_chunks(artifact.size, self.chunk_bytes);
            return (0..n).all(|i| {
                placement
                    .get(i)
                    .and_then(|node| self.nodes.get(node))
                    .is_some_and(|s| s.held.contains_key(&chunk_key(name, i)))
            });
        }
        false
    }

    /// Kill a node: its memory and chunk copies are gone. Returns the
    /// names of artifacts that no longer have a readable copy anywhere —
    /// one lost chunk is enough to sink a striped artifact.
    pub fn node_failed(&mut self, node: NodeId) -> Vec<String> {
        self.ring.remove_node(node);
        self.nodes.remove(&node);
        for artifact in self.artifacts.values_mut() {
            artifact.locations.remove(&Location::Node(node));
        }
        self.artifacts
            .keys()
            .filter(|name| !self.readable(name))
            .cloned()
            .collect()
    }

    /// Internal-consistency check used by tests: per-node accounting
    /// matches held bytes and respects capacity.
    pub fn check_capacity_invariant(&self) -> Result<(), String> {
        for (node, store) in &self.nodes {
            let sum: u64 = store.held.values().map(|b| b.len() as u64).sum();
            if sum != store.used {
                return Err(format!("{node}: used={} but held sums to {sum}", store.used));
            }
            if store.used > store.capacity {
                return Err(format!(
                    "{node}: used={} exceeds capacity={}",
                    store.used, store.capacity
                ));
            }
        }
        Ok(())
    }
}

fn chunk_key(name: &str, i: usize) -> String {
    format!("{name}#{i}")
}

fn n_chunks(size: u64, chunk_bytes: u64) -> usize {
    (size.div_ceil(chunk_bytes)).max(1) as usize
}

fn chunk_len(size: u64, chunk: u64, i: usize) -> u64 {
    let lo = i as u64 * chunk;
    if lo >= size {
        0
    } else {
        (size - lo).min(chunk)
    }
}
