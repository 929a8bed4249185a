//! Collective data movement: plan broadcast/scatter/gather/direct
//! transfers at the file level.
//!
//! Planning is pure — it reads current holder locations and produces an
//! ordered step list — and [`execute_plan`] applies a plan to a store.
//! The broadcast planner builds a binomial tree: every round, every holder
//! forwards to one target that still lacks the artifact, so holders double
//! each round. The direct planner is the deliberately naive baseline it is
//! measured against: one origin-sourced copy per listed target, no
//! dedup­lication, no forwarding.
//!
//! Scatter cuts one artifact into `|targets|` contiguous parts named
//! `<name>.s<i>` (chunk `i` to target `i`, sizes as even as possible with
//! the remainder spread over the leading parts). Gather is its inverse: it
//! accepts parts named `<stem>.s0 .. <stem>.s<k-1>` in order and merges
//! them back into `<stem>` at the single target node.

use super::{ArtifactRef, ClusterStore, Location, NodeId, Persistence, StoreError, Transfer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Direct,
    Broadcast,
    Scatter,
    Gather,
}

impl std::str::FromStr for Pattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(Pattern::Direct),
            "broadcast" => Ok(Pattern::Broadcast),
            "scatter" => Ok(Pattern::Scatter),
            "gather" => Ok(Pattern::Gather),
            other => Err(format!("unknown transfer pattern `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Subject {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdmHint {
    pub pattern: Pattern,
    pub subject: Subject,
    pub targets: Vec<NodeId>,
}

impl CdmHint {
    /// Parse the CLI form `PATTERN=SUBJECT:TARGETS`, e.g.
    /// `broadcast=mesh.dat:n0,n1,n2` or `gather=a.s0,a.s1:n3`.
    /// Node ids accept `n3` or bare `3`.
    pub fn parse(text: &str) -> Result<CdmHint, String> {
        let (pattern, rest) = text
            .split_once('=')
            .ok_or_else(|| format!("hint `{text}` is missing `=` (PATTERN=SUBJECT:TARGETS)"))?;
        let pattern: Pattern = pattern.parse()?;
        let (subject, targets) = rest
            .rsplit_once(':')
            .ok_or_else(|| format!("hint `{text}` is missing `:TARGETS`"))?;
        if subject.is_empty() {
            return Err(format!("hint `{text}` names no artifact"));
        }
        let subject = if subject.contains(',') {
            Subject::Many(subject.split(',').map(str::to_string).collect())
        } else if pattern == Pattern::Gather {
            Subject::Many(vec![subject.to_string()])
        } else {
            Subject::One(subject.to_string())
        };
        let mut nodes = Vec::new();
        for part in targets.split(',').filter(|p| !p.is_empty()) {
            let digits = part.strip_prefix('n').unwrap_or(part);
            let id: u32 = digits
                .parse()
                .map_err(|_| format!("bad node id `{part}` in hint"))?;
            nodes.push(NodeId(id));
        }
        if nodes.is_empty() {
            return Err(format!("hint `{text}` lists no target nodes"));
        }
        Ok(CdmHint {
            pattern,
            subject,
            targets: nodes,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTransfer {
    /// 1-based round; transfers within a round are independent.
    pub round: u32,
    /// Artifact (or part) name this step materializes at `to`.
    pub name: String,
    pub from: Location,
    pub to: NodeId,
    /// Byte range of the *source* artifact carried by this step
    /// (scatter slices; full range elsewhere).
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferPlan {
    pub pattern: Pattern,
    pub steps: Vec<PlannedTransfer>,
    /// Gather only: (merged artifact name, part names in concatenation order).
    pub assemble: Option<(String, Vec<String>)>,
}

impl TransferPlan {
    pub fn rounds(&self) -> u32 {
        self.steps.iter().map(|s| s.round).max().unwrap_or(0)
    }

    /// File-copies sent from one location (an artifact's origin egress).
    pub fn egress(&self, from: Location) -> usize {
        self.steps.iter().filter(|s| s.from == from).count()
    }

    pub fn total_copies(&self) -> usize {
        self.steps.len()
    }

    pub fn total_bytes(&self) -> u64 {
        self.steps.iter().map(|s| s.bytes).sum()
    }
}

fn subject_artifact<'s>(store: &'s ClusterStore, name: &str) -> Result<&'s ArtifactRef, StoreError> {
    store
        .artifact(name)
        .ok_or_else(|| StoreError::MissingArtifact { name: name.into() })
}

fn origin_of(store: &ClusterStore, name: &str) -> Result<Location, StoreError> {
    store
        .full_locations(name)
        .into_iter()
        .next()
        .ok_or_else(|| StoreError::MissingArtifact { name: name.into() })
}

/// Build an ordered transfer plan for a hint against current store state.
pub fn plan_transfers(hint: &CdmHint, store: &ClusterStore) -> Result<TransferPlan, StoreError> {
    match (hint.pattern, &hint.subject) {
        (Pattern::Direct, Subject::One(name)) => {
            let a = subject_artifact(store, name)?;
            let origin = origin_of(store, name)?;
            let steps = hint
                .targets
                .iter()
                .map(|t| PlannedTransfer {
                    round: 1,
                    name: name.clone(),
                    from: origin,
                    to: *t,
                    offset: 0,
                    bytes: a.size,
                })
                .collect();
            Ok(TransferPlan {
                pattern: Pattern::Direct,
                steps,
                assemble: None,
            })
        }
        (Pattern::Broadcast, Subject::One(name)) => {
            let a = subject_artifact(store, name)?;
            let origin = origin_of(store, name)?;
            // senders in acquisition order: origin, then any target that
            // already holds a copy, then receivers as they acquire one
            let mut senders: Vec<Location> = vec![origin];
            let mut pending: Vec<NodeId> = Vec::new();
            for t in &hint.targets {
                let loc = Location::Node(*t);
                if loc == origin || pending.contains(t) || senders.contains(&loc) {
                    continue;
                }
                if store.holds(name, *t) {
                    senders.push(loc);
                } else {
                    pending.push(*t);
                }
            }
            let mut steps = Vec::new();
            let mut round = 0;
            while !pending.is_empty() {
                round += 1;
                let wave: Vec<NodeId> = pending.drain(..pending.len().min(senders.len())).collect();
                for (sender_idx, target) in wave.iter().enumerate() {
                    steps.push(PlannedTransfer {
                        round,
                        name: name.clone(),
                        from: senders[sender_idx],
                        to: *target,
                        offset: 0,
                        bytes: a.size,
                    });
                }
                senders.extend(wave.into_iter().map(Location::Node));
            }
            Ok(TransferPlan {
                pattern: Pattern::Broadcast,
                steps,
                assemble: None,
            })
        }
        (Pattern::Scatter, Subject::One(name)) => {
            let a = subject_artifact(store, name)?;
            let origin = origin_of(store, name)?;
            let k = hint.targets.len() as u64;
            if k == 0 {
                return Err(StoreError::BadHint {
                    reason: "scatter needs at least one target".into(),
                });
            }
            let base = a.size / k;
            let rem = a.size % k;
            let mut offset = 0;
            let mut steps = Vec::new();
            for (i, t) in hint.targets.iter().enumerate() {
                let len = base + if (i as u64) < rem { 1 } else { 0 };
                steps.push(PlannedTransfer {
                    round: 1,
                    name: part_name(name, i),
                    from: origin,
                    to: *t,
                    offset,
                    bytes: len,
                });
                offset += len;
            }
            Ok(TransferPlan {
                pattern: Pattern::Scatter,
                steps,
                assemble: None,
            })
        }
        (Pattern::Gather, Subject::Many(parts)) => {
            let [dest] = hint.targets.as_slice() else {
                return Err(StoreError::BadHint {
                    reason: "gather takes exactly one target node".into(),
                });
            };
            let stem = gather_stem(parts).map_err(|reason| StoreError::BadHint { reason })?;
            let mut steps = Vec::new();
            for part in parts {
                let a = subject_artifact(store, part)?;
                let from = origin_of(store, part)?;
                steps.push(PlannedTransfer {
                    round: 1,
                    name: part.clone(),
                    from,
                    to: *dest,
                    offset: 0,
                    bytes: a.size,
                });
            }
            Ok(TransferPlan {
                pattern: Pattern::Gather,
                steps,
                assemble: Some((stem, parts.clone())),
            })
        }
        (Pattern::Gather, Subject::One(name)) => plan_transfers(
            &CdmHint {
                pattern: Pattern::Gather,
                subject: Subject::Many(vec![name.clone()]),
                targets: hint.targets.clone(),
            },
            store,
        ),
        (_, Subject::Many(_)) => Err(StoreError::BadHint {
            reason: format!("{:?} takes a single subject artifact", hint.pattern),
        }),
    }
}

/// Apply a plan, moving real bytes. Returns the executed transfers in step
/// order (gather appends no extra transfer for local assembly).
pub fn execute_plan(store: &mut ClusterStore, plan: &TransferPlan) -> Result<Vec<Transfer>, StoreError> {
    let mut done = Vec::new();
    for step in &plan.steps {
        match plan.pattern {
            Pattern::Scatter => {
                // slice the source artifact; the part becomes its own artifact
                let source_name = scatter_source(&step.name);
                let content = store.get(&source_name)?;
                let lo = step.offset as usize;
                let hi = lo + step.bytes as usize;
                store.store_at(&step.name, &content[lo..hi], Persistence::Volatile, step.to)?;
            }
            _ => {
                let content = store.get(&step.name)?;
                let persistence = store
                    .artifact(&step.name)
                    .map(|a| a.persistence)
                    .unwrap_or(Persistence::Volatile);
                store.store_at(&step.name, &content, persistence, step.to)?;
            }
        }
        done.push(Transfer {
            name: step.name.clone(),
            from: step.from,
            to: Location::Node(step.to),
            bytes: step.bytes,
        });
    }
    if let Some((merged, parts)) = &plan.assemble {
        let dest = plan.steps.first().map(|s| s.to).ok_or_else(|| StoreError::BadHint {
            reason: "gather plan has no steps".into(),
        })?;
        let mut content = Vec::new();
        for part in parts {
            content.extend_from_slice(&store.get(part)?);
        }
        store.store_at(merged, &content, Persistence::Volatile, dest)?;
    }
    Ok(done)
}

fn part_name(name: &str, i: usize) -> String {
    format!("{name}.s{i}")
}

fn scatter_source(part: &str) -> String {
    match part.rsplit_once(".s") {
        Some((stem, idx)) if idx.chars().all(|c| c.is_ascii_digit()) => stem.to_string(),
        _ => part.to_string(),
    }
}

/// Parts must be `<stem>.s0 .. <stem>.s<k-1>` in positional order.
fn gather_stem(parts: &[String]) -> Result<String, String> {
    if parts.is_empty() {
        return Err("gather needs at least one part".into());
    }
    let Some((stem, _)) = parts[0].rsplit_once(".s") else {
        return Err(format!(
            "gather part `{}` is not of the form <name>.s<i>",
            parts[0]
        ));
    };
    for (i, part) in parts.iter().enumerate() {
        if *part != part_name(stem, i) {
            return Err(format!(
                "gather part `{part}` out of order: expected `{}`",
                part_name(stem, i)
            ));
        }
    }
    Ok(stem.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::StoreKind;
    use crate::hash::fnv1a;

    const MIB: u64 = 1024 * 1024;

    fn store_with(name: &str, content: &[u8], nodes: u32) -> ClusterStore {
        let mut s = ClusterStore::new(StoreKind::NodeMemory, nodes, 64 * MIB, 4096);
        s.put(name, content, Persistence::Volatile, None).unwrap();
        s
    }

    fn origin_node(s: &ClusterStore, name: &str) -> NodeId {
        s.ring().locate(name).unwrap()
    }

    #[test]
    fn broadcast_8_targets_is_3_rounds_7_copies() {
        let s = store_with("m.dat", &[5u8; 1000], 8);
        let origin = origin_node(&s, "m.dat");
        let hint = CdmHint {
            pattern: Pattern::Broadcast,
            subject: Subject::One("m.dat".into()),
            targets: (0..8).map(NodeId).collect(),
        };
        let plan = plan_transfers(&hint, &s).unwrap();
        assert_eq!(plan.rounds(), 3);
        assert_eq!(plan.total_copies(), 7);
        assert_eq!(plan.egress(Location::Node(origin)), 3);
    }

    #[test]
    fn direct_8_targets_is_8_copies_from_origin() {
        let s = store_with("m.dat", &[5u8; 1000], 8);
        let origin = origin_node(&s, "m.dat");
        let hint = CdmHint {
            pattern: Pattern::Direct,
            subject: Subject::One("m.dat".into()),
            targets: (0..8).map(NodeId).collect(),
        };
        let plan = plan_transfers(&hint, &s).unwrap();
        assert_eq!(plan.total_copies(), 8);
        assert_eq!(plan.egress(Location::Node(origin)), 8);
        assert_eq!(plan.rounds(), 1);
    }

    #[test]
    fn broadcast_execution_lands_copies_everywhere() {
        let mut s = store_with("m.dat", &[7u8; 512], 8);
        let hint = CdmHint {
            pattern: Pattern::Broadcast,
            subject: Subject::One("m.dat".into()),
            targets: (0..8).map(NodeId).collect(),
        };
        let plan = plan_transfers(&hint, &s).unwrap();
        execute_plan(&mut s, &plan).unwrap();
        for n in 0..8 {
            assert!(s.holds("m.dat", NodeId(n)), "n{n} missing copy");
        }
        s.check_capacity_invariant().unwrap();
    }

    #[test]
    fn broadcast_senders_forward_what_they_received() {
        // every sender in round r must have received (or held) the
        // artifact in a round strictly before r
        let s = store_with("m.dat", &[1u8; 64], 16);
        let origin = Location::Node(origin_node(&s, "m.dat"));
        let hint = CdmHint {
            pattern: Pattern::Broadcast,
            subject: Subject::One("m.dat".into()),
            targets: (0..16).map(NodeId).collect(),
        };
        let plan = plan_transfers(&hint, &s).unwrap();
        for step in &plan.steps {
            if step.from == origin {
                continue;
            }
            let acquired = plan
                .steps
                .iter()
                .find(|p| Location::Node(p.to) == step.from)
                .map(|p| p.round)
                .expect("sender acquired a copy");
            assert!(acquired < step.round, "{step:?} sends before holding");
        }
    }

    #[test]
    fn scatter_splits_evenly_with_remainder_up_front() {
        let s = store_with("big", &[9u8; 10], 4);
        let hint = CdmHint {
            pattern: Pattern::Scatter,
            subject: Subject::One("big".into()),
            targets: (0..4).map(NodeId).collect(),
        };
        let plan = plan_transfers(&hint, &s).unwrap();
        // 10 bytes over 4 targets → 3,3,2,2, contiguous
        let sizes: Vec<u64> = plan.steps.iter().map(|s| s.bytes).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
        let offsets: Vec<u64> = plan.steps.iter().map(|s| s.offset).collect();
        assert_eq!(offsets, vec![0, 3, 6, 8]);
        assert_eq!(plan.steps[2].name, "big.s2");
    }

    #[test]
    fn scatter_then_gather_roundtrips_bit_exact() {
        let content: Vec<u8> = (0..10_000u32).map(|i| (i % 253) as u8).collect();
        let mut s = store_with("a.dat", &content, 4);
        let digest = fnv1a(&content);

        let scatter = CdmHint {
            pattern: Pattern::Scatter,
            subject: Subject::One("a.dat".into()),
            targets: (0..4).map(NodeId).collect(),
        };
        let plan = plan_transfers(&scatter, &s).unwrap();
        execute_plan(&mut s, &plan).unwrap();

        let gather = CdmHint {
            pattern: Pattern::Gather,
            subject: Subject::Many((0..4).map(|i| format!("a.dat.s{i}")).collect()),
            targets: vec![NodeId(2)],
        };
        let plan = plan_transfers(&gather, &s).unwrap();
        // gather re-produces `a.dat`; store verifies the digest on re-put
        execute_plan(&mut s, &plan).unwrap();
        assert!(s.holds("a.dat", NodeId(2)));
        assert_eq!(fnv1a(&s.get("a.dat").unwrap()), digest);
    }

    #[test]
    fn gather_concatenates_in_part_order() {
        let mut s = ClusterStore::new(StoreKind::NodeMemory, 4, MIB, 4096);
        // parts sized 1,2,3,4 KiB → one 10 KiB artifact, order preserved
        let mut expect = Vec::new();
        for i in 0..4u8 {
            let bytes = vec![i + 1; (i as usize + 1) * 1024];
            expect.extend_from_slice(&bytes);
            s.put(&format!("part.s{i}"), &bytes, Persistence::Volatile, None)
                .unwrap();
        }
        let hint = CdmHint {
            pattern: Pattern::Gather,
            subject: Subject::Many((0..4).map(|i| format!("part.s{i}")).collect()),
            targets: vec![NodeId(0)],
        };
        let plan = plan_transfers(&hint, &s).unwrap();
        execute_plan(&mut s, &plan).unwrap();
        let merged = s.get("part").unwrap();
        assert_eq!(merged.len(), 10 * 1024);
        assert_eq!(merged, expect);
    }

    #[test]
    fn bad_hints_are_rejected() {
        let s = store_with("x", b"abc", 2);
        let scatter_no_targets = CdmHint {
            pattern: Pattern::Scatter,
            subject: Subject::One("x".into()),
            targets: vec![],
        };
        assert!(matches!(
            plan_transfers(&scatter_no_targets, &s),
            Err(StoreError::BadHint { .. })
        ));
        let missing = CdmHint {
            pattern: Pattern::Broadcast,
            subject: Subject::One("nope".into()),
            targets: vec![NodeId(0)],
        };
        assert!(matches!(
            plan_transfers(&missing, &s),
            Err(StoreError::MissingArtifact { .. })
        ));
        let unordered = CdmHint {
            pattern: Pattern::Gather,
            subject: Subject::Many(vec!["x.s1".into(), "x.s0".into()]),
            targets: vec![NodeId(0)],
        };
        assert!(matches!(
            plan_transfers(&unordered, &s),
            Err(StoreError::BadHint { .. })
        ));
    }

    #[test]
    fn hint_parsing_accepts_both_node_forms() {
        let h = CdmHint::parse("broadcast=mesh.dat:n0,n1,2").unwrap();
        assert_eq!(h.pattern, Pattern::Broadcast);
        assert_eq!(h.subject, Subject::One("mesh.dat".into()));
        assert_eq!(h.targets, vec![NodeId(0), NodeId(1), NodeId(2)]);
        let g = CdmHint::parse("gather=a.s0,a.s1:n3").unwrap();
        assert_eq!(g.subject, Subject::Many(vec!["a.s0".into(), "a.s1".into()]));
        assert!(CdmHint::parse("broadcast=x").is_err());
        assert!(CdmHint::parse("teleport=x:n0").is_err());
        assert!(CdmHint::parse("broadcast=x:").is_err());
    }

    #[test]
    fn broadcast_skips_targets_that_already_hold_a_copy() {
        let mut s = store_with("m", &[3u8; 100], 4);
        let origin = origin_node(&s, "m");
        let other = (0..4).map(NodeId).find(|n| *n != origin).unwrap();
        s.stage_to("m", other).unwrap();
        let hint = CdmHint {
            pattern: Pattern::Broadcast,
            subject: Subject::One("m".into()),
            targets: (0..4).map(NodeId).collect(),
        };
        let plan = plan_transfers(&hint, &s).unwrap();
        // 2 holders, 2 receivers → one round, both holders send
        assert_eq!(plan.total_copies(), 2);
        assert_eq!(plan.rounds(), 1);
    }
}
