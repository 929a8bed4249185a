//! Node allocation for multi-node tasks.

use crate::dataflow::TaskId;
use crate::datastore::NodeId;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AllocError {
    /// Not enough nodes free right now. Not a failure — the task stays
    /// queued until a release frees capacity.
    #[error("allocation unavailable: {free} free of {width} requested")]
    Unavailable { width: u32, free: u32 },
    /// The pool can never satisfy this request.
    #[error("task width {width} exceeds pool size {pool}")]
    Config { width: u32, pool: u32 },
}

/// A fixed set of single-slot worker nodes. A width-w task holds w nodes
/// from start to completion; allocation is all-or-nothing.
#[derive(Debug, Clone)]
pub struct WorkerPool {
    free: BTreeSet<NodeId>,
    busy: BTreeMap<NodeId, TaskId>,
}

impl WorkerPool {
    pub fn new(nodes: u32) -> Self {
        WorkerPool {
            free: (0..nodes).map(NodeId).collect(),
            busy: BTreeMap::new(),
        }
    }

    pub fn live_count(&self) -> u32 {
        (self.free.len() + self.busy.len()) as u32
    }

    pub fn free_count(&self) -> u32 {
        self.free.len() as u32
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.free
            .iter()
            .copied()
            .chain(self.busy.keys().copied())
    }

    pub fn holder(&self, node: NodeId) -> Option<TaskId> {
        self.busy.get(&node).copied()
    }

    /// Reserve `width` nodes for `task`, atomically: either all `width`
    /// are granted (lowest-numbered free nodes first, so placement is
    /// deterministic) or the pool is left untouched.
    pub fn allocate(&mut self, task: TaskId, width: u32) -> Result<Vec<NodeId>, AllocError> {
        if width > self.live_count() {
            return Err(AllocError::Config {
                width,
                pool: self.live_count(),
            });
        }
        if width as usize > self.free.len() {
            return Err(AllocError::Unavailable {
                width,
                free: self.free.len() as u32,
            });
        }
        let nodes: Vec<NodeId> = self.free.iter().copied().take(width as usize).collect();
        for n in &nodes {
            self.free.remove(n);
            self.busy.insert(*n, task);
        }
        Ok(nodes)
    }

    /// Free every node `task` holds. Returns them in id order.
    pub fn release(&mut self, task: TaskId) -> Vec<NodeId> {
        let nodes: Vec<NodeId> = self
            .busy
            .iter()
            .filter(|(_, t)| **t == task)
            .map(|(n, _)| *n)
            .collect();
        for n in &nodes {
            self.busy.remove(n);
            self.free.insert(*n);
        }
        nodes
    }

    /// Remove a node from the pool for good. Returns the task that was
    /// running on it, if any; the caller decides that task's fate.
    pub fn fail_node(&mut self, node: NodeId) -> Option<TaskId> {
        self.free.remove(&node);
        self.busy.remove(&node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_is_atomic() {
        let mut pool = WorkerPool::new(4);
        pool.allocate(TaskId(0), 3).unwrap();
        let err = pool.allocate(TaskId(1), 2).unwrap_err();
        assert_eq!(err, AllocError::Unavailable { width: 2, free: 1 });
        // the failed request must not have leaked a reservation
        assert_eq!(pool.free_count(), 1);
        pool.allocate(TaskId(2), 1).unwrap();
    }

    #[test]
    fn oversize_width_is_a_config_error() {
        let mut pool = WorkerPool::new(4);
        assert_eq!(
            pool.allocate(TaskId(0), 5).unwrap_err(),
            AllocError::Config { width: 5, pool: 4 }
        );
    }

    #[test]
    fn lowest_free_nodes_are_taken_first() {
        let mut pool = WorkerPool::new(4);
        assert_eq!(pool.allocate(TaskId(0), 2).unwrap(), vec![NodeId(0), NodeId(1)]);
        assert_eq!(pool.allocate(TaskId(1), 1).unwrap(), vec![NodeId(2)]);
        pool.release(TaskId(0));
        assert_eq!(pool.allocate(TaskId(2), 1).unwrap(), vec![NodeId(0)]);
    }

    #[test]
    fn release_returns_everything_held() {
        let mut pool = WorkerPool::new(4);
        pool.allocate(TaskId(7), 3).unwrap();
        assert_eq!(
            pool.release(TaskId(7)),
            vec![NodeId(0), NodeId(1), NodeId(2)]
        );
        assert_eq!(pool.free_count(), 4);
        assert!(pool.release(TaskId(7)).is_empty());
    }

    #[test]
    fn failed_node_shrinks_the_pool_and_names_its_victim() {
        let mut pool = WorkerPool::new(3);
        pool.allocate(TaskId(1), 2).unwrap();
        assert_eq!(pool.fail_node(NodeId(0)), Some(TaskId(1)));
        assert_eq!(pool.live_count(), 2);
        assert_eq!(pool.fail_node(NodeId(2)), None);
        assert_eq!(pool.live_count(), 1);
        // a width-2 task is now unsatisfiable
        assert_eq!(
            pool.allocate(TaskId(2), 2).unwrap_err(),
            AllocError::Config { width: 2, pool: 1 }
        );
    }
}
