//! Per-block dependency lists and the ready queue.
//!
//! Instead of a global dependency graph, every block keeps an
//! insertion-ordered list of the live access-nodes touching it. Recording
//! an operation appends its access-nodes to the lists they target and
//! counts, once per conflicting predecessor access-node, how many
//! unresolved conflicts precede it; that count is the operation's
//! reference counter. Operations whose counter is zero sit in the ready
//! queue, split into a communication and a computation sub-queue so the
//! flush engine can give communication priority.
//!
//! Retiring an executed operation removes its access-nodes and walks each
//! list once, decrementing the counter of every later operation that
//! conflicted with a removed node. The cost of an insertion is therefore
//! bounded by the number of live access-nodes on the blocks the operation
//! touches, not by the total number of recorded operations.
//!
//! Every rank can rebuild this structure independently from the recorded
//! program; no dependency information ever crosses rank boundaries.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::layout::Rank;
use crate::node::{conflict, Access, BlockKey, OpId, OpKind, OpState, OperationNode};

/// Index of an access-node within its owning operation.
type AccessIdx = usize;

/// Entry in a per-block dependency-list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ListEntry {
    op: OpId,
    access: AccessIdx,
    /// Global insertion order, used to scan only earlier entries.
    seq: u64,
}

/// FIFO of ready operations, partitioned by kind and keyed by executing
/// rank so each simulated process drains its own work in order.
#[derive(Debug, Default)]
pub struct ReadyQueue {
    comm: BTreeMap<Rank, VecDeque<OpId>>,
    comp: BTreeMap<Rank, VecDeque<OpId>>,
}

impl ReadyQueue {
    fn push(&mut self, kind: OpKind, rank: Rank, op: OpId) {
        let side = if kind.is_comm() { &mut self.comm } else { &mut self.comp };
        side.entry(rank).or_default().push_back(op);
    }

    fn pop(&mut self, comm: bool, rank: Rank) -> Option<OpId> {
        let side = if comm { &mut self.comm } else { &mut self.comp };
        side.get_mut(&rank).and_then(|q| q.pop_front())
    }

    fn remove(&mut self, kind: OpKind, rank: Rank, op: OpId) {
        let side = if kind.is_comm() { &mut self.comm } else { &mut self.comp };
        if let Some(q) = side.get_mut(&rank) {
            q.retain(|&o| o != op);
        }
    }

    pub fn comm_is_empty(&self, rank: Rank) -> bool {
        self.comm.get(&rank).map_or(true, |q| q.is_empty())
    }

    pub fn comp_is_empty(&self, rank: Rank) -> bool {
        self.comp.get(&rank).map_or(true, |q| q.is_empty())
    }

    fn iter_all(&self) -> impl Iterator<Item = OpId> + '_ {
        self.comm
            .values()
            .flatten()
            .chain(self.comp.values().flatten())
            .copied()
    }
}

/// The dependency system: operation store, per-block dependency-lists,
/// and the ready queue.
#[derive(Debug, Default)]
pub struct DependencySystem {
    ops: HashMap<OpId, OperationNode>,
    lists: BTreeMap<BlockKey, Vec<ListEntry>>,
    ready: ReadyQueue,
    next_seq: u64,
    /// Cumulative pairwise access-node conflict tests since the last reset.
    comparisons: u64,
    /// Conflicting (predecessor, successor) operation pairs discovered at
    /// insertion, for equivalence checks against the full-graph baseline.
    pair_log: Vec<(OpId, OpId)>,
}

impl DependencySystem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of operations not yet retired.
    pub fn live_ops(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn get(&self, id: OpId) -> &OperationNode {
        &self.ops[&id]
    }

    pub fn get_mut(&mut self, id: OpId) -> &mut OperationNode {
        self.ops.get_mut(&id).expect("unknown operation")
    }

    pub fn contains(&self, id: OpId) -> bool {
        self.ops.contains_key(&id)
    }

    /// Register a recorded operation: append its access-nodes to their
    /// dependency-lists, count conflicting predecessor access-nodes into
    /// the reference counter, and enqueue the operation if the counter is
    /// zero.
    pub fn insert(&mut self, mut op: OperationNode) {
        assert!(
            !self.ops.contains_key(&op.id),
            "operation {} inserted twice",
            op.id
        );
        let mut counter = 0usize;
        // One counter contribution per predecessor access-node that
        // conflicts with at least one of the new operation's accesses,
        // regardless of how many of them it hits.
        for (block, group) in group_by_block(&op.accesses) {
            let list = self.lists.entry(block.clone()).or_default();
            for entry in list.iter() {
                if entry.op == op.id {
                    continue;
                }
                let pred = &self.ops[&entry.op];
                let pred_access = &pred.accesses[entry.access];
                let mut hit = false;
                for &idx in &group {
                    self.comparisons += 1;
                    if conflict(pred_access, &op.accesses[idx]) {
                        hit = true;
                        break;
                    }
                }
                if hit {
                    counter += 1;
                    self.pair_log.push((entry.op, op.id));
                }
            }
            for &idx in &group {
                list.push(ListEntry { op: op.id, access: idx, seq: self.next_seq });
                self.next_seq += 1;
            }
        }
        op.counter = counter;
        if counter == 0 {
            op.state = OpState::Ready;
            self.ready.push(op.kind, op.rank, op.id);
        }
        self.ops.insert(op.id, op);
    }

    /// Remove a finished operation: drop its access-nodes from their
    /// lists and decrement, once per removed access-node, the counter of
    /// every later operation that conflicted with it. Returns (and
    /// enqueues) the operations whose counters reached zero.
    pub fn retire(&mut self, id: OpId) -> Vec<OpId> {
        let op = self.ops.remove(&id).expect("retiring unknown operation");
        assert_eq!(op.counter, 0, "retiring {} with counter {}", id, op.counter);
        let mut newly_ready = Vec::new();
        for (block, group) in group_by_block(&op.accesses) {
            let list = self.lists.get_mut(&block).expect("list missing for retired access");
            for &idx in &group {
                let removed = &op.accesses[idx];
                let pos = list
                    .iter()
                    .position(|e| e.op == id && e.access == idx)
                    .expect("access-node missing from its dependency-list");
                let entry = list.remove(pos);
                // Decrement each later operation at most once per removed
                // access-node, mirroring the insertion count.
                let mut seen: Vec<OpId> = Vec::new();
                for later in list.iter().filter(|e| e.seq > entry.seq) {
                    if later.op == id || seen.contains(&later.op) {
                        continue;
                    }
                    let succ = &self.ops[&later.op];
                    self.comparisons += 1;
                    if conflict(removed, &succ.accesses[later.access]) {
                        seen.push(later.op);
                    }
                }
                for succ_id in seen {
                    let succ = self.ops.get_mut(&succ_id).expect("successor vanished");
                    assert!(succ.counter > 0, "counter underflow on {succ_id}");
                    succ.counter -= 1;
                    if succ.counter == 0 {
                        succ.state = OpState::Ready;
                        self.ready.push(succ.kind, succ.rank, succ_id);
                        newly_ready.push(succ_id);
                    }
                }
            }
            if list.is_empty() {
                self.lists.remove(&block);
            }
        }
        newly_ready
    }

    /// Current ready operations of the requested kind, in queue order,
    /// without removing them.
    pub fn ready_ops(&self, comm: bool) -> Vec<OpId> {
        let side = if comm { &self.ready.comm } else { &self.ready.comp };
        side.values().flatten().copied().collect()
    }

    pub fn ready_queue(&self) -> &ReadyQueue {
        &self.ready
    }

    /// Dequeue the next ready communication operation of `rank`.
    pub fn pop_ready_comm(&mut self, rank: Rank) -> Option<OpId> {
        let id = self.ready.pop(true, rank)?;
        self.get_mut(id).state = OpState::Executing;
        Some(id)
    }

    /// Dequeue the next ready computation operation of `rank`.
    pub fn pop_ready_comp(&mut self, rank: Rank) -> Option<OpId> {
        let id = self.ready.pop(false, rank)?;
        self.get_mut(id).state = OpState::Executing;
        Some(id)
    }

    /// Dequeue a specific ready operation (baseline executors process ops
    /// in their own order).
    pub fn take_ready(&mut self, id: OpId) {
        let (kind, rank, state) = {
            let op = self.get(id);
            (op.kind, op.rank, op.state)
        };
        assert_eq!(state, OpState::Ready, "{id} is not ready");
        self.ready.remove(kind, rank, id);
        self.get_mut(id).state = OpState::Executing;
    }

    /// Cumulative number of pairwise access-node conflict tests performed
    /// since construction or the last [`reset_comparisons`].
    ///
    /// [`reset_comparisons`]: DependencySystem::reset_comparisons
    pub fn comparison_count(&self) -> u64 {
        self.comparisons
    }

    pub fn reset_comparisons(&mut self) {
        self.comparisons = 0;
    }

    /// Conflicting operation pairs discovered so far, deduplicated.
    pub fn conflicting_pairs(&self) -> Vec<(OpId, OpId)> {
        let mut pairs = self.pair_log.clone();
        pairs.sort();
        pairs.dedup();
        pairs
    }

    pub fn clear_pair_log(&mut self) {
        self.pair_log.clear();
    }

    /// Every live counter-zero operation that has not started executing
    /// must sit in the ready queue; violations indicate a bookkeeping bug.
    pub fn check_ready_completeness(&self) -> Result<(), String> {
        let queued: Vec<OpId> = self.ready.iter_all().collect();
        for (id, op) in &self.ops {
            let should_be_queued = op.counter == 0 && op.state == OpState::Ready;
            let is_queued = queued.contains(id);
            if op.counter == 0 && op.state == OpState::Pending {
                return Err(format!("{id} has counter 0 but was never enqueued"));
            }
            if should_be_queued && !is_queued {
                return Err(format!("{id} is ready but missing from the ready queue"));
            }
            if is_queued && !should_be_queued {
                return Err(format!("{id} is queued but not in the ready state"));
            }
        }
        Ok(())
    }

    /// Textual listing of the dependency-lists, one block per line:
    /// block key followed by the live access-nodes in list order.
    pub fn dump_lists(&self) -> String {
        let mut out = String::new();
        for (block, list) in &self.lists {
            out.push_str(&format!("{block}:"));
            for entry in list {
                let op = &self.ops[&entry.op];
                let access = &op.accesses[entry.access];
                let range: Vec<String> = access
                    .range
                    .iter()
                    .map(|s| format!("{}:{}:{}", s.start, s.stop, s.step))
                    .collect();
                out.push_str(&format!(" [{} {} {}]", entry.op, access.mode, range.join(",")));
            }
            out.push('\n');
        }
        out
    }
}

/// Group an operation's access indices by target block, preserving access
/// order within each group.
fn group_by_block(accesses: &[Access]) -> Vec<(BlockKey, Vec<AccessIdx>)> {
    let mut groups: Vec<(BlockKey, Vec<AccessIdx>)> = Vec::new();
    for (idx, a) in accesses.iter().enumerate() {
        match groups.iter_mut().find(|(k, _)| *k == a.block) {
            Some((_, v)) => v.push(idx),
            None => groups.push((a.block.clone(), vec![idx])),
        }
    }
    groups
}
