//! Operation-nodes and access-nodes.
//!
//! An operation-node is a schedulable unit of work: a communication (send
//! or receive), a computation over one sub-view-block region, or an array
//! creation step. Each operation carries access-nodes recording which
//! element ranges of which blocks it reads or writes; the dependency
//! system orders operations solely through conflicts between those
//! access-nodes. Transfer staging buffers are tracked as scratch blocks so
//! that a computation consuming fetched data depends on the receive that
//! fills the buffer.

use std::sync::Arc;

use crate::layout::{ArrayId, DimSlice, Rank};
use crate::ufunc::UfuncSpec;
use crate::value::Scalar;

/// Unique identifier of an operation-node within one runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpId(pub u64);

impl std::fmt::Display for OpId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "op{}", self.0)
    }
}

/// Identifier of a transfer staging buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScratchId(pub u64);

impl std::fmt::Display for ScratchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Key of a dependency-list: either a base-block of a distributed array
/// or a scratch staging buffer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockKey {
    Base { array: ArrayId, coords: Vec<usize> },
    Scratch(ScratchId),
}

impl std::fmt::Display for BlockKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockKey::Base { array, coords } => {
                write!(f, "{array}[")?;
                for (i, c) in coords.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, "]")
            }
            BlockKey::Scratch(id) => write!(f, "{id}"),
        }
    }
}

/// Whether a memory access reads or writes its range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessMode {
    Read,
    Write,
}

impl std::fmt::Display for AccessMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AccessMode::Read => write!(f, "R"),
            AccessMode::Write => write!(f, "W"),
        }
    }
}

/// One read or write of an element range within one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Access {
    pub block: BlockKey,
    /// Selected elements in block-local coordinates, one slice per
    /// dimension.
    pub range: Vec<DimSlice>,
    pub mode: AccessMode,
}

impl Access {
    pub fn read(block: BlockKey, range: Vec<DimSlice>) -> Self {
        Access { block, range, mode: AccessMode::Read }
    }

    pub fn write(block: BlockKey, range: Vec<DimSlice>) -> Self {
        Access { block, range, mode: AccessMode::Write }
    }
}

/// Two accesses conflict iff they touch the same block, their element
/// ranges intersect, and at least one of them writes.
pub fn conflict(a: &Access, b: &Access) -> bool {
    if a.mode == AccessMode::Read && b.mode == AccessMode::Read {
        return false;
    }
    if a.block != b.block {
        return false;
    }
    ranges_intersect(&a.range, &b.range)
}

/// Do two multi-dimensional strided ranges share at least one element?
pub fn ranges_intersect(a: &[DimSlice], b: &[DimSlice]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).all(|(x, y)| dim_intersects(x, y))
}

/// 1-D strided interval intersection: does {start + i*step} meet
/// {start' + j*step'} within both extents? Solved with the usual gcd
/// argument on the difference of the offsets.
fn dim_intersects(a: &DimSlice, b: &DimSlice) -> bool {
    let (na, nb) = (a.extent(), b.extent());
    if na == 0 || nb == 0 {
        return false;
    }
    let a_last = a.start + (na - 1) * a.step;
    let b_last = b.start + (nb - 1) * b.step;
    let lo = a.start.max(b.start);
    let hi = a_last.min(b_last);
    if lo > hi {
        return false;
    }
    let g = gcd(a.step, b.step);
    if (a.start as i64 - b.start as i64).rem_euclid(g as i64) != 0 {
        return false;
    }
    // A common residue exists; find the smallest common element >= lo via
    // CRT and check it against hi.
    let l = a.step / g * b.step; // lcm
    let x = first_common(a, b);
    match x {
        Some(x0) => {
            // first_common returns the smallest common value overall; step
            // up to `lo` in lcm strides.
            let x = if x0 >= lo {
                x0
            } else {
                x0 + (lo - x0).div_ceil(l) * l
            };
            x <= hi
        }
        None => false,
    }
}

/// Smallest value contained in both arithmetic progressions, ignoring the
/// extent bounds (those are re-checked by the caller).
fn first_common(a: &DimSlice, b: &DimSlice) -> Option<usize> {
    // Solve a.start + i*a.step = b.start + j*b.step for the minimal
    // solution with i, j >= 0 using the extended Euclid algorithm.
    let (g, p, _q) = ext_gcd(a.step as i64, b.step as i64);
    let diff = b.start as i64 - a.start as i64;
    if diff % g != 0 {
        return None;
    }
    let l = (a.step as i64) / g * (b.step as i64);
    // i = p * diff / g (mod b.step/g), minimal non-negative.
    let m = (b.step as i64) / g;
    let mut i = (p * (diff / g)) % m;
    if i < 0 {
        i += m;
    }
    let mut x = a.start as i64 + i * a.step as i64;
    // x is the smallest common value >= a.start; lift above b.start too.
    if x < b.start as i64 {
        let delta = b.start as i64 - x;
        x += delta.div_euclid(l) * l;
        if x < b.start as i64 {
            x += l;
        }
    }
    Some(x as usize)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn ext_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    if b == 0 {
        (a, 1, 0)
    } else {
        let (g, x, y) = ext_gcd(b, a % b);
        (g, y, x - (a / b) * y)
    }
}

/// Kind of work an operation-node performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    /// Posts one message carrying a sub-view-block payload.
    Send,
    /// Consumes one message into a block range or staging buffer.
    Recv,
    /// Applies a kernel over one sub-view-block region, or performs an
    /// array creation step.
    Compute,
}

impl OpKind {
    pub fn is_comm(self) -> bool {
        matches!(self, OpKind::Send | OpKind::Recv)
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OpKind::Send => write!(f, "send"),
            OpKind::Recv => write!(f, "recv"),
            OpKind::Compute => write!(f, "compute"),
        }
    }
}

/// Identifies one transfer. Tags carry the block range being moved plus a
/// per-flush sequence number so repeated transfers of the same range stay
/// distinct; matching is on the whole tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag {
    pub array: ArrayId,
    pub block_coords: Vec<usize>,
    pub seq: u64,
}

impl std::fmt::Display for Tag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t{}", self.seq)
    }
}

/// Where a region's elements live on the executing rank.
#[derive(Debug, Clone, PartialEq)]
pub enum DataRef {
    /// Strided range of a base-block, in block-local coordinates.
    Block { array: ArrayId, coords: Vec<usize>, range: Vec<DimSlice> },
    /// Dense box within a scratch staging buffer.
    Scratch { id: ScratchId, offset: Vec<usize>, extent: Vec<usize> },
    /// Broadcast constant (inputs only).
    Const(Scalar),
}

impl DataRef {
    /// Access-node for this reference, if it touches tracked storage.
    pub fn access(&self, mode: AccessMode) -> Option<Access> {
        match self {
            DataRef::Block { array, coords, range } => Some(Access {
                block: BlockKey::Base { array: *array, coords: coords.clone() },
                range: range.clone(),
                mode,
            }),
            DataRef::Scratch { id, offset, extent } => Some(Access {
                block: BlockKey::Scratch(*id),
                range: offset
                    .iter()
                    .zip(extent)
                    .map(|(&o, &e)| DimSlice { start: o, stop: o + e, step: 1 })
                    .collect(),
                mode,
            }),
            DataRef::Const(_) => None,
        }
    }
}

/// Work description attached to an operation-node.
#[derive(Debug, Clone)]
pub enum OpPayload {
    /// Fill a freshly created base-block from the array's initial data.
    InitBlock { array: ArrayId, coords: Vec<usize> },
    /// Ensure storage exists for a base-block of an uninitialized array.
    AllocBlock { array: ArrayId, coords: Vec<usize> },
    /// Apply `kernel` elementwise over a region.
    Apply { kernel: Arc<UfuncSpec>, inputs: Vec<DataRef>, output: DataRef, elems: usize },
    Send { to: Rank, tag: Tag, src: DataRef, bytes: usize },
    Recv { from: Rank, tag: Tag, dst: DataRef },
    /// Structure-only operation used by scheduling tests.
    Noop,
}

/// Lifecycle of an operation-node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpState {
    /// Recorded; waiting on conflicting predecessors.
    Pending,
    /// Reference counter reached zero; sitting in the ready queue.
    Ready,
    /// Communication initiated (in flight) or computation running.
    Executing,
    /// Retired; access-nodes removed from their dependency-lists.
    Done,
}

/// A schedulable communication or computation task.
#[derive(Debug, Clone)]
pub struct OperationNode {
    pub id: OpId,
    pub kind: OpKind,
    /// Rank that executes this operation.
    pub rank: Rank,
    pub accesses: Vec<Access>,
    pub payload: OpPayload,
    /// Number of unresolved conflicting predecessor access-nodes.
    pub counter: usize,
    pub state: OpState,
}

impl OperationNode {
    pub fn new(id: OpId, kind: OpKind, rank: Rank, accesses: Vec<Access>, payload: OpPayload) -> Self {
        OperationNode { id, kind, rank, accesses, payload, counter: 0, state: OpState::Pending }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::ArrayId;

    fn key() -> BlockKey {
        BlockKey::Base { array: ArrayId(0), coords: vec![0] }
    }

    fn rd(start: usize, stop: usize) -> Access {
        Access::read(key(), vec![DimSlice::new(start, stop, 1)])
    }

    fn wr(start: usize, stop: usize) -> Access {
        Access::write(key(), vec![DimSlice::new(start, stop, 1)])
    }

    #[test]
    fn read_read_never_conflicts() {
        assert!(!conflict(&rd(0, 3), &rd(0, 3)));
    }

    #[test]
    fn overlapping_write_read_conflicts() {
        assert!(conflict(&wr(0, 3), &rd(2, 3)));
        assert!(conflict(&rd(2, 3), &wr(0, 3)));
    }

    #[test]
    fn disjoint_ranges_do_not_conflict() {
        assert!(!conflict(&wr(0, 1), &rd(2, 3)));
    }

    #[test]
    fn different_blocks_do_not_conflict() {
        let other = Access::write(
            BlockKey::Base { array: ArrayId(0), coords: vec![1] },
            vec![DimSlice::new(0, 3, 1)],
        );
        assert!(!conflict(&wr(0, 3), &other));
    }

    #[test]
    fn scratch_and_base_are_distinct_keys() {
        let s = Access::write(BlockKey::Scratch(ScratchId(0)), vec![DimSlice::new(0, 3, 1)]);
        assert!(!conflict(&wr(0, 3), &s));
    }

    #[test]
    fn strided_intersection_cases() {
        let a = DimSlice::new(0, 10, 2); // 0,2,4,6,8
        let b = DimSlice::new(1, 10, 2); // 1,3,5,7,9
        assert!(!dim_intersects(&a, &b));
        let c = DimSlice::new(4, 5, 1); // 4
        assert!(dim_intersects(&a, &c));
        let d = DimSlice::new(3, 13, 3); // 3,6,9,12
        assert!(dim_intersects(&a, &d)); // shares 6
        let e = DimSlice::new(0, 0, 1); // empty
        assert!(!dim_intersects(&a, &e));
    }

    #[test]
    fn strided_intersection_matches_enumeration() {
        // Brute-force oracle over a small parameter grid.
        let mut cases = 0;
        for s1 in 0..6usize {
            for t1 in 1..4usize {
                for n1 in 0..5usize {
                    for s2 in 0..6usize {
                        for t2 in 1..4usize {
                            for n2 in 0..5usize {
                                let a = DimSlice { start: s1, stop: if n1 == 0 { s1 } else { s1 + (n1 - 1) * t1 + 1 }, step: t1 };
                                let b = DimSlice { start: s2, stop: if n2 == 0 { s2 } else { s2 + (n2 - 1) * t2 + 1 }, step: t2 };
                                let set_a: Vec<usize> = (0..n1).map(|i| s1 + i * t1).collect();
                                let brute = (0..n2).map(|j| s2 + j * t2).any(|x| set_a.contains(&x));
                                assert_eq!(dim_intersects(&a, &b), brute, "a={a:?} b={b:?}");
                                cases += 1;
                            }
                        }
                    }
                }
            }
        }
        assert!(cases > 0);
    }

    #[test]
    fn multidim_intersection_requires_all_dims() {
        let a = vec![DimSlice::new(0, 2, 1), DimSlice::new(0, 2, 1)];
        let b = vec![DimSlice::new(1, 3, 1), DimSlice::new(4, 6, 1)];
        assert!(!ranges_intersect(&a, &b));
        let c = vec![DimSlice::new(1, 3, 1), DimSlice::new(1, 3, 1)];
        assert!(ranges_intersect(&a, &c));
    }
}
