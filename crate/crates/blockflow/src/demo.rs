//! Deadlock demonstration program.
//!
//! Two ranks, two logical iterations. Each rank computes its own block in
//! iteration one and posts a receive for the neighbor's block, but the
//! matching send is only recorded in iteration two. A
//! generation-by-generation evaluator blocks on the whole first
//! generation's transfers before initiating anything from the second, so
//! both ranks wait on receives whose sends are never posted. The
//! prioritized flush initiates the receives without blocking, keeps
//! computing, initiates the sends as soon as they become ready, and
//! completes.

use std::sync::Arc;

use crate::error::Result;
use crate::flush::BspOutcome;
use crate::node::{
    AccessMode, DataRef, OpId, OpKind, OpPayload, OperationNode, ScratchId, Tag,
};
use crate::runtime::{FlushMode, Runtime, RuntimeConfig};
use crate::store::ScratchInfo;
use crate::transport::LatencyModel;
use crate::ufunc::UfuncSpec;
use crate::value::{Dtype, Scalar};

/// Record the two-iteration exchange pattern into a fresh two-rank
/// runtime. Returns the view of the exchanged array.
pub fn record_deadlock_pattern(rt: &mut Runtime) -> Result<crate::layout::ArrayView> {
    assert_eq!(rt.nprocs(), 2, "the demo pattern is two ranks by construction");
    let x = rt.empty(&[2], &[1], Dtype::I64)?;
    let array = x.base.id;
    let identity = Arc::new(UfuncSpec::identity());

    let full = vec![crate::layout::DimSlice::new(0, 1, 1)];
    let mut ops = Vec::new();
    let mut scratches = Vec::new();
    let op_id = |rt: &mut Runtime| {
        let id = OpId(rt.next_op);
        rt.next_op += 1;
        id
    };

    // Iteration one: each rank fills its block and posts a receive for
    // the neighbor's block.
    let mut recv_tags = Vec::new();
    for rank in 0..2usize {
        let block = DataRef::Block { array, coords: vec![rank], range: full.clone() };
        ops.push(OperationNode::new(
            op_id(rt),
            OpKind::Compute,
            rank,
            vec![block.access(AccessMode::Write).unwrap()],
            OpPayload::Apply {
                kernel: Arc::clone(&identity),
                inputs: vec![DataRef::Const(Scalar::I64(rank as i64 + 1))],
                output: block,
                elems: 1,
            },
        ));
    }
    for rank in 0..2usize {
        let neighbor = 1 - rank;
        let scratch = ScratchId(rt.next_scratch);
        rt.next_scratch += 1;
        scratches.push((scratch, ScratchInfo { owner: rank, dtype: Dtype::I64, extent: vec![1] }));
        let tag = Tag { array, block_coords: vec![neighbor], seq: rt.next_tag };
        rt.next_tag += 1;
        recv_tags.push(tag.clone());
        let dst = DataRef::Scratch { id: scratch, offset: vec![0], extent: vec![1] };
        ops.push(OperationNode::new(
            op_id(rt),
            OpKind::Recv,
            rank,
            vec![dst.access(AccessMode::Write).unwrap()],
            OpPayload::Recv { from: neighbor, tag, dst },
        ));
    }

    // Iteration two: the sends that match iteration one's receives, then
    // a computation consuming the fetched value.
    for rank in 0..2usize {
        let neighbor = 1 - rank;
        let src = DataRef::Block { array, coords: vec![rank], range: full.clone() };
        // The tag the NEIGHBOR's receive is waiting on names this rank's
        // block.
        let tag = recv_tags[neighbor].clone();
        ops.push(OperationNode::new(
            op_id(rt),
            OpKind::Send,
            rank,
            vec![src.access(AccessMode::Read).unwrap()],
            OpPayload::Send { to: neighbor, tag, src, bytes: 8 },
        ));
    }
    for (rank, (scratch, _)) in scratches.iter().enumerate() {
        let block = DataRef::Block { array, coords: vec![rank], range: full.clone() };
        let fetched = DataRef::Scratch { id: *scratch, offset: vec![0], extent: vec![1] };
        ops.push(OperationNode::new(
            op_id(rt),
            OpKind::Compute,
            rank,
            vec![
                fetched.access(AccessMode::Read).unwrap(),
                block.access(AccessMode::Write).unwrap(),
            ],
            OpPayload::Apply {
                kernel: Arc::clone(&identity),
                inputs: vec![fetched],
                output: block,
                elems: 1,
            },
        ));
    }

    for (id, info) in scratches {
        rt.stores.register_scratch(id, info);
    }
    for node in ops {
        rt.program.push(node.id);
        rt.deps.insert(node);
    }
    Ok(x)
}

/// Outcome of running the pattern under both evaluators.
#[derive(Debug)]
pub struct DeadlockDemo {
    pub naive: BspOutcome,
    pub latency_hiding: Result<Vec<i64>>,
}

/// Run the pattern under the naive generation evaluator (expected to
/// report a deadlock) and under the latency-hiding flush (expected to
/// complete, each block holding the neighbor's value).
pub fn run_deadlock_demo(model: LatencyModel) -> Result<DeadlockDemo> {
    let mut cfg = RuntimeConfig::new(2, FlushMode::LatencyHiding);
    cfg.model = model;
    let mut naive_rt = Runtime::new(cfg.clone())?;
    record_deadlock_pattern(&mut naive_rt)?;
    let naive = naive_rt.naive_bsp_flush()?;

    let mut lh_rt = Runtime::new(cfg)?;
    let view = record_deadlock_pattern(&mut lh_rt)?;
    let latency_hiding = lh_rt
        .flush()
        .and_then(|()| Ok(lh_rt.read_elements(&view)?.iter().map(Scalar::as_i64).collect()));
    Ok(DeadlockDemo { naive, latency_hiding })
}
