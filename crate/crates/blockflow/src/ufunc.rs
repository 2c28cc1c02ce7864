//! Universal functions and the expansion of recorded array operations
//! into operation-nodes.
//!
//! A ufunc applies a scalar kernel independently to every element of its
//! operand views, so applying it to a whole view is equivalent to applying
//! it to each view-block separately. Recording one ufunc walks the output
//! view's view-blocks and, per view-block:
//!
//! 1. assigns an executing rank — the owner of the base-block under the
//!    view-block's first element;
//! 2. emits a send/receive pair for every input sub-view-block that is
//!    not already on the executing rank (the receive fills a scratch
//!    staging buffer there);
//! 3. emits one computation node per sub-view-block region — the
//!    refinement of the view-block by every operand's sub-view-block
//!    boundaries, so each computation touches exactly one block or
//!    staging buffer per operand;
//! 4. emits a write-back send/receive pair for every output
//!    sub-view-block the executing rank does not own (computations for
//!    those regions write a staging buffer that is shipped home).
//!
//! Aligned operands produce no communication at all: every view-block is
//! one whole local base-block and step 3 degenerates to one local
//! computation per block. Nothing is executed here; every node is
//! registered with the dependency system and executed at the next flush.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::layout::{decompose, decompose_as, ArrayView, DimSlice, Rank, SubViewBlock, ViewBlock};
use crate::node::{
    Access, AccessMode, DataRef, OpId, OpKind, OpPayload, OperationNode, ScratchId, Tag,
};
use crate::store::ScratchInfo;
use crate::value::{Dtype, Scalar};

/// A vectorized wrapper for a scalar function: `arity` scalar inputs, one
/// scalar output, applied independently per element.
#[derive(Clone)]
pub struct UfuncSpec {
    pub name: &'static str,
    pub arity: usize,
    pub kernel: fn(&[Scalar]) -> Scalar,
}

impl std::fmt::Debug for UfuncSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UfuncSpec")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .finish()
    }
}

impl UfuncSpec {
    pub fn add() -> Self {
        UfuncSpec {
            name: "add",
            arity: 2,
            kernel: |v| match (v[0], v[1]) {
                (Scalar::I64(a), Scalar::I64(b)) => Scalar::I64(a.wrapping_add(b)),
                (Scalar::F64(a), Scalar::F64(b)) => Scalar::F64(a + b),
                _ => panic!("mixed dtypes reached a kernel"),
            },
        }
    }

    pub fn sub() -> Self {
        UfuncSpec {
            name: "sub",
            arity: 2,
            kernel: |v| match (v[0], v[1]) {
                (Scalar::I64(a), Scalar::I64(b)) => Scalar::I64(a.wrapping_sub(b)),
                (Scalar::F64(a), Scalar::F64(b)) => Scalar::F64(a - b),
                _ => panic!("mixed dtypes reached a kernel"),
            },
        }
    }

    pub fn mul() -> Self {
        UfuncSpec {
            name: "mul",
            arity: 2,
            kernel: |v| match (v[0], v[1]) {
                (Scalar::I64(a), Scalar::I64(b)) => Scalar::I64(a.wrapping_mul(b)),
                (Scalar::F64(a), Scalar::F64(b)) => Scalar::F64(a * b),
                _ => panic!("mixed dtypes reached a kernel"),
            },
        }
    }

    pub fn abs() -> Self {
        UfuncSpec {
            name: "abs",
            arity: 1,
            kernel: |v| match v[0] {
                Scalar::I64(a) => Scalar::I64(a.wrapping_abs()),
                Scalar::F64(a) => Scalar::F64(a.abs()),
            },
        }
    }

    /// Assignment: copies its single input.
    pub fn identity() -> Self {
        UfuncSpec { name: "identity", arity: 1, kernel: |v| v[0] }
    }
}

/// Input operand of a recorded ufunc: a view or a broadcast constant.
#[derive(Debug, Clone)]
pub enum Operand {
    View(ArrayView),
    Scalar(Scalar),
}

impl From<ArrayView> for Operand {
    fn from(v: ArrayView) -> Self {
        Operand::View(v)
    }
}

impl From<Scalar> for Operand {
    fn from(v: Scalar) -> Self {
        Operand::Scalar(v)
    }
}

/// Allocators threaded through an expansion: fresh operation ids, scratch
/// ids, and transfer sequence numbers.
pub struct ExpandCx<'a> {
    pub next_op: &'a mut u64,
    pub next_scratch: &'a mut u64,
    pub next_tag_seq: &'a mut u64,
    /// Scratch buffers created by this expansion (registered by the
    /// caller).
    pub scratches: Vec<(ScratchId, ScratchInfo)>,
}

impl<'a> ExpandCx<'a> {
    pub fn new(next_op: &'a mut u64, next_scratch: &'a mut u64, next_tag_seq: &'a mut u64) -> Self {
        ExpandCx { next_op, next_scratch, next_tag_seq, scratches: Vec::new() }
    }

    fn op_id(&mut self) -> OpId {
        let id = OpId(*self.next_op);
        *self.next_op += 1;
        id
    }

    fn scratch(&mut self, owner: Rank, dtype: Dtype, extent: Vec<usize>) -> ScratchId {
        let id = ScratchId(*self.next_scratch);
        *self.next_scratch += 1;
        self.scratches.push((id, ScratchInfo { owner, dtype, extent }));
        id
    }

    fn tag_seq(&mut self) -> u64 {
        let seq = *self.next_tag_seq;
        *self.next_tag_seq += 1;
        seq
    }
}

/// Validate operand shapes and dtypes and the aliasing rule, then expand
/// the recorded ufunc into operation-nodes.
pub fn expand_ufunc(
    cx: &mut ExpandCx,
    spec: Arc<UfuncSpec>,
    out: &ArrayView,
    ins: &[Operand],
) -> Result<Vec<OperationNode>> {
    if ins.len() != spec.arity {
        return Err(Error::invalid(format!(
            "{} takes {} inputs, got {}",
            spec.name,
            spec.arity,
            ins.len()
        )));
    }
    let out_extent = out.extent();
    for (i, op) in ins.iter().enumerate() {
        match op {
            Operand::View(v) => {
                if v.extent() != out_extent {
                    return Err(Error::ShapeMismatch(format!(
                        "input {i} has extent {:?}, output has {:?}",
                        v.extent(),
                        out_extent
                    )));
                }
                if v.base.dtype != out.base.dtype {
                    return Err(Error::invalid(format!(
                        "input {i} is {}, output is {} (promotion unsupported)",
                        v.base.dtype, out.base.dtype
                    )));
                }
                if v.base.nprocs != out.base.nprocs {
                    return Err(Error::invalid(
                        "operands live on differently sized rank sets",
                    ));
                }
            }
            Operand::Scalar(s) => {
                if s.dtype() != out.base.dtype {
                    return Err(Error::invalid(format!(
                        "scalar operand is {}, output is {}",
                        s.dtype(),
                        out.base.dtype
                    )));
                }
            }
        }
    }
    check_aliasing(out, ins)?;

    if out.num_elements() == 0 {
        return Ok(Vec::new());
    }

    let out_vbs = decompose(out);
    // Inputs share the output's view-block grid even when their bases use
    // different block sizes.
    let in_vbs: Vec<Option<Vec<ViewBlock>>> = ins
        .iter()
        .map(|op| match op {
            Operand::View(v) => Some(decompose_as(v, &out.base.block_size)),
            Operand::Scalar(_) => None,
        })
        .collect();

    let dtype = out.base.dtype;
    let mut nodes = Vec::new();
    for (vb_idx, out_vb) in out_vbs.iter().enumerate() {
        // Executing rank: owner of the base-block under the view-block's
        // first element (row-major), computable by every rank alike.
        let first_block: Vec<usize> = out_vb
            .origin
            .iter()
            .enumerate()
            .map(|(d, &o)| out.base_coord(d, o) / out.base.block_size[d])
            .collect();
        let exec = out.base.owner_of(&first_block)?;

        // Step 2: fetch every non-local input sub-view-block into a
        // scratch buffer on the executing rank.
        // fetched[i][sub_idx] = scratch id for that input sub-view-block.
        let mut fetched: Vec<Vec<Option<ScratchId>>> = Vec::with_capacity(ins.len());
        for (i, op) in ins.iter().enumerate() {
            let mut per_sub = Vec::new();
            if let Operand::View(v) = op {
                let vb = &in_vbs[i].as_ref().unwrap()[vb_idx];
                for sub in &vb.subs {
                    if sub.owner == exec {
                        per_sub.push(None);
                        continue;
                    }
                    let scratch = cx.scratch(exec, dtype, sub.extent.clone());
                    let seq = cx.tag_seq();
                    let tag = Tag {
                        array: v.base.id,
                        block_coords: sub.block_coords.clone(),
                        seq,
                    };
                    let bytes = sub.num_elements() * dtype.width();
                    let src_ref = DataRef::Block {
                        array: v.base.id,
                        coords: sub.block_coords.clone(),
                        range: sub.local.clone(),
                    };
                    nodes.push(OperationNode::new(
                        cx.op_id(),
                        OpKind::Send,
                        sub.owner,
                        vec![src_ref.access(AccessMode::Read).unwrap()],
                        OpPayload::Send { to: exec, tag: tag.clone(), src: src_ref, bytes },
                    ));
                    let dst_ref = DataRef::Scratch {
                        id: scratch,
                        offset: vec![0; sub.extent.len()],
                        extent: sub.extent.clone(),
                    };
                    nodes.push(OperationNode::new(
                        cx.op_id(),
                        OpKind::Recv,
                        exec,
                        vec![dst_ref.access(AccessMode::Write).unwrap()],
                        OpPayload::Recv { from: sub.owner, tag, dst: dst_ref },
                    ));
                    per_sub.push(Some(scratch));
                }
            }
            fetched.push(per_sub);
        }

        // Step 4 staging: output sub-view-blocks not owned by the
        // executing rank get a write-back scratch buffer.
        let wb_scratch: Vec<Option<ScratchId>> = out_vb
            .subs
            .iter()
            .map(|sub| {
                if sub.owner == exec {
                    None
                } else {
                    Some(cx.scratch(exec, dtype, sub.extent.clone()))
                }
            })
            .collect();

        // Step 3: one computation per sub-view-block region.
        for region in refine_regions(out_vb, ins, &in_vbs, vb_idx) {
            let (out_sub_idx, out_sub) = containing_sub(out_vb, &region)
                .expect("region must lie inside one output sub-view-block");
            let output = match wb_scratch[out_sub_idx] {
                None => block_ref(out, out_sub, &region),
                Some(id) => scratch_ref(id, out_sub, &region),
            };
            let mut inputs = Vec::with_capacity(ins.len());
            for (i, op) in ins.iter().enumerate() {
                match op {
                    Operand::Scalar(s) => inputs.push(DataRef::Const(*s)),
                    Operand::View(v) => {
                        let vb = &in_vbs[i].as_ref().unwrap()[vb_idx];
                        let (sub_idx, sub) = containing_sub(vb, &region)
                            .expect("region must lie inside one input sub-view-block");
                        inputs.push(match fetched[i][sub_idx] {
                            None => block_ref(v, sub, &region),
                            Some(id) => scratch_ref(id, sub, &region),
                        });
                    }
                }
            }
            let elems: usize = region.iter().map(|r| r.extent()).product();
            let mut accesses: Vec<Access> =
                inputs.iter().filter_map(|d| d.access(AccessMode::Read)).collect();
            accesses.push(output.access(AccessMode::Write).unwrap());
            nodes.push(OperationNode::new(
                cx.op_id(),
                OpKind::Compute,
                exec,
                accesses,
                OpPayload::Apply { kernel: Arc::clone(&spec), inputs, output, elems },
            ));
        }

        // Step 4: ship staged output sub-view-blocks to their owners.
        for (sub, scratch) in out_vb.subs.iter().zip(&wb_scratch) {
            let Some(scratch) = *scratch else { continue };
            let seq = cx.tag_seq();
            let tag = Tag {
                array: out.base.id,
                block_coords: sub.block_coords.clone(),
                seq,
            };
            let bytes = sub.num_elements() * dtype.width();
            let src_ref = DataRef::Scratch {
                id: scratch,
                offset: vec![0; sub.extent.len()],
                extent: sub.extent.clone(),
            };
            nodes.push(OperationNode::new(
                cx.op_id(),
                OpKind::Send,
                exec,
                vec![src_ref.access(AccessMode::Read).unwrap()],
                OpPayload::Send { to: sub.owner, tag: tag.clone(), src: src_ref, bytes },
            ));
            let dst_ref = DataRef::Block {
                array: out.base.id,
                coords: sub.block_coords.clone(),
                range: sub.local.clone(),
            };
            nodes.push(OperationNode::new(
                cx.op_id(),
                OpKind::Recv,
                sub.owner,
                vec![dst_ref.access(AccessMode::Write).unwrap()],
                OpPayload::Recv { from: exec, tag, dst: dst_ref },
            ));
        }
    }
    Ok(nodes)
}

/// A region within one view-block, as view-block-relative element boxes
/// (start/extent per dimension).
type Region = Vec<RegionDim>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionDim {
    pub offset: usize,
    pub len: usize,
}

impl RegionDim {
    fn extent(&self) -> usize {
        self.len
    }
}

/// Cut the view-block by every operand's sub-view-block boundaries and
/// enumerate the resulting boxes in row-major order. Within one region,
/// every operand (including the output) stays inside a single
/// sub-view-block.
fn refine_regions(
    out_vb: &ViewBlock,
    ins: &[Operand],
    in_vbs: &[Option<Vec<ViewBlock>>],
    vb_idx: usize,
) -> Vec<Region> {
    let ndim = out_vb.extent.len();
    let mut cuts: Vec<Vec<usize>> = (0..ndim)
        .map(|d| vec![0usize, out_vb.extent[d]])
        .collect();
    let mut add_cuts = |vb: &ViewBlock| {
        for sub in &vb.subs {
            for d in 0..ndim {
                cuts[d].push(sub.vb_offset[d]);
                cuts[d].push(sub.vb_offset[d] + sub.extent[d]);
            }
        }
    };
    add_cuts(out_vb);
    for (i, op) in ins.iter().enumerate() {
        if matches!(op, Operand::View(_)) {
            add_cuts(&in_vbs[i].as_ref().unwrap()[vb_idx]);
        }
    }
    for c in &mut cuts {
        c.sort_unstable();
        c.dedup();
    }
    let seg_counts: Vec<usize> = cuts.iter().map(|c| c.len() - 1).collect();
    crate::layout::coord_iter(&seg_counts)
        .map(|pick| {
            pick.iter()
                .enumerate()
                .map(|(d, &i)| RegionDim { offset: cuts[d][i], len: cuts[d][i + 1] - cuts[d][i] })
                .collect()
        })
        .filter(|r: &Region| r.iter().all(|d| d.len > 0))
        .collect()
}

/// The sub-view-block of `vb` containing `region` (regions never straddle
/// sub-view-block boundaries).
fn containing_sub<'a>(vb: &'a ViewBlock, region: &Region) -> Option<(usize, &'a SubViewBlock)> {
    vb.subs.iter().enumerate().find(|(_, sub)| {
        sub.vb_offset
            .iter()
            .zip(&sub.extent)
            .zip(region)
            .all(|((&o, &e), r)| r.offset >= o && r.offset + r.len <= o + e)
    })
}

/// Block-local strided reference for a region inside a resident
/// sub-view-block.
fn block_ref(view: &ArrayView, sub: &SubViewBlock, region: &Region) -> DataRef {
    let range = sub
        .local
        .iter()
        .zip(&sub.vb_offset)
        .zip(region)
        .map(|((local, &off), r)| {
            let start = local.start + (r.offset - off) * local.step;
            DimSlice {
                start,
                stop: if r.len == 0 { start } else { start + (r.len - 1) * local.step + 1 },
                step: local.step,
            }
        })
        .collect();
    DataRef::Block { array: view.base.id, coords: sub.block_coords.clone(), range }
}

/// Dense reference for a region inside a staged sub-view-block.
fn scratch_ref(id: ScratchId, sub: &SubViewBlock, region: &Region) -> DataRef {
    DataRef::Scratch {
        id,
        offset: sub
            .vb_offset
            .iter()
            .zip(region)
            .map(|(&o, r)| r.offset - o)
            .collect(),
        extent: region.iter().map(|r| r.len).collect(),
    }
}

/// An output may alias an input only when, on every base-block, their
/// selected ranges are either identical or disjoint. Partial overlaps
/// would make the elementwise result depend on scheduling order.
fn check_aliasing(out: &ArrayView, ins: &[Operand]) -> Result<()> {
    for (i, op) in ins.iter().enumerate() {
        let Operand::View(v) = op else { continue };
        if v.base.id != out.base.id {
            continue;
        }
        if v.slices == out.slices {
            continue; // identical view: element-for-element in place
        }
        // Different windows onto the same base: compare per-block ranges.
        let out_ranges = per_block_ranges(out);
        let in_ranges = per_block_ranges(v);
        for (coords, orange) in &out_ranges {
            for (icoords, irange) in &in_ranges {
                if coords != icoords {
                    continue;
                }
                for o in orange {
                    for r in irange {
                        if o == r {
                            continue;
                        }
                        if crate::node::ranges_intersect(o, r) {
                            return Err(Error::invalid(format!(
                                "input {i} partially overlaps the output on block {coords:?}; \
                                 aliasing requires identical per-block ranges"
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// All block-local ranges a view selects, grouped by base-block.
fn per_block_ranges(view: &ArrayView) -> Vec<(Vec<usize>, Vec<Vec<DimSlice>>)> {
    let mut out: Vec<(Vec<usize>, Vec<Vec<DimSlice>>)> = Vec::new();
    for vb in decompose(view) {
        for sub in vb.subs {
            match out.iter_mut().find(|(c, _)| *c == sub.block_coords) {
                Some((_, v)) => v.push(sub.local.clone()),
                None => out.push((sub.block_coords.clone(), vec![sub.local.clone()])),
            }
        }
    }
    out
}
