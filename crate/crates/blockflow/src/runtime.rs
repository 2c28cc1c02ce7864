//! The runtime: array creation, lazy operation recording, flush triggers,
//! and reads.
//!
//! Array operations are recorded rather than applied; the recorded
//! operation-nodes accumulate in the dependency system until a flush
//! executes them. A flush is triggered by a read of distributed data, by
//! the number of delayed operation-nodes reaching the configured
//! threshold, or explicitly at the end of a program. Results are always
//! identical to an in-order sequential evaluation of the same program.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::deps::DependencySystem;
use crate::error::{Error, Result};
use crate::flush::ExecLog;
use crate::layout::{coord_iter, flatten_row_major, ArrayBase, ArrayId, ArrayView, Rank};
use crate::node::{Access, OpId, OpKind, OpPayload, OperationNode};
use crate::store::StoreSet;
use crate::transport::{LatencyModel, Transport};
use crate::ufunc::{expand_ufunc, ExpandCx, Operand, UfuncSpec};
use crate::value::{Dtype, Scalar};

/// Execution strategy of a flush.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlushMode {
    /// The prioritized loop: initiate every ready communication, poll
    /// non-blockingly, compute one operation at a time in between.
    LatencyHiding,
    /// Execute in recorded order, waiting for each communication at
    /// initiation; models an eager runtime without latency-hiding.
    Blocking,
}

impl std::fmt::Display for FlushMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlushMode::LatencyHiding => write!(f, "latency_hiding"),
            FlushMode::Blocking => write!(f, "blocking"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub nprocs: usize,
    pub mode: FlushMode,
    pub model: LatencyModel,
    /// Flush once this many operation-nodes are delayed.
    pub flush_threshold: usize,
    /// Re-check ready-queue completeness after every insert and retire.
    pub deep_validate: bool,
}

impl RuntimeConfig {
    pub fn new(nprocs: usize, mode: FlushMode) -> Self {
        RuntimeConfig {
            nprocs,
            mode,
            model: LatencyModel::default(),
            flush_threshold: 512,
            deep_validate: false,
        }
    }
}

pub(crate) struct ArrayEntry {
    pub base: Arc<ArrayBase>,
    /// Initial contents in row-major order, when the array was created
    /// from data. Globally known, so creation needs no communication.
    pub init: Option<Vec<Scalar>>,
}

/// One simulated run: arrays, rank stores, the dependency system, the
/// transport, and the deferred program.
pub struct Runtime {
    pub(crate) config: RuntimeConfig,
    pub(crate) arrays: BTreeMap<ArrayId, ArrayEntry>,
    pub(crate) deps: DependencySystem,
    pub(crate) transport: Transport,
    pub(crate) stores: StoreSet,
    /// Recorded but not yet flushed operation-nodes, in recording order.
    pub(crate) program: Vec<OpId>,
    pub(crate) log: ExecLog,
    next_array: u64,
    pub(crate) next_op: u64,
    pub(crate) next_scratch: u64,
    pub(crate) next_tag: u64,
    pub(crate) flushes: u64,
}

impl Runtime {
    pub fn new(config: RuntimeConfig) -> Result<Self> {
        config.model.validate()?;
        if config.nprocs == 0 {
            return Err(Error::invalid("need at least one rank"));
        }
        Ok(Runtime {
            transport: Transport::new(config.nprocs, config.model),
            stores: StoreSet::new(config.nprocs),
            arrays: BTreeMap::new(),
            deps: DependencySystem::new(),
            program: Vec::new(),
            log: ExecLog::new(),
            next_array: 0,
            next_op: 0,
            next_scratch: 0,
            next_tag: 0,
            flushes: 0,
            config,
        })
    }

    pub fn nprocs(&self) -> usize {
        self.config.nprocs
    }

    pub fn mode(&self) -> FlushMode {
        self.config.mode
    }

    pub fn deps(&self) -> &DependencySystem {
        &self.deps
    }

    pub fn transport(&self) -> &Transport {
        &self.transport
    }

    pub fn log(&self) -> &ExecLog {
        &self.log
    }

    /// Number of delayed (recorded, unflushed) operation-nodes.
    pub fn delayed_ops(&self) -> usize {
        self.program.len()
    }

    /// Ids of the delayed operation-nodes, in recording order.
    pub fn recorded_ops(&self) -> &[OpId] {
        &self.program
    }

    /// Create a distributed array initialized from row-major data. One
    /// creation operation-node is recorded per base-block; the block's
    /// storage is filled at its owner when the node executes.
    pub fn array_from_scalars(
        &mut self,
        shape: &[usize],
        block_size: &[usize],
        data: Vec<Scalar>,
    ) -> Result<ArrayView> {
        let dtype = data
            .first()
            .map(|s| s.dtype())
            .ok_or_else(|| Error::invalid("cannot infer dtype from empty data"))?;
        if data.iter().any(|s| s.dtype() != dtype) {
            return Err(Error::invalid("mixed dtypes in initial data"));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "initial data has {} elements, shape needs {expected}",
                data.len()
            )));
        }
        self.create_array(shape, block_size, dtype, Some(data))
    }

    pub fn array_i64(&mut self, shape: &[usize], block_size: &[usize], data: &[i64]) -> Result<ArrayView> {
        self.array_from_scalars(shape, block_size, data.iter().map(|&v| Scalar::I64(v)).collect())
    }

    pub fn array_f64(&mut self, shape: &[usize], block_size: &[usize], data: &[f64]) -> Result<ArrayView> {
        self.array_from_scalars(shape, block_size, data.iter().map(|&v| Scalar::F64(v)).collect())
    }

    /// Create an uninitialized (zeroed) distributed array. One allocation
    /// operation-node is recorded per base-block; allocations carry no
    /// access-nodes and never conflict.
    pub fn empty(&mut self, shape: &[usize], block_size: &[usize], dtype: Dtype) -> Result<ArrayView> {
        self.create_array(shape, block_size, dtype, None)
    }

    fn create_array(
        &mut self,
        shape: &[usize],
        block_size: &[usize],
        dtype: Dtype,
        init: Option<Vec<Scalar>>,
    ) -> Result<ArrayView> {
        let id = ArrayId(self.next_array);
        let base = Arc::new(ArrayBase::new(
            id,
            shape.to_vec(),
            dtype,
            block_size.to_vec(),
            self.config.nprocs,
        )?);
        self.next_array += 1;
        self.stores.register_array(&base);
        let has_init = init.is_some();
        self.arrays.insert(id, ArrayEntry { base: Arc::clone(&base), init });

        let mut nodes = Vec::new();
        for block in base.blocks() {
            let id_op = OpId(self.next_op);
            self.next_op += 1;
            let node = if has_init {
                let extent = base.block_extent(&block.coords);
                OperationNode::new(
                    id_op,
                    OpKind::Compute,
                    block.owner,
                    vec![Access::write(
                        crate::node::BlockKey::Base { array: id, coords: block.coords.clone() },
                        extent.iter().map(|&e| crate::layout::DimSlice::new(0, e, 1)).collect(),
                    )],
                    OpPayload::InitBlock { array: id, coords: block.coords.clone() },
                )
            } else {
                OperationNode::new(
                    id_op,
                    OpKind::Compute,
                    block.owner,
                    Vec::new(),
                    OpPayload::AllocBlock { array: id, coords: block.coords.clone() },
                )
            };
            nodes.push(node);
        }
        self.register_nodes(nodes)?;
        Ok(ArrayView::full(base))
    }

    /// Record an elementwise operation on views. Nothing executes; the
    /// expansion's nodes are registered with the dependency system.
    pub fn record_ufunc(&mut self, spec: &UfuncSpec, out: &ArrayView, ins: &[Operand]) -> Result<()> {
        let mut cx = ExpandCx::new(&mut self.next_op, &mut self.next_scratch, &mut self.next_tag);
        let nodes = expand_ufunc(&mut cx, Arc::new(spec.clone()), out, ins)?;
        let scratches = std::mem::take(&mut cx.scratches);
        for (id, info) in scratches {
            self.stores.register_scratch(id, info);
        }
        self.register_nodes(nodes)
    }

    /// Record an assignment (identity ufunc). Copying a view onto itself
    /// is elided.
    pub fn record_copy(&mut self, out: &ArrayView, input: &ArrayView) -> Result<()> {
        if out.base.id == input.base.id && out.slices == input.slices {
            return Ok(());
        }
        self.record_ufunc(&UfuncSpec::identity(), out, &[Operand::View(input.clone())])
    }

    /// Register expanded nodes and honor the delayed-operation threshold.
    fn register_nodes(&mut self, nodes: Vec<OperationNode>) -> Result<()> {
        for node in nodes {
            self.program.push(node.id);
            self.deps.insert(node);
            if self.config.deep_validate {
                self.deps
                    .check_ready_completeness()
                    .map_err(Error::InvariantViolation)?;
            }
        }
        self.maybe_autoflush()?;
        Ok(())
    }

    /// Flush if the number of delayed operation-nodes has reached the
    /// threshold. Returns whether a flush happened.
    pub fn maybe_autoflush(&mut self) -> Result<bool> {
        if self.program.len() >= self.config.flush_threshold {
            self.flush()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Flush everything still recorded; afterwards the deferred list is
    /// empty.
    pub fn finalize(&mut self) -> Result<()> {
        self.flush()
    }

    /// Read a view's elements in row-major order. Triggers a full flush,
    /// then gathers the values from the owning ranks.
    pub fn read_elements(&mut self, view: &ArrayView) -> Result<Vec<Scalar>> {
        self.flush()?;
        let base = &view.base;
        let extent = view.extent();
        let mut out = Vec::with_capacity(view.num_elements());
        for idx in coord_iter(&extent) {
            let base_coords: Vec<usize> =
                idx.iter().enumerate().map(|(d, &v)| view.base_coord(d, v)).collect();
            let block: Vec<usize> = base_coords
                .iter()
                .zip(&base.block_size)
                .map(|(&c, &b)| c / b)
                .collect();
            let local: Vec<usize> = base_coords
                .iter()
                .zip(&base.block_size)
                .map(|(&c, &b)| c % b)
                .collect();
            let grid = base.block_grid();
            let owner = flatten_row_major(&block, &grid) % base.nprocs;
            out.push(self.stores.read_block_elem(owner, base.id, &block, &local));
        }
        Ok(out)
    }

    /// Per-payload computation cost in virtual time units.
    pub(crate) fn compute_cost(&self, payload: &OpPayload) -> f64 {
        let per_elem = self.config.model.compute_cost;
        match payload {
            OpPayload::Apply { elems, .. } => *elems as f64 * per_elem,
            OpPayload::InitBlock { array, coords } => {
                let elems: usize = self.stores.block_extent(*array, coords).iter().product();
                elems as f64 * per_elem
            }
            OpPayload::AllocBlock { .. } => 0.0,
            OpPayload::Noop => per_elem,
            OpPayload::Send { .. } | OpPayload::Recv { .. } => 0.0,
        }
    }

    /// Apply a computation payload to the executing rank's store.
    pub(crate) fn execute_compute(&mut self, rank: Rank, op: OpId) {
        let payload = self.deps.get(op).payload.clone();
        match payload {
            OpPayload::InitBlock { array, coords } => {
                let entry = &self.arrays[&array];
                let base = Arc::clone(&entry.base);
                let init = entry.init.as_ref().expect("init payload without data");
                let extent = base.block_extent(&coords);
                let mut values = Vec::with_capacity(extent.iter().product());
                for local in coord_iter(&extent) {
                    let global: Vec<usize> = local
                        .iter()
                        .enumerate()
                        .map(|(d, &l)| coords[d] * base.block_size[d] + l)
                        .collect();
                    values.push(init[flatten_row_major(&global, &base.shape)]);
                }
                let target = crate::node::DataRef::Block {
                    array,
                    coords: coords.clone(),
                    range: extent
                        .iter()
                        .map(|&e| crate::layout::DimSlice::new(0, e, 1))
                        .collect(),
                };
                self.stores.write_region(rank, &target, &values);
            }
            OpPayload::AllocBlock { array, coords } => {
                self.stores.ensure_block(rank, array, &coords);
            }
            OpPayload::Apply { kernel, inputs, output, elems } => {
                // Snapshot inputs before writing so identically aliased
                // in-place operands stay element-for-element consistent.
                let ins: Vec<Vec<Scalar>> = inputs
                    .iter()
                    .map(|d| self.stores.read_region(rank, d, elems))
                    .collect();
                let mut out = Vec::with_capacity(elems);
                let mut args = vec![Scalar::I64(0); ins.len()];
                for i in 0..elems {
                    for (slot, column) in args.iter_mut().zip(&ins) {
                        *slot = column[i];
                    }
                    out.push((kernel.kernel)(&args));
                }
                self.stores.write_region(rank, &output, &out);
            }
            OpPayload::Noop => {}
            OpPayload::Send { .. } | OpPayload::Recv { .. } => {
                unreachable!("communication payloads are not computations")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn runtime(nprocs: usize, mode: FlushMode) -> Runtime {
        Runtime::new(RuntimeConfig::new(nprocs, mode)).unwrap()
    }

    #[test]
    fn creation_records_one_node_per_block() {
        let mut rt = runtime(2, FlushMode::LatencyHiding);
        rt.array_i64(&[6], &[3], &[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(rt.delayed_ops(), 2);
        rt.empty(&[6], &[3], Dtype::I64).unwrap();
        assert_eq!(rt.delayed_ops(), 4);
    }

    #[test]
    fn read_before_any_op_returns_initial_contents() {
        let mut rt = runtime(2, FlushMode::LatencyHiding);
        let m = rt.array_i64(&[6], &[3], &[1, 2, 3, 4, 5, 6]).unwrap();
        let vals = rt.read_elements(&m).unwrap();
        assert_eq!(vals.iter().map(|v| v.as_i64()).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(rt.delayed_ops(), 0);
    }

    #[test]
    fn read_zero_length_view_is_empty_but_flushes() {
        let mut rt = runtime(2, FlushMode::LatencyHiding);
        let m = rt.array_i64(&[6], &[3], &[1, 2, 3, 4, 5, 6]).unwrap();
        let v = m.slice(&[crate::layout::DimSlice::new(2, 2, 1)]).unwrap();
        assert!(rt.read_elements(&v).unwrap().is_empty());
        assert_eq!(rt.delayed_ops(), 0);
    }

    #[test]
    fn threshold_forces_flush() {
        let mut cfg = RuntimeConfig::new(1, FlushMode::LatencyHiding);
        cfg.flush_threshold = 2;
        let mut rt = Runtime::new(cfg).unwrap();
        // A 1-block array records one node; the second creation trips the
        // two-node threshold.
        rt.array_i64(&[3], &[3], &[1, 2, 3]).unwrap();
        assert_eq!(rt.delayed_ops(), 1);
        rt.array_i64(&[3], &[3], &[4, 5, 6]).unwrap();
        assert_eq!(rt.delayed_ops(), 0);
    }

    #[test]
    fn threshold_zero_flushes_every_record() {
        let mut cfg = RuntimeConfig::new(1, FlushMode::LatencyHiding);
        cfg.flush_threshold = 0;
        let mut rt = Runtime::new(cfg).unwrap();
        let m = rt.array_i64(&[3], &[3], &[1, 2, 3]).unwrap();
        assert_eq!(rt.delayed_ops(), 0);
        rt.record_ufunc(&UfuncSpec::mul(), &m, &[m.clone().into(), Scalar::I64(2).into()])
            .unwrap();
        assert_eq!(rt.delayed_ops(), 0);
        assert_eq!(
            rt.read_elements(&m).unwrap().iter().map(|v| v.as_i64()).collect::<Vec<_>>(),
            vec![2, 4, 6]
        );
    }

    #[test]
    fn high_threshold_defers_everything() {
        let mut cfg = RuntimeConfig::new(1, FlushMode::LatencyHiding);
        cfg.flush_threshold = 1000;
        let mut rt = Runtime::new(cfg).unwrap();
        let m = rt.array_i64(&[3], &[3], &[1, 2, 3]).unwrap();
        for _ in 0..100 {
            rt.record_ufunc(&UfuncSpec::mul(), &m, &[m.clone().into(), Scalar::I64(1).into()])
                .unwrap();
        }
        assert_eq!(rt.delayed_ops(), 101);
    }

    #[test]
    fn self_copy_is_elided() {
        let mut rt = runtime(2, FlushMode::LatencyHiding);
        let m = rt.array_i64(&[6], &[3], &[1, 2, 3, 4, 5, 6]).unwrap();
        let before = rt.delayed_ops();
        rt.record_copy(&m, &m).unwrap();
        assert_eq!(rt.delayed_ops(), before);
    }
}
