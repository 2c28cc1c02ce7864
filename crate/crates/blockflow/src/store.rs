//! Rank-private element storage.
//!
//! Each rank holds a flat row-major buffer per owned base-block plus the
//! scratch staging buffers of the transfers it participates in. A rank's
//! store is only ever touched by work executing on that rank; all
//! cross-rank data movement goes through the transport.

use std::collections::BTreeMap;

use crate::layout::{coord_iter, ArrayBase, ArrayId, Rank};
use crate::node::{DataRef, ScratchId};
use crate::value::{BlockData, Dtype, Scalar};

/// Metadata of one scratch staging buffer.
#[derive(Debug, Clone)]
pub struct ScratchInfo {
    pub owner: Rank,
    pub dtype: Dtype,
    pub extent: Vec<usize>,
}

impl ScratchInfo {
    pub fn len(&self) -> usize {
        self.extent.iter().product()
    }
}

#[derive(Debug, Default)]
struct RankStore {
    blocks: BTreeMap<(ArrayId, Vec<usize>), BlockData>,
    scratches: BTreeMap<ScratchId, BlockData>,
}

/// All rank stores of one simulated run plus block/scratch metadata.
#[derive(Debug, Default)]
pub struct StoreSet {
    ranks: Vec<RankStore>,
    /// Block extents are needed to translate block-local coordinates into
    /// flat buffer offsets.
    block_meta: BTreeMap<ArrayId, (Vec<usize>, Vec<usize>, Dtype)>, // (shape, block_size, dtype)
    scratch_meta: BTreeMap<ScratchId, ScratchInfo>,
}

impl StoreSet {
    pub fn new(nprocs: usize) -> Self {
        StoreSet {
            ranks: (0..nprocs).map(|_| RankStore::default()).collect(),
            block_meta: BTreeMap::new(),
            scratch_meta: BTreeMap::new(),
        }
    }

    pub fn register_array(&mut self, base: &ArrayBase) {
        self.block_meta
            .insert(base.id, (base.shape.clone(), base.block_size.clone(), base.dtype));
    }

    pub fn register_scratch(&mut self, id: ScratchId, info: ScratchInfo) {
        self.scratch_meta.insert(id, info);
    }

    pub fn scratch_info(&self, id: ScratchId) -> &ScratchInfo {
        &self.scratch_meta[&id]
    }

    pub fn block_extent(&self, array: ArrayId, coords: &[usize]) -> Vec<usize> {
        let (shape, bs, _) = &self.block_meta[&array];
        coords
            .iter()
            .enumerate()
            .map(|(d, &k)| {
                let lo = k * bs[d];
                let hi = ((k + 1) * bs[d]).min(shape[d]);
                hi - lo
            })
            .collect()
    }

    pub fn array_dtype(&self, array: ArrayId) -> Dtype {
        self.block_meta[&array].2
    }

    /// Get or lazily allocate (zeroed) the buffer of a base-block.
    fn block_mut(&mut self, rank: Rank, array: ArrayId, coords: &[usize]) -> &mut BlockData {
        let extent = self.block_extent(array, coords);
        let dtype = self.array_dtype(array);
        let len: usize = extent.iter().product();
        self.ranks[rank]
            .blocks
            .entry((array, coords.to_vec()))
            .or_insert_with(|| BlockData::zeroed(dtype, len))
    }

    fn scratch_mut(&mut self, rank: Rank, id: ScratchId) -> &mut BlockData {
        let info = self.scratch_meta[&id].clone();
        assert_eq!(info.owner, rank, "scratch {id} touched by the wrong rank");
        self.ranks[rank]
            .scratches
            .entry(id)
            .or_insert_with(|| BlockData::zeroed(info.dtype, info.len()))
    }

    /// Ensure a block buffer exists (array creation step).
    pub fn ensure_block(&mut self, rank: Rank, array: ArrayId, coords: &[usize]) {
        self.block_mut(rank, array, coords);
    }

    /// Read one element of a block by block-local coordinates.
    pub fn read_block_elem(&mut self, rank: Rank, array: ArrayId, coords: &[usize], local: &[usize]) -> Scalar {
        let extent = self.block_extent(array, coords);
        let idx = flatten(local, &extent);
        self.block_mut(rank, array, coords).get(idx)
    }

    /// Materialize the elements selected by a data reference, in row-major
    /// region order.
    pub fn read_region(&mut self, rank: Rank, data: &DataRef, elems: usize) -> Vec<Scalar> {
        match data {
            DataRef::Const(v) => vec![*v; elems],
            DataRef::Block { array, coords, range } => {
                let extent = self.block_extent(*array, coords);
                let sel: Vec<usize> = range.iter().map(|s| s.extent()).collect();
                let buf = self.block_mut(rank, *array, coords);
                let mut out = Vec::with_capacity(elems);
                for idx in coord_iter(&sel) {
                    let local: Vec<usize> = idx
                        .iter()
                        .enumerate()
                        .map(|(d, &i)| range[d].start + i * range[d].step)
                        .collect();
                    out.push(buf.get(flatten(&local, &extent)));
                }
                out
            }
            DataRef::Scratch { id, offset, extent } => {
                let full = self.scratch_meta[&id].extent.clone();
                let buf = self.scratch_mut(rank, *id);
                let mut out = Vec::with_capacity(elems);
                for idx in coord_iter(extent) {
                    let local: Vec<usize> =
                        idx.iter().zip(offset).map(|(&i, &o)| o + i).collect();
                    out.push(buf.get(flatten(&local, &full)));
                }
                out
            }
        }
    }

    /// Write region values (row-major region order) through a data
    /// reference.
    pub fn write_region(&mut self, rank: Rank, data: &DataRef, values: &[Scalar]) {
        match data {
            DataRef::Const(_) => panic!("cannot write through a constant"),
            DataRef::Block { array, coords, range } => {
                let extent = self.block_extent(*array, coords);
                let sel: Vec<usize> = range.iter().map(|s| s.extent()).collect();
                let buf = self.block_mut(rank, *array, coords);
                for (v, idx) in values.iter().zip(coord_iter(&sel)) {
                    let local: Vec<usize> = idx
                        .iter()
                        .enumerate()
                        .map(|(d, &i)| range[d].start + i * range[d].step)
                        .collect();
                    buf.set(flatten(&local, &extent), *v);
                }
            }
            DataRef::Scratch { id, offset, extent } => {
                let full = self.scratch_meta[&id].extent.clone();
                let buf = self.scratch_mut(rank, *id);
                for (v, idx) in values.iter().zip(coord_iter(extent)) {
                    let local: Vec<usize> =
                        idx.iter().zip(offset).map(|(&i, &o)| o + i).collect();
                    buf.set(flatten(&local, &full), *v);
                }
            }
        }
    }

    /// Drop all scratch buffers (between flushes).
    pub fn clear_scratches(&mut self) {
        for r in &mut self.ranks {
            r.scratches.clear();
        }
        self.scratch_meta.clear();
    }
}

fn flatten(coords: &[usize], extent: &[usize]) -> usize {
    let mut idx = 0;
    for (c, e) in coords.iter().zip(extent) {
        debug_assert!(c < e);
        idx = idx * e + c;
    }
    idx
}
