//! Distributed array layout: array-bases, array-views, and the
//! base-block / view-block / sub-view-block decomposition.
//!
//! An *array-base* owns the storage and full metadata of a distributed
//! array. An *array-view* is a strided window onto a base and is the only
//! object user programs manipulate; views always refer to a base directly,
//! never to another view. Bases are split into *base-blocks* distributed
//! block-cyclically over the ranks; a view splits into *view-blocks*
//! (tiles of the base's block size measured in view coordinates), and each
//! view-block splits at base-block boundaries into *sub-view-blocks*, each
//! of which lives wholly on one rank. Sub-view-blocks are the unit of
//! scheduling and transfer.
//!
//! Everything here is pure metadata arithmetic: every rank can evaluate it
//! without communication and all ranks agree on the result.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::value::Dtype;

/// Simulated process index.
pub type Rank = usize;

/// Unique identifier of an array-base within one runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArrayId(pub u64);

impl std::fmt::Display for ArrayId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Per-dimension slice in source coordinates: `start..stop` with `step >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimSlice {
    pub start: usize,
    pub stop: usize,
    pub step: usize,
}

impl DimSlice {
    pub fn new(start: usize, stop: usize, step: usize) -> Self {
        DimSlice { start, stop, step }
    }

    pub fn full(len: usize) -> Self {
        DimSlice { start: 0, stop: len, step: 1 }
    }

    /// Number of selected indices.
    pub fn extent(&self) -> usize {
        if self.stop <= self.start {
            0
        } else {
            (self.stop - self.start).div_ceil(self.step)
        }
    }
}

/// Root object describing a whole distributed array and its metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayBase {
    pub id: ArrayId,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    /// Extent per dimension of a base-block; blocks at the array edge may
    /// be smaller.
    pub block_size: Vec<usize>,
    /// Number of ranks the array is distributed over.
    pub nprocs: usize,
}

impl ArrayBase {
    pub fn new(
        id: ArrayId,
        shape: Vec<usize>,
        dtype: Dtype,
        block_size: Vec<usize>,
        nprocs: usize,
    ) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::invalid("array must have at least one dimension"));
        }
        if shape.len() != block_size.len() {
            return Err(Error::invalid(format!(
                "shape has {} dimensions but block size has {}",
                shape.len(),
                block_size.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid("zero-sized dimension"));
        }
        if block_size.iter().any(|&d| d == 0) {
            return Err(Error::invalid("zero-sized block dimension"));
        }
        if nprocs == 0 {
            return Err(Error::invalid("need at least one rank"));
        }
        Ok(ArrayBase { id, shape, dtype, block_size, nprocs })
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Number of base-blocks per dimension.
    pub fn block_grid(&self) -> Vec<usize> {
        self.shape
            .iter()
            .zip(&self.block_size)
            .map(|(&s, &b)| s.div_ceil(b))
            .collect()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_grid().iter().product()
    }

    /// Actual extent of the base-block at `coords` (edge blocks may be
    /// partial).
    pub fn block_extent(&self, coords: &[usize]) -> Vec<usize> {
        coords
            .iter()
            .enumerate()
            .map(|(d, &k)| {
                let lo = k * self.block_size[d];
                let hi = ((k + 1) * self.block_size[d]).min(self.shape[d]);
                hi - lo
            })
            .collect()
    }

    /// Block-cyclic owner of the base-block at `coords`: row-major
    /// flattening of the block coordinates modulo the rank count.
    pub fn owner_of(&self, coords: &[usize]) -> Result<Rank> {
        let grid = self.block_grid();
        if coords.len() != grid.len() {
            return Err(Error::invalid(format!(
                "block coordinates have {} dimensions, grid has {}",
                coords.len(),
                grid.len()
            )));
        }
        if coords.iter().zip(&grid).any(|(&c, &g)| c >= g) {
            return Err(Error::invalid(format!(
                "block coordinates {coords:?} outside grid {grid:?}"
            )));
        }
        Ok(flatten_row_major(coords, &grid) % self.nprocs)
    }

    /// Row-major enumeration of all base-blocks.
    pub fn blocks(&self) -> Vec<BaseBlock> {
        let grid = self.block_grid();
        coord_iter(&grid)
            .map(|coords| {
                let owner = flatten_row_major(&coords, &grid) % self.nprocs;
                BaseBlock { base: self.id, coords, owner }
            })
            .collect()
    }
}

/// One block of an array-base, stored wholly on `owner`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseBlock {
    pub base: ArrayId,
    pub coords: Vec<usize>,
    pub owner: Rank,
}

/// A strided window onto an array-base. Slicing a view composes the slice
/// specs so the result still references the base directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayView {
    pub base: Arc<ArrayBase>,
    pub slices: Vec<DimSlice>,
}

impl ArrayView {
    /// View of the entire base.
    pub fn full(base: Arc<ArrayBase>) -> Self {
        let slices = base.shape.iter().map(|&n| DimSlice::full(n)).collect();
        ArrayView { base, slices }
    }

    pub fn extent(&self) -> Vec<usize> {
        self.slices.iter().map(|s| s.extent()).collect()
    }

    pub fn num_elements(&self) -> usize {
        self.extent().iter().product()
    }

    pub fn ndim(&self) -> usize {
        self.slices.len()
    }

    /// Base coordinate of view index `v` along dimension `d`.
    pub fn base_coord(&self, d: usize, v: usize) -> usize {
        self.slices[d].start + v * self.slices[d].step
    }

    /// Restrict the view by a further slice given in view coordinates.
    ///
    /// Negative indices are a frontend concern and must be resolved to
    /// non-negative positions before this call.
    pub fn slice(&self, spec: &[DimSlice]) -> Result<ArrayView> {
        if spec.len() != self.ndim() {
            return Err(Error::invalid(format!(
                "slice has {} dimensions, view has {}",
                spec.len(),
                self.ndim()
            )));
        }
        let extent = self.extent();
        let mut slices = Vec::with_capacity(spec.len());
        for (d, s) in spec.iter().enumerate() {
            if s.step == 0 {
                return Err(Error::invalid("slice step must be >= 1"));
            }
            if s.start > s.stop || s.stop > extent[d] {
                return Err(Error::invalid(format!(
                    "slice {}..{} out of bounds for extent {} in dimension {d}",
                    s.start, s.stop, extent[d]
                )));
            }
            let parent = self.slices[d];
            // Compose: child index i selects parent index s.start + i*s.step,
            // which selects base index parent.start + (..)*parent.step.
            let start = parent.start + s.start * parent.step;
            let step = parent.step * s.step;
            let n = s.extent();
            let stop = if n == 0 { start } else { start + (n - 1) * step + 1 };
            slices.push(DimSlice { start, stop, step });
        }
        Ok(ArrayView { base: Arc::clone(&self.base), slices })
    }
}

/// The intersection of a view-block with one base-block; lives wholly on
/// one rank and is the unit of scheduling and transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubViewBlock {
    /// Coordinates of the owning base-block.
    pub block_coords: Vec<usize>,
    pub owner: Rank,
    /// Selected elements in base-block-local coordinates (strided).
    pub local: Vec<DimSlice>,
    /// Position of this sub-view-block within its parent view-block, in
    /// view-block-relative element coordinates.
    pub vb_offset: Vec<usize>,
    /// Element extent per dimension.
    pub extent: Vec<usize>,
}

impl SubViewBlock {
    pub fn num_elements(&self) -> usize {
        self.extent.iter().product()
    }
}

/// One tile of a view in view coordinates; may span several base-blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewBlock {
    /// Tile coordinates within the view's block grid.
    pub coords: Vec<usize>,
    /// First view coordinate of the tile, per dimension.
    pub origin: Vec<usize>,
    /// Element extent per dimension (edge tiles may be partial).
    pub extent: Vec<usize>,
    /// Constituent sub-view-blocks; together they tile the view-block
    /// exactly once.
    pub subs: Vec<SubViewBlock>,
}

impl ViewBlock {
    pub fn num_elements(&self) -> usize {
        self.extent.iter().product()
    }
}

/// Per-dimension segment of consecutive view coordinates that map into a
/// single base-block.
#[derive(Debug, Clone)]
struct DimSegment {
    block: usize,
    /// First view coordinate of the segment relative to the view-block.
    vb_offset: usize,
    count: usize,
    local_start: usize,
    step: usize,
}

/// Split a view into view-blocks and sub-view-blocks.
///
/// View-blocks are tiles of the base's block size measured in view
/// coordinates (the last tile per dimension may be partial). Each tile is
/// then cut wherever the underlying base coordinates cross a base-block
/// boundary; every view element lands in exactly one sub-view-block.
pub fn decompose(view: &ArrayView) -> Vec<ViewBlock> {
    decompose_as(view, &view.base.block_size)
}

/// [`decompose`] with an explicit view-block tile size. Operands of one
/// recorded operation must share the output's view-block grid even when
/// their bases use different block sizes, so the expansion tiles every
/// operand by the output's block size.
pub fn decompose_as(view: &ArrayView, tile: &[usize]) -> Vec<ViewBlock> {
    let base = &view.base;
    let extent = view.extent();
    if extent.iter().any(|&e| e == 0) {
        return Vec::new();
    }
    let vb_grid: Vec<usize> = extent
        .iter()
        .zip(tile)
        .map(|(&e, &b)| e.div_ceil(b))
        .collect();

    let mut out = Vec::new();
    for vb_coords in coord_iter(&vb_grid) {
        let mut origin = Vec::with_capacity(vb_coords.len());
        let mut vb_extent = Vec::with_capacity(vb_coords.len());
        let mut dim_segments: Vec<Vec<DimSegment>> = Vec::with_capacity(vb_coords.len());
        for (d, &c) in vb_coords.iter().enumerate() {
            let lo = c * tile[d];
            let hi = ((c + 1) * tile[d]).min(extent[d]);
            origin.push(lo);
            vb_extent.push(hi - lo);
            dim_segments.push(segment_dim(view, d, lo, hi));
        }
        // Cartesian product of the per-dimension segments yields the
        // sub-view-blocks of this tile.
        let seg_counts: Vec<usize> = dim_segments.iter().map(|s| s.len()).collect();
        let mut subs = Vec::new();
        for pick in coord_iter(&seg_counts) {
            let segs: Vec<&DimSegment> =
                pick.iter().enumerate().map(|(d, &i)| &dim_segments[d][i]).collect();
            let block_coords: Vec<usize> = segs.iter().map(|s| s.block).collect();
            let owner = base
                .owner_of(&block_coords)
                .expect("segment blocks are always inside the grid");
            subs.push(SubViewBlock {
                block_coords,
                owner,
                local: segs
                    .iter()
                    .map(|s| DimSlice {
                        start: s.local_start,
                        stop: if s.count == 0 {
                            s.local_start
                        } else {
                            s.local_start + (s.count - 1) * s.step + 1
                        },
                        step: s.step,
                    })
                    .collect(),
                vb_offset: segs.iter().map(|s| s.vb_offset).collect(),
                extent: segs.iter().map(|s| s.count).collect(),
            });
        }
        out.push(ViewBlock { coords: vb_coords, origin, extent: vb_extent, subs });
    }
    out
}

/// Group the view coordinates `[lo, hi)` of dimension `d` into maximal runs
/// that stay inside one base-block.
fn segment_dim(view: &ArrayView, d: usize, lo: usize, hi: usize) -> Vec<DimSegment> {
    let bs = view.base.block_size[d];
    let mut segs: Vec<DimSegment> = Vec::new();
    for v in lo..hi {
        let b = view.base_coord(d, v);
        let block = b / bs;
        match segs.last_mut() {
            Some(seg) if seg.block == block => seg.count += 1,
            _ => segs.push(DimSegment {
                block,
                vb_offset: v - lo,
                count: 1,
                local_start: b - block * bs,
                step: view.slices[d].step,
            }),
        }
    }
    segs
}

/// True iff every view-block consists of exactly one sub-view-block that
/// covers an entire base-block with step 1. Aligned views map through the
/// block hierarchy contiguously and need no intra-view-block communication.
pub fn is_aligned(view: &ArrayView) -> bool {
    decompose(view).iter().all(|vb| {
        vb.subs.len() == 1 && {
            let sub = &vb.subs[0];
            let full = view.base.block_extent(&sub.block_coords);
            sub.local
                .iter()
                .zip(&full)
                .all(|(l, &n)| l.step == 1 && l.start == 0 && l.extent() == n)
        }
    })
}

/// Row-major flattening of `coords` within `grid`.
pub fn flatten_row_major(coords: &[usize], grid: &[usize]) -> usize {
    let mut idx = 0;
    for (c, g) in coords.iter().zip(grid) {
        idx = idx * g + c;
    }
    idx
}

/// Iterate all coordinates of `grid` in row-major order.
pub fn coord_iter(grid: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = grid.iter().product();
    let ndim = grid.len();
    (0..total).map(move |mut flat| {
        let mut coords = vec![0; ndim];
        for d in (0..ndim).rev() {
            coords[d] = flat % grid[d];
            flat /= grid[d];
        }
        coords
    })
}
