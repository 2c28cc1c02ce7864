//! Shared test support: randomized lazy programs mirrored against a
//! plain in-memory evaluation, and raw operation generators for
//! scheduling-structure checks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use blockflow::layout::coord_iter;
use blockflow::node::{Access, AccessMode, BlockKey, OpId, OpKind, OpPayload, OperationNode};
use blockflow::{
    ArrayId, ArrayView, DimSlice, Dtype, FlushMode, Runtime, RuntimeConfig, Scalar, UfuncSpec,
};

/// Plain row-major array mirroring one distributed array.
pub struct Mirror {
    pub shape: Vec<usize>,
    pub data: Vec<Scalar>,
}

impl Mirror {
    fn flat(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for (c, e) in coords.iter().zip(&self.shape) {
            idx = idx * e + c;
        }
        idx
    }

    fn get(&self, slices: &[DimSlice], view_coords: &[usize]) -> Scalar {
        let coords: Vec<usize> = view_coords
            .iter()
            .zip(slices)
            .map(|(&v, s)| s.start + v * s.step)
            .collect();
        self.data[self.flat(&coords)]
    }

    fn set(&mut self, slices: &[DimSlice], view_coords: &[usize], value: Scalar) {
        let coords: Vec<usize> = view_coords
            .iter()
            .zip(slices)
            .map(|(&v, s)| s.start + v * s.step)
            .collect();
        let idx = self.flat(&coords);
        self.data[idx] = value;
    }
}

/// In-order elementwise evaluation on the mirrors; the ground truth the
/// runtime must reproduce.
pub fn mirror_apply(
    mirrors: &mut [Mirror],
    kernel: &UfuncSpec,
    out: (usize, &[DimSlice]),
    ins: &[(Option<usize>, Vec<DimSlice>, Option<Scalar>)],
) {
    let extent: Vec<usize> = out.1.iter().map(|s| s.extent()).collect();
    let mut result = Vec::new();
    for coords in coord_iter(&extent) {
        let args: Vec<Scalar> = ins
            .iter()
            .map(|(arr, slices, konst)| match arr {
                Some(a) => mirrors[*a].get(slices, &coords),
                None => konst.unwrap(),
            })
            .collect();
        result.push((kernel.kernel)(&args));
    }
    for (coords, value) in coord_iter(&extent).zip(result) {
        mirrors[out.0].set(out.1, &coords, value);
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub nprocs: usize,
    pub mode: FlushMode,
    pub max_ops: usize,
    pub max_dim: usize,
    pub flush_prob: f64,
    pub deep_validate: bool,
}

impl GenConfig {
    pub fn new(nprocs: usize, mode: FlushMode) -> Self {
        GenConfig {
            nprocs,
            mode,
            max_ops: 50,
            max_dim: 64,
            flush_prob: 0.1,
            deep_validate: false,
        }
    }
}

fn random_slices(rng: &mut ChaCha8Rng, shape: &[usize], extent: &[usize]) -> Option<Vec<DimSlice>> {
    let mut out = Vec::with_capacity(shape.len());
    for (&dim, &e) in shape.iter().zip(extent) {
        if e == 0 {
            let start = rng.gen_range(0..=dim);
            out.push(DimSlice::new(start, start, 1));
            continue;
        }
        // Pick a step that fits, then a start.
        let max_step = if e == 1 { 3 } else { ((dim - 1) / (e - 1)).min(3) };
        if max_step == 0 {
            return None;
        }
        let step = rng.gen_range(1..=max_step);
        let span = (e - 1) * step + 1;
        if span > dim {
            return None;
        }
        let start = rng.gen_range(0..=dim - span);
        out.push(DimSlice::new(start, start + span, step));
    }
    Some(out)
}

fn boxes_disjoint(a: &[DimSlice], b: &[DimSlice]) -> bool {
    a.iter().zip(b).any(|(x, y)| {
        if x.extent() == 0 || y.extent() == 0 {
            return true;
        }
        let x_last = x.start + (x.extent() - 1) * x.step;
        let y_last = y.start + (y.extent() - 1) * y.step;
        x_last < y.start || y_last < x.start
    })
}

/// Build and run one random lazy program, checking every read and the
/// final contents of every array against the mirror evaluation.
pub fn run_random_program(seed: u64, cfg: &GenConfig) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rcfg = RuntimeConfig::new(cfg.nprocs, cfg.mode);
    rcfg.deep_validate = cfg.deep_validate;
    rcfg.model = blockflow::LatencyModel {
        alpha: *[0.0, 1.0, 50.0].get(rng.gen_range(0..3)).unwrap(),
        beta: *[16.0, 256.0, f64::INFINITY].get(rng.gen_range(0..3)).unwrap(),
        serialize_links: rng.gen_bool(0.5),
        compute_cost: 1.0,
    };
    if rng.gen_bool(0.3) {
        rcfg.flush_threshold = rng.gen_range(1..40);
    }
    let mut rt = Runtime::new(rcfg).map_err(|e| e.to_string())?;

    let dtype = if rng.gen_bool(0.5) { Dtype::I64 } else { Dtype::F64 };
    let ndim = rng.gen_range(1..=2usize);
    let shape: Vec<usize> = (0..ndim).map(|_| rng.gen_range(1..=cfg.max_dim)).collect();
    let narrays = rng.gen_range(2..=3usize);

    let mut views: Vec<ArrayView> = Vec::new();
    let mut mirrors: Vec<Mirror> = Vec::new();
    for _ in 0..narrays {
        let block: Vec<usize> = shape.iter().map(|&d| rng.gen_range(1..=d)).collect();
        let len: usize = shape.iter().product();
        let data: Vec<Scalar> = (0..len)
            .map(|_| match dtype {
                Dtype::I64 => Scalar::I64(rng.gen_range(-100..100)),
                Dtype::F64 => Scalar::F64(rng.gen_range(-4.0..4.0)),
            })
            .collect();
        let view = rt
            .array_from_scalars(&shape, &block, data.clone())
            .map_err(|e| e.to_string())?;
        views.push(view);
        mirrors.push(Mirror { shape: shape.clone(), data });
    }

    let kernels = [UfuncSpec::add(), UfuncSpec::mul(), UfuncSpec::sub(), UfuncSpec::identity()];
    let nops = rng.gen_range(1..=cfg.max_ops);
    for _ in 0..nops {
        if rng.gen_bool(cfg.flush_prob) {
            rt.flush().map_err(|e| e.to_string())?;
        }
        let kernel = &kernels[rng.gen_range(0..kernels.len())];
        // Output selection.
        let out_arr = rng.gen_range(0..narrays);
        let extent: Vec<usize> = shape.iter().map(|&d| rng.gen_range(0..=d)).collect();
        let Some(out_slices) = random_slices(&mut rng, &shape, &extent) else { continue };

        // Inputs: identical (in place), disjoint on the same array, or any
        // window on a different array.
        let mut ins_rt: Vec<blockflow::Operand> = Vec::new();
        let mut ins_mirror: Vec<(Option<usize>, Vec<DimSlice>, Option<Scalar>)> = Vec::new();
        let mut ok = true;
        for slot in 0..kernel.arity {
            let scalar_allowed = kernel.arity == 2 && slot == 1;
            if scalar_allowed && rng.gen_bool(0.25) {
                let s = match dtype {
                    Dtype::I64 => Scalar::I64(rng.gen_range(-4..5)),
                    Dtype::F64 => Scalar::F64(rng.gen_range(-2.0..2.0)),
                };
                ins_rt.push(s.into());
                ins_mirror.push((None, Vec::new(), Some(s)));
                continue;
            }
            let mut placed = false;
            for _try in 0..8 {
                let arr = rng.gen_range(0..narrays);
                let slices = if arr == out_arr && rng.gen_bool(0.4) {
                    out_slices.clone()
                } else {
                    match random_slices(&mut rng, &shape, &extent) {
                        Some(s) => s,
                        None => continue,
                    }
                };
                if arr == out_arr
                    && slices != out_slices
                    && !boxes_disjoint(&slices, &out_slices)
                {
                    continue;
                }
                let view = views[arr].slice(&slices_to_view(&slices)).map_err(|e| e.to_string())?;
                ins_rt.push(view.into());
                ins_mirror.push((Some(arr), slices, None));
                placed = true;
                break;
            }
            if !placed {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }

        let out_view = views[out_arr]
            .slice(&slices_to_view(&out_slices))
            .map_err(|e| e.to_string())?;
        rt.record_ufunc(kernel, &out_view, &ins_rt).map_err(|e| e.to_string())?;
        mirror_apply(&mut mirrors, kernel, (out_arr, &out_slices), &ins_mirror);

        if rng.gen_bool(0.05) {
            // A mid-program read must already agree.
            let got = rt.read_elements(&views[out_arr]).map_err(|e| e.to_string())?;
            compare(&got, &mirrors[out_arr].data, &format!("mid-program array {out_arr}"))?;
        }
    }

    rt.finalize().map_err(|e| e.to_string())?;
    for (i, view) in views.iter().enumerate() {
        let got = rt.read_elements(view).map_err(|e| e.to_string())?;
        compare(&got, &mirrors[i].data, &format!("array {i} (seed {seed})"))?;
    }
    Ok(())
}

/// The generator works in base coordinates; a full-view slice uses them
/// directly.
fn slices_to_view(slices: &[DimSlice]) -> Vec<DimSlice> {
    slices.to_vec()
}

pub fn compare(got: &[Scalar], expected: &[Scalar], what: &str) -> Result<(), String> {
    if got.len() != expected.len() {
        return Err(format!("{what}: length {} vs {}", got.len(), expected.len()));
    }
    for (i, (g, e)) in got.iter().zip(expected).enumerate() {
        let ok = match (g, e) {
            (Scalar::I64(a), Scalar::I64(b)) => a == b,
            (Scalar::F64(a), Scalar::F64(b)) => {
                let tol = 1e-12 * b.abs().max(1.0);
                (a - b).abs() <= tol
            }
            _ => false,
        };
        if !ok {
            return Err(format!("{what}: element {i} is {g}, expected {e}"));
        }
    }
    Ok(())
}

/// Random structure-only operation for dependency-system checks: one to
/// three accesses with random blocks, ranges and modes.
pub fn random_raw_op(id: u64, rng: &mut ChaCha8Rng, nblocks: usize) -> OperationNode {
    let naccess = rng.gen_range(1..=3usize);
    let accesses: Vec<Access> = (0..naccess)
        .map(|_| {
            let start = rng.gen_range(0..8usize);
            let len = rng.gen_range(0..5usize);
            let step = rng.gen_range(1..=2usize);
            let stop = if len == 0 { start } else { start + (len - 1) * step + 1 };
            Access {
                block: BlockKey::Base {
                    array: ArrayId(0),
                    coords: vec![rng.gen_range(0..nblocks)],
                },
                range: vec![DimSlice { start, stop, step }],
                mode: if rng.gen_bool(0.5) { AccessMode::Write } else { AccessMode::Read },
            }
        })
        .collect();
    OperationNode::new(OpId(id), OpKind::Compute, 0, accesses, OpPayload::Noop)
}
