//! Benchmark harness: kernels, sequential oracles, metrics, CSV.
//!
//! Each benchmark run records a kernel's lazy program, flushes it under
//! the requested mode, validates the final distributed contents against a
//! plain in-memory evaluation of the same program, and reports virtual
//! wait time, makespan, speedup against the single-rank makespan of the
//! same mode, dependency comparison counts, and transfer volume.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layout::{ArrayView, DimSlice};
use crate::runtime::{FlushMode, Runtime, RuntimeConfig};
use crate::transport::LatencyModel;
use crate::ufunc::UfuncSpec;
use crate::value::{Dtype, Scalar};

/// Benchmark kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// The three-point stencil: C[1:n-1] = M[2:] + M[0:n-2].
    Stencil3,
    /// Row-distributed matrix-vector Jacobi iteration with the vector
    /// gathered each iteration.
    Jacobi,
    /// Five-view stencil sweep: work += 0.2*(up+down+left+right), with a
    /// convergence value read every iteration.
    JacobiStencil,
    /// Embarrassingly parallel chain on aligned arrays; moves zero bytes.
    Elementwise,
}

impl Kernel {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "stencil3" => Ok(Kernel::Stencil3),
            "jacobi" => Ok(Kernel::Jacobi),
            "jacobi_stencil" => Ok(Kernel::JacobiStencil),
            "elementwise" => Ok(Kernel::Elementwise),
            other => Err(Error::invalid(format!(
                "unknown kernel {other:?} (expected stencil3, jacobi, jacobi_stencil or elementwise)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Stencil3 => "stencil3",
            Kernel::Jacobi => "jacobi",
            Kernel::JacobiStencil => "jacobi_stencil",
            Kernel::Elementwise => "elementwise",
        }
    }
}

/// One benchmark configuration.
#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub kernel: Kernel,
    /// Problem size: 1-D kernels use `size`, the stencil sweep runs on an
    /// interior of `size` x `size`.
    pub size: usize,
    /// Block extent (per dimension for 2-D kernels).
    pub block: usize,
    pub ranks: Vec<usize>,
    pub iterations: usize,
    pub flush_threshold: usize,
    pub model: LatencyModel,
    pub seed: u64,
}

impl BenchmarkSpec {
    pub fn new(kernel: Kernel, size: usize, block: usize) -> Self {
        BenchmarkSpec {
            kernel,
            size,
            block,
            ranks: vec![1, 2, 4],
            iterations: 1,
            flush_threshold: 1 << 20,
            model: LatencyModel::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 4 {
            return Err(Error::invalid("benchmark size must be at least 4"));
        }
        if self.block == 0 {
            return Err(Error::invalid("block extent must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("need at least one iteration"));
        }
        if self.ranks.is_empty() {
            return Err(Error::invalid("need at least one rank count"));
        }
        self.model.validate()
    }
}

/// Per-rank virtual-time accounting of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankMetrics {
    pub wait: f64,
    pub compute: f64,
    pub finish: f64,
}

/// Aggregated metrics of one (kernel, mode, rank count) run.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub kernel: &'static str,
    pub mode: FlushMode,
    pub ranks: usize,
    pub per_rank: Vec<RankMetrics>,
    pub makespan: f64,
    /// Mean over ranks of wait time divided by makespan.
    pub wait_pct: f64,
    /// Single-rank makespan of the same mode divided by this makespan.
    pub speedup: f64,
    pub comparisons: u64,
    pub messages: u64,
    pub bytes: u64,
}

impl RunMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{},{}",
            self.kernel,
            self.mode,
            self.ranks,
            self.makespan,
            self.wait_pct,
            self.speedup,
            self.comparisons,
            self.bytes
        )
    }
}

pub const CSV_HEADER: &str = "kernel,mode,ranks,makespan,wait_pct,speedup,comparisons,bytes";

/// Render rows as CSV (header plus one line per run).
pub fn to_csv(rows: &[RunMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Plain-text summary table.
pub fn summary_table(rows: &[RunMetrics]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:<16} {:>5} {:>14} {:>9} {:>9} {:>12} {:>12}\n",
        "kernel", "mode", "ranks", "makespan", "wait%", "speedup", "comparisons", "bytes"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:<16} {:>5} {:>14.1} {:>8.1}% {:>9.2} {:>12} {:>12}\n",
            r.kernel,
            r.mode.to_string(),
            r.ranks,
            r.makespan,
            r.wait_pct * 100.0,
            r.speedup,
            r.comparisons,
            r.bytes
        ));
    }
    out
}

/// Run every (rank count x mode) combination of the spec, validating each
/// run against the sequential oracle.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<Vec<RunMetrics>> {
    spec.validate()?;
    run_benchmark_modes(spec, &[FlushMode::Blocking, FlushMode::LatencyHiding])
}

pub fn run_benchmark_modes(spec: &BenchmarkSpec, modes: &[FlushMode]) -> Result<Vec<RunMetrics>> {
    spec.validate()?;
    let expected = sequential_oracle(spec);
    let mut rows = Vec::new();
    for &mode in modes {
        // The single-rank reference for speedup, reused when requested.
        let reference = execute_run(spec, mode, 1, &expected)?;
        let ref_makespan = reference.makespan;
        for &ranks in &spec.ranks {
            let mut metrics = if ranks == 1 {
                reference.clone()
            } else {
                execute_run(spec, mode, ranks, &expected)?
            };
            metrics.speedup = if metrics.makespan > 0.0 {
                ref_makespan / metrics.makespan
            } else {
                1.0
            };
            rows.push(metrics);
        }
    }
    Ok(rows)
}

/// Oracle-only check of one (mode, ranks) run.
pub fn verify_run(spec: &BenchmarkSpec, mode: FlushMode, ranks: usize) -> Result<()> {
    spec.validate()?;
    let expected = sequential_oracle(spec);
    execute_run(spec, mode, ranks, &expected).map(|_| ())
}

fn execute_run(
    spec: &BenchmarkSpec,
    mode: FlushMode,
    ranks: usize,
    expected: &[Scalar],
) -> Result<RunMetrics> {
    let mut cfg = RuntimeConfig::new(ranks, mode);
    cfg.model = spec.model;
    cfg.flush_threshold = spec.flush_threshold;
    let mut rt = Runtime::new(cfg)?;
    let got = match spec.kernel {
        Kernel::Stencil3 => stencil3_program(&mut rt, spec)?,
        Kernel::Jacobi => jacobi_program(&mut rt, spec)?,
        Kernel::JacobiStencil => jacobi_stencil_program(&mut rt, spec)?,
        Kernel::Elementwise => elementwise_program(&mut rt, spec)?,
    };
    compare_to_oracle(spec, mode, ranks, &got, expected)?;

    let makespan = rt.transport().makespan();
    let per_rank: Vec<RankMetrics> = (0..ranks)
        .map(|r| RankMetrics {
            wait: rt.transport().wait_time(r),
            compute: rt.transport().compute_time(r),
            finish: rt.transport().now(r),
        })
        .collect();
    let wait_pct = if makespan > 0.0 {
        per_rank.iter().map(|m| m.wait / makespan).sum::<f64>() / ranks as f64
    } else {
        0.0
    };
    Ok(RunMetrics {
        kernel: spec.kernel.name(),
        mode,
        ranks,
        per_rank,
        makespan,
        wait_pct,
        speedup: 1.0,
        comparisons: rt.deps().comparison_count(),
        messages: rt.transport().messages_sent,
        bytes: rt.transport().bytes_sent,
    })
}

fn compare_to_oracle(
    spec: &BenchmarkSpec,
    mode: FlushMode,
    ranks: usize,
    got: &[Scalar],
    expected: &[Scalar],
) -> Result<()> {
    if got.len() != expected.len() {
        return Err(Error::OracleMismatch(format!(
            "{} {} ranks={}: produced {} values, oracle has {}",
            spec.kernel.name(),
            mode,
            ranks,
            got.len(),
            expected.len()
        )));
    }
    let mut diffs = Vec::new();
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
            diffs.push(format!("  [{i}] got {g}, expected {e}"));
            if diffs.len() >= 10 {
                diffs.push("  ...".into());
                break;
            }
        }
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(Error::OracleMismatch(format!(
            "{} {} ranks={} disagrees with the sequential oracle:\n{}",
            spec.kernel.name(),
            mode,
            ranks,
            diffs.join("\n")
        )))
    }
}

/// Evaluate the kernel with plain in-memory arrays, in program order; the
/// ground truth every run is compared against.
pub fn sequential_oracle(spec: &BenchmarkSpec) -> Vec<Scalar> {
    match spec.kernel {
        Kernel::Stencil3 => stencil3_oracle(spec),
        Kernel::Jacobi => jacobi_oracle(spec),
        Kernel::JacobiStencil => jacobi_stencil_oracle(spec),
        Kernel::Elementwise => elementwise_oracle(spec),
    }
}

/// Sub-view-blocks per rank of a view under the spec's layout; the greedy
/// blocking only pays off when blocks outnumber ranks.
pub fn sub_blocks_per_rank(view: &ArrayView, ranks: usize) -> Vec<usize> {
    let mut counts = vec![0usize; ranks];
    for vb in crate::layout::decompose(view) {
        for sub in vb.subs {
            counts[sub.owner] += 1;
        }
    }
    counts
}

// --- stencil3 ---------------------------------------------------------

fn stencil3_data(spec: &BenchmarkSpec) -> Vec<i64> {
    (1..=spec.size as i64).collect()
}

fn stencil3_program(rt: &mut Runtime, spec: &BenchmarkSpec) -> Result<Vec<Scalar>> {
    let n = spec.size;
    let m = rt.array_i64(&[n], &[spec.block], &stencil3_data(spec))?;
    let out = rt.empty(&[n], &[spec.block], Dtype::I64)?;
    let a = m.slice(&[DimSlice::new(2, n, 1)])?;
    let b = m.slice(&[DimSlice::new(0, n - 2, 1)])?;
    let c = out.slice(&[DimSlice::new(1, n - 1, 1)])?;
    for _ in 0..spec.iterations {
        rt.record_ufunc(&UfuncSpec::add(), &c, &[a.clone().into(), b.clone().into()])?;
    }
    rt.read_elements(&out)
}

fn stencil3_oracle(spec: &BenchmarkSpec) -> Vec<Scalar> {
    let n = spec.size;
    let m = stencil3_data(spec);
    let mut out = vec![0i64; n];
    for _ in 0..spec.iterations {
        for i in 0..n - 2 {
            out[i + 1] = m[i + 2] + m[i];
        }
    }
    out.into_iter().map(Scalar::I64).collect()
}

// --- elementwise ------------------------------------------------------

fn elementwise_inputs(spec: &BenchmarkSpec) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = (0..spec.size).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b = (0..spec.size).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (a, b)
}

fn elementwise_program(rt: &mut Runtime, spec: &BenchmarkSpec) -> Result<Vec<Scalar>> {
    let n = spec.size;
    let bs = [spec.block];
    let (adata, bdata) = elementwise_inputs(spec);
    let a = rt.array_f64(&[n], &bs, &adata)?;
    let b = rt.array_f64(&[n], &bs, &bdata)?;
    let c = rt.empty(&[n], &bs, Dtype::F64)?;
    let d = rt.empty(&[n], &bs, Dtype::F64)?;
    for _ in 0..spec.iterations {
        rt.record_ufunc(&UfuncSpec::mul(), &c, &[a.clone().into(), b.clone().into()])?;
        rt.record_ufunc(&UfuncSpec::add(), &d, &[c.clone().into(), a.clone().into()])?;
        rt.record_ufunc(&UfuncSpec::mul(), &a, &[d.clone().into(), Scalar::F64(0.5).into()])?;
    }
    let mut out = rt.read_elements(&c)?;
    out.extend(rt.read_elements(&d)?);
    out.extend(rt.read_elements(&a)?);
    Ok(out)
}

fn elementwise_oracle(spec: &BenchmarkSpec) -> Vec<Scalar> {
    let n = spec.size;
    let (mut a, b) = elementwise_inputs(spec);
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for _ in 0..spec.iterations {
        for i in 0..n {
            c[i] = a[i] * b[i];
        }
        for i in 0..n {
            d[i] = c[i] + a[i];
        }
        for i in 0..n {
            a[i] = d[i] * 0.5;
        }
    }
    c.into_iter().chain(d).chain(a).map(Scalar::F64).collect()
}

// --- jacobi stencil ---------------------------------------------------

const JACOBI_STENCIL_EPSILON: f64 = 1e-9;

fn jacobi_stencil_program(rt: &mut Runtime, spec: &BenchmarkSpec) -> Result<Vec<Scalar>> {
    let n = spec.size;
    let full_n = n + 2;
    let bs2 = [spec.block, spec.block];
    // Fixed hot boundary, cold interior.
    let mut init = vec![0.0f64; full_n * full_n];
    for i in 0..full_n {
        for j in 0..full_n {
            if i == 0 || j == 0 || i == full_n - 1 || j == full_n - 1 {
                init[i * full_n + j] = 1.0;
            }
        }
    }
    let full = rt.array_f64(&[full_n, full_n], &bs2, &init)?;
    let cells = full.slice(&[DimSlice::new(1, n + 1, 1), DimSlice::new(1, n + 1, 1)])?;
    let up = full.slice(&[DimSlice::new(0, n, 1), DimSlice::new(1, n + 1, 1)])?;
    let down = full.slice(&[DimSlice::new(2, n + 2, 1), DimSlice::new(1, n + 1, 1)])?;
    let left = full.slice(&[DimSlice::new(1, n + 1, 1), DimSlice::new(0, n, 1)])?;
    let right = full.slice(&[DimSlice::new(1, n + 1, 1), DimSlice::new(2, n + 2, 1)])?;
    let work = rt.empty(&[n, n], &bs2, Dtype::F64)?;
    let t1 = rt.empty(&[n, n], &bs2, Dtype::F64)?;
    let t2 = rt.empty(&[n, n], &bs2, Dtype::F64)?;
    let diff = rt.empty(&[n, n], &bs2, Dtype::F64)?;

    for _ in 0..spec.iterations {
        rt.record_copy(&work, &cells)?;
        rt.record_ufunc(&UfuncSpec::add(), &t1, &[up.clone().into(), down.clone().into()])?;
        rt.record_ufunc(&UfuncSpec::add(), &t2, &[t1.clone().into(), left.clone().into()])?;
        rt.record_ufunc(&UfuncSpec::add(), &t1, &[t2.clone().into(), right.clone().into()])?;
        rt.record_ufunc(&UfuncSpec::mul(), &t2, &[t1.clone().into(), Scalar::F64(0.2).into()])?;
        rt.record_ufunc(&UfuncSpec::add(), &work, &[work.clone().into(), t2.clone().into()])?;
        rt.record_ufunc(&UfuncSpec::sub(), &diff, &[cells.clone().into(), work.clone().into()])?;
        rt.record_ufunc(&UfuncSpec::abs(), &diff, &[diff.clone().into()])?;
        // The convergence read forces a flush every iteration.
        let delta: f64 = rt.read_elements(&diff)?.iter().map(|v| v.as_f64()).sum();
        rt.record_copy(&cells, &work)?;
        if delta < JACOBI_STENCIL_EPSILON {
            break;
        }
    }
    let mut out = rt.read_elements(&full)?;
    out.extend(rt.read_elements(&work)?);
    Ok(out)
}

fn jacobi_stencil_oracle(spec: &BenchmarkSpec) -> Vec<Scalar> {
    let n = spec.size;
    let full_n = n + 2;
    let mut full = vec![0.0f64; full_n * full_n];
    for i in 0..full_n {
        for j in 0..full_n {
            if i == 0 || j == 0 || i == full_n - 1 || j == full_n - 1 {
                full[i * full_n + j] = 1.0;
            }
        }
    }
    let idx = |i: usize, j: usize| i * full_n + j;
    let mut work = vec![0.0f64; n * n];
    let mut t1 = vec![0.0f64; n * n];
    let mut t2 = vec![0.0f64; n * n];
    let mut diff = vec![0.0f64; n * n];
    for _ in 0..spec.iterations {
        for i in 0..n {
            for j in 0..n {
                work[i * n + j] = full[idx(i + 1, j + 1)];
            }
        }
        for i in 0..n {
            for j in 0..n {
                t1[i * n + j] = full[idx(i, j + 1)] + full[idx(i + 2, j + 1)];
            }
        }
        for i in 0..n {
            for j in 0..n {
                t2[i * n + j] = t1[i * n + j] + full[idx(i + 1, j)];
            }
        }
        for i in 0..n {
            for j in 0..n {
                t1[i * n + j] = t2[i * n + j] + full[idx(i + 1, j + 2)];
            }
        }
        for v in t2.iter_mut().zip(&t1) {
            *v.0 = v.1 * 0.2;
        }
        for (w, t) in work.iter_mut().zip(&t2) {
            *w += *t;
        }
        for i in 0..n {
            for j in 0..n {
                diff[i * n + j] = (full[idx(i + 1, j + 1)] - work[i * n + j]).abs();
            }
        }
        let delta: f64 = diff.iter().sum();
        for i in 0..n {
            for j in 0..n {
                full[idx(i + 1, j + 1)] = work[i * n + j];
            }
        }
        if delta < JACOBI_STENCIL_EPSILON {
            break;
        }
    }
    full.into_iter().chain(work).map(Scalar::F64).collect()
}

// --- jacobi -----------------------------------------------------------

struct JacobiSetup {
    matrix: Vec<f64>, // n x n, row-major
    rhs: Vec<f64>,
    diag: f64,
}

fn jacobi_setup(spec: &BenchmarkSpec) -> JacobiSetup {
    let n = spec.size;
    let diag = n as f64 + 1.0;
    let mut matrix = vec![1.0f64; n * n];
    for i in 0..n {
        matrix[i * n + i] = diag;
    }
    let rhs = vec![2.0 * n as f64; n];
    JacobiSetup { matrix, rhs, diag }
}

/// The system matrix is distributed by row blocks; the iterate is
/// gathered into a single-block array each iteration (recorded transfers)
/// and re-broadcast as scalar coefficients for the column-wise
/// accumulation of the matrix-vector product.
fn jacobi_program(rt: &mut Runtime, spec: &BenchmarkSpec) -> Result<Vec<Scalar>> {
    let n = spec.size;
    let rb = spec.block;
    let setup = jacobi_setup(spec);
    let a = rt.array_f64(&[n, n], &[rb, n], &setup.matrix)?;
    let b = rt.array_f64(&[n, 1], &[rb, 1], &setup.rhs)?;
    let x = rt.array_f64(&[n, 1], &[rb, 1], &vec![0.0; n])?;
    let gathered = rt.empty(&[n, 1], &[n, 1], Dtype::F64)?;
    let y = rt.empty(&[n, 1], &[rb, 1], Dtype::F64)?;
    let t = rt.empty(&[n, 1], &[rb, 1], Dtype::F64)?;
    let inv_diag = 1.0 / setup.diag;

    for _ in 0..spec.iterations {
        rt.record_copy(&gathered, &x)?;
        let coeffs = rt.read_elements(&gathered)?;
        for (j, coeff) in coeffs.iter().enumerate() {
            let col = a.slice(&[DimSlice::new(0, n, 1), DimSlice::new(j, j + 1, 1)])?;
            if j == 0 {
                rt.record_ufunc(&UfuncSpec::mul(), &y, &[col.into(), (*coeff).into()])?;
            } else {
                rt.record_ufunc(&UfuncSpec::mul(), &t, &[col.into(), (*coeff).into()])?;
                rt.record_ufunc(&UfuncSpec::add(), &y, &[y.clone().into(), t.clone().into()])?;
            }
        }
        // x' = (b - A x)/d + x
        rt.record_ufunc(&UfuncSpec::sub(), &t, &[b.clone().into(), y.clone().into()])?;
        rt.record_ufunc(&UfuncSpec::mul(), &t, &[t.clone().into(), Scalar::F64(inv_diag).into()])?;
        rt.record_ufunc(&UfuncSpec::add(), &x, &[t.clone().into(), x.clone().into()])?;
    }
    rt.read_elements(&x)
}

fn jacobi_oracle(spec: &BenchmarkSpec) -> Vec<Scalar> {
    let n = spec.size;
    let setup = jacobi_setup(spec);
    let mut x = vec![0.0f64; n];
    let mut y = vec![0.0f64; n];
    let mut t = vec![0.0f64; n];
    for _ in 0..spec.iterations {
        let coeffs = x.clone();
        for (j, &coeff) in coeffs.iter().enumerate() {
            if j == 0 {
                for i in 0..n {
                    y[i] = setup.matrix[i * n + j] * coeff;
                }
            } else {
                for i in 0..n {
                    t[i] = setup.matrix[i * n + j] * coeff;
                }
                for i in 0..n {
                    y[i] += t[i];
                }
            }
        }
        for i in 0..n {
            t[i] = setup.rhs[i] - y[i];
        }
        for v in t.iter_mut() {
            *v *= 1.0 / setup.diag;
        }
        for i in 0..n {
            x[i] = t[i] + x[i];
        }
    }
    x.into_iter().map(Scalar::F64).collect()
}
