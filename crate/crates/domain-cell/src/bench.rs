//! Desk-scale measurements: empty-call latency, allocator latency and the
//! run-length codec over input sizes, per executor and serializer.
//!
//! Every measurement discards the first 10% of iterations as warmup and
//! reports mean, population standard deviation and median in nanoseconds.

use std::alloc::{GlobalAlloc, Layout, System};
use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use domain_cell_core::domain::{DomainConfig, Sdi};
use rand::{Rng, RngCore, SeedableRng};
use rand_xorshift::XorShiftRng;

use crate::backend::{self, BackendKind};
use crate::facade::{manager_for, sdi_from_name, Executor, SandboxSpec, Serializer, WrappedFunction};
use crate::fixtures::{self, CodecImpl};
use crate::heap::DomainAllocator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Benchmark {
    MicroEmpty,
    MicroAlloc,
    Codec,
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [Self::MicroEmpty, Self::MicroAlloc, Self::Codec];

    pub const fn name(self) -> &'static str {
        match self {
            Self::MicroEmpty => "micro-empty",
            Self::MicroAlloc => "micro-alloc",
            Self::Codec => "codec",
        }
    }

    /// Desk-scale default iteration count.
    pub const fn default_iterations(self) -> usize {
        match self {
            Self::MicroEmpty | Self::MicroAlloc => 100_000,
            Self::Codec => 1_000,
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| format!("unknown benchmark {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub benchmark: Benchmark,
    pub executor: Executor,
    pub backend: BackendKind,
    pub serializer: Serializer,
    pub iterations: usize,
    /// Input sizes in bytes; only the codec uses more than the first.
    pub sizes: Vec<usize>,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(benchmark: Benchmark) -> Self {
        Self {
            benchmark,
            executor: Executor::InProcess,
            backend: backend::probe(),
            serializer: Serializer::Layout,
            iterations: benchmark.default_iterations(),
            sizes: (0..=21).map(|e| 1 << e).collect(),
            seed: 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{0} backend is not available on this machine")]
    BackendUnavailable(BackendKind),
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("the codec benchmark needs at least one size")]
    NoSizes,
    #[error("{0} does not support the {1} executor")]
    Unsupported(Benchmark, Executor),
    #[error("sandboxed call faulted: {0}")]
    Fault(String),
    #[error("{executor} produced a different codec output than the plain call at size {size}")]
    OutputMismatch { executor: Executor, size: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    /// `micro-empty`, `micro-alloc:alloc`, `micro-alloc:free`,
    /// `codec:compress` or `codec:uncompress`.
    pub benchmark: String,
    pub executor: Executor,
    pub backend: BackendKind,
    pub serializer: Serializer,
    pub size: usize,
    /// Measured iterations, warmup excluded.
    pub iterations: usize,
    pub mean_ns: f64,
    pub stddev_ns: f64,
    pub median_ns: f64,
    /// Rights-register writes per call (hardware backend only).
    pub rights_writes: f64,
    /// Which codec served a codec record.
    pub codec: Option<CodecImpl>,
}

/// Mean, population standard deviation and median.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub stddev: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Summary {
        if samples.is_empty() {
            return Summary { mean: 0.0, stddev: 0.0, median: 0.0 };
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) { (sorted[mid - 1] + sorted[mid]) / 2.0 } else { sorted[mid] };
        Summary { mean, stddev: var.sqrt(), median }
    }
}

/// Number of leading iterations thrown away.
pub fn warmup_of(iterations: usize) -> usize {
    iterations / 10
}

/// Times `iterations` calls of `f` and summarizes the ones after warmup.
pub fn time_each(iterations: usize, mut f: impl FnMut()) -> (Summary, usize) {
    let warm = warmup_of(iterations);
    for _ in 0..warm {
        f();
    }
    let n = iterations - warm;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let t = Instant::now();
        f();
        samples.push(t.elapsed().as_nanos() as f64);
    }
    (Summary::of(&samples), n)
}

fn check(cfg: &BenchConfig) -> Result<(), BenchError> {
    if cfg.iterations == 0 {
        return Err(BenchError::NoIterations);
    }
    if cfg.backend == BackendKind::HardwareKeys && !backend::hardware_available() {
        return Err(BenchError::BackendUnavailable(cfg.backend));
    }
    Ok(())
}

fn spec(name: &str, cfg: &BenchConfig) -> SandboxSpec {
    SandboxSpec::new(sdi_from_name(name)).backend(cfg.backend).executor(cfg.executor).serializer(cfg.serializer)
}

pub fn run(cfg: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    match cfg.benchmark {
        Benchmark::MicroEmpty => run_micro_empty(cfg).map(|r| vec![r]),
        Benchmark::MicroAlloc => run_micro_alloc(cfg),
        Benchmark::Codec => run_codec(cfg),
    }
}

pub fn run_micro_empty(cfg: &BenchConfig) -> Result<BenchRecord, BenchError> {
    check(cfg)?;
    let wf: WrappedFunction<(), ()> = WrappedFunction::new(spec("bench::empty", cfg), |_| {});
    let fault = std::cell::Cell::new(None);
    let writes_before = backend::thread_rights_writes();
    let (s, n) = time_each(cfg.iterations, || {
        if let Err(f) = wf.invoke(&mut ()) {
            fault.set(Some(f));
        }
    });
    let writes = backend::thread_rights_writes() - writes_before;
    wf.discard();
    if let Some(f) = fault.get() {
        return Err(BenchError::Fault(f.to_string()));
    }
    Ok(BenchRecord {
        benchmark: cfg.benchmark.name().into(),
        executor: cfg.executor,
        backend: cfg.backend,
        serializer: cfg.serializer,
        size: 0,
        iterations: n,
        mean_ns: s.mean,
        stddev_ns: s.stddev,
        median_ns: s.median,
        rights_writes: writes as f64 / cfg.iterations as f64,
        codec: None,
    })
}

/// Allocation sizes for the allocator benchmark: uniform over 0..=4096.
pub fn alloc_sizes(seed: u64, n: usize) -> Vec<usize> {
    let mut rng = XorShiftRng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..=4096)).collect()
}

const ALLOC_BATCH: usize = 64;

// Allocates and frees in batches and records per-operation nanoseconds for
// each batch. Zero-byte requests become one byte.
fn alloc_free_batches<A: GlobalAlloc>(a: &A, sizes: &[usize], allocs: &mut Vec<f64>, frees: &mut Vec<f64>) {
    let mut ptrs = [std::ptr::null_mut::<u8>(); ALLOC_BATCH];
    for chunk in sizes.chunks(ALLOC_BATCH) {
        let t = Instant::now();
        for (p, &sz) in ptrs.iter_mut().zip(chunk) {
            *p = unsafe { a.alloc(Layout::from_size_align_unchecked(sz.max(1), 8)) };
        }
        let mid = Instant::now();
        for (p, &sz) in ptrs.iter().zip(chunk) {
            unsafe { a.dealloc(black_box(*p), Layout::from_size_align_unchecked(sz.max(1), 8)) };
        }
        let end = Instant::now();
        let k = chunk.len() as f64;
        allocs.push((mid - t).as_nanos() as f64 / k);
        frees.push((end - mid).as_nanos() as f64 / k);
    }
}

/// Baseline measures the system allocator; in-process measures the domain
/// heap through the interposer while a domain runs.
pub fn run_micro_alloc(cfg: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    check(cfg)?;
    let sizes = alloc_sizes(cfg.seed, cfg.iterations);
    let warm = warmup_of(sizes.len()).next_multiple_of(ALLOC_BATCH).min(sizes.len());
    let batches = sizes.len().div_ceil(ALLOC_BATCH);
    let mut allocs = Vec::with_capacity(batches);
    let mut frees = Vec::with_capacity(batches);
    match cfg.executor {
        Executor::Baseline => {
            alloc_free_batches(&System, &sizes[..warm], &mut Vec::new(), &mut Vec::new());
            alloc_free_batches(&System, &sizes[warm..], &mut allocs, &mut frees);
        }
        Executor::InProcess => {
            let mgr = manager_for(Some(cfg.backend));
            let sdi = Sdi(sdi_from_name("bench::alloc"));
            let udi = mgr.init_domain(sdi, DomainConfig::default()).map_err(|e| BenchError::Fault(e.to_string()))?;
            let (a, f) = (&mut allocs, &mut frees);
            let ran = mgr.run(udi, || {
                alloc_free_batches(&DomainAllocator, &sizes[..warm], &mut Vec::new(), &mut Vec::new());
                // The sample vectors were sized in the parent; pushing stays
                // within capacity.
                alloc_free_batches(&DomainAllocator, &sizes[warm..], a, f);
            });
            let _ = mgr.discard_domain(udi);
            ran.map_err(|e| BenchError::Fault(e.to_string()))?;
        }
        Executor::Subprocess => return Err(BenchError::Unsupported(cfg.benchmark, cfg.executor)),
    }
    let measured = sizes.len() - warm;
    let record = |name: &str, samples: &[f64]| {
        let s = Summary::of(samples);
        BenchRecord {
            benchmark: name.into(),
            executor: cfg.executor,
            backend: cfg.backend,
            serializer: cfg.serializer,
            size: 4096,
            iterations: measured,
            mean_ns: s.mean,
            stddev_ns: s.stddev,
            median_ns: s.median,
            rights_writes: 0.0,
            codec: None,
        }
    };
    Ok(vec![record("micro-alloc:alloc", &allocs), record("micro-alloc:free", &frees)])
}

/// Random codec input. Half of the bytes repeat their predecessor so the
/// stream has runs to compress.
pub fn codec_input(seed: u64, size: usize) -> Vec<u8> {
    let mut rng = XorShiftRng::seed_from_u64(seed ^ (size as u64).rotate_left(32));
    let mut v = vec![0u8; size];
    rng.fill_bytes(&mut v);
    for i in 1..size {
        if v[i] & 1 == 0 {
            v[i] = v[i - 1];
        }
    }
    v
}

fn compress_glue(a: &mut (Vec<u8>,)) -> Vec<u8> {
    fixtures::rle_compress(&a.0)
}

fn uncompress_glue(a: &mut (Vec<u8>,)) -> Option<Vec<u8>> {
    fixtures::rle_uncompress(&a.0)
}

pub fn run_codec(cfg: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    check(cfg)?;
    if cfg.sizes.is_empty() {
        return Err(BenchError::NoSizes);
    }
    let big = DomainConfig::default().with_heap_size(64 << 20);
    let compress = WrappedFunction::new(spec("bench::compress", cfg).config(big), compress_glue);
    let uncompress = WrappedFunction::new(spec("bench::uncompress", cfg).config(big), uncompress_glue);
    let mut out = Vec::new();
    let result = (|| {
        for &size in &cfg.sizes {
            let input = codec_input(cfg.seed, size);
            let expect_c = fixtures::rle_compress(&input);
            let mut args = (input,);
            let got = compress.invoke(&mut args).map_err(|f| BenchError::Fault(f.to_string()))?;
            if got != expect_c {
                return Err(BenchError::OutputMismatch { executor: cfg.executor, size });
            }
            let mut fault = None;
            let (s, n) = time_each(cfg.iterations, || {
                if let Err(f) = compress.invoke(&mut args) {
                    fault = Some(f);
                }
            });
            out.push(codec_record(cfg, "codec:compress", size, s, n));

            let (input,) = args;
            let mut args = (expect_c,);
            let got = uncompress.invoke(&mut args).map_err(|f| BenchError::Fault(f.to_string()))?;
            if got.as_ref() != Some(&input) {
                return Err(BenchError::OutputMismatch { executor: cfg.executor, size });
            }
            let (s, n) = time_each(cfg.iterations, || {
                if let Err(f) = uncompress.invoke(&mut args) {
                    fault = Some(f);
                }
            });
            out.push(codec_record(cfg, "codec:uncompress", size, s, n));
            if let Some(f) = fault {
                return Err(BenchError::Fault(f.to_string()));
            }
        }
        Ok(())
    })();
    compress.discard();
    uncompress.discard();
    result.map(|()| out)
}

fn codec_record(cfg: &BenchConfig, name: &str, size: usize, s: Summary, n: usize) -> BenchRecord {
    BenchRecord {
        benchmark: name.into(),
        executor: cfg.executor,
        backend: cfg.backend,
        serializer: cfg.serializer,
        size,
        iterations: n,
        mean_ns: s.mean,
        stddev_ns: s.stddev,
        median_ns: s.median,
        rights_writes: 0.0,
        codec: Some(fixtures::codec()),
    }
}

pub const CSV_HEADER: &str = "benchmark,executor,backend,serializer,size,iterations,mean_ns,stddev_ns,rights_writes";

pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{:.1},{:.1},{}\n",
            r.benchmark,
            r.executor,
            r.backend,
            r.serializer,
            r.size,
            r.iterations,
            r.mean_ns,
            r.stddev_ns,
            r.rights_writes
        ));
    }
    s
}

/// Aligned table sorted by (benchmark, size, executor), with the median and
/// the ratio to the baseline record of the same benchmark and size when one
/// is present.
pub fn to_table(records: &[BenchRecord]) -> String {
    let mut rows: Vec<&BenchRecord> = records.iter().collect();
    rows.sort_by(|a, b| {
        (a.benchmark.as_str(), a.size, a.executor.name()).cmp(&(b.benchmark.as_str(), b.size, b.executor.name()))
    });
    let baseline = |r: &BenchRecord| {
        records
            .iter()
            .find(|b| b.executor == Executor::Baseline && b.benchmark == r.benchmark && b.size == r.size)
            .map(|b| b.mean_ns)
    };
    let mut s = format!(
        "{:<18} {:<10} {:<8} {:<19} {:>8} {:>10} {:>12} {:>12} {:>12} {:>7} {:>6} {:>8}\n",
        "benchmark",
        "executor",
        "backend",
        "serializer",
        "size",
        "iters",
        "mean_ns",
        "stddev_ns",
        "median_ns",
        "writes",
        "ratio",
        "codec"
    );
    for r in rows {
        let ratio = baseline(r).filter(|b| *b > 0.0).map_or("-".to_string(), |b| format!("{:.2}", r.mean_ns / b));
        s.push_str(&format!(
            "{:<18} {:<10} {:<8} {:<19} {:>8} {:>10} {:>12.1} {:>12.1} {:>12.1} {:>7} {:>6} {:>8}\n",
            r.benchmark,
            r.executor.name(),
            r.backend.name(),
            r.serializer.name(),
            r.size,
            r.iterations,
            r.mean_ns,
            r.stddev_ns,
            r.median_ns,
            r.rights_writes,
            ratio,
            r.codec.map_or("-", CodecImpl::name)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_matches_hand_computation() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert!((s.stddev - 1.25f64.sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[5.0, 1.0, 3.0]).median, 3.0);
    }

    #[test]
    fn seeded_inputs_repeat() {
        assert_eq!(alloc_sizes(3, 1000), alloc_sizes(3, 1000));
        assert_ne!(alloc_sizes(3, 1000), alloc_sizes(4, 1000));
        assert!(alloc_sizes(9, 10_000).iter().all(|&s| s <= 4096));
        assert_eq!(codec_input(5, 4096), codec_input(5, 4096));
    }

    #[test]
    fn csv_header_and_row_shape() {
        let r = BenchRecord {
            benchmark: "micro-empty".into(),
            executor: Executor::Baseline,
            backend: BackendKind::Null,
            serializer: Serializer::Layout,
            size: 0,
            iterations: 9,
            mean_ns: 12.0,
            stddev_ns: 0.5,
            median_ns: 12.0,
            rights_writes: 0.0,
            codec: None,
        };
        let csv = to_csv(&[r]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("micro-empty,baseline,null,layout,0,9,12.0,0.5,0"));
    }

    #[test]
    fn table_sorts_and_computes_ratio() {
        let mk = |e: Executor, size: usize, mean: f64| BenchRecord {
            benchmark: "codec:compress".into(),
            executor: e,
            backend: BackendKind::Null,
            serializer: Serializer::Layout,
            size,
            iterations: 1,
            mean_ns: mean,
            stddev_ns: 0.0,
            median_ns: mean,
            rights_writes: 0.0,
            codec: Some(CodecImpl::Builtin),
        };
        let t = to_table(&[
            mk(Executor::InProcess, 2, 30.0),
            mk(Executor::Baseline, 2, 10.0),
            mk(Executor::Baseline, 1, 5.0),
        ]);
        let lines: Vec<&str> = t.lines().skip(1).collect();
        assert!(lines[0].contains(" 1 ") && lines[0].contains("baseline"));
        assert!(lines[1].contains("baseline") && lines[1].contains("1.00"));
        assert!(lines[2].contains("inprocess") && lines[2].contains("3.00"));
    }
}
