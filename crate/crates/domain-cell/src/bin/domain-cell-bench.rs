use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use domain_cell::backend::BackendKind;
use domain_cell::bench::{self, BenchConfig, BenchError, Benchmark};
use domain_cell::{DomainAllocator, Executor, Serializer};

#[global_allocator]
static ALLOC: DomainAllocator = DomainAllocator;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Table,
}

/// Measures sandboxed call overhead, domain-heap allocation and a
/// run-length codec across executors and serializers.
#[derive(Debug, Parser)]
#[command(name = "domain-cell-bench", version)]
struct Args {
    /// micro-empty, micro-alloc or codec.
    benchmark: Benchmark,
    /// baseline, inprocess or subprocess.
    #[arg(long, default_value = "inprocess")]
    executor: Executor,
    /// hw, pageperm or null; defaults to the best available.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// layout, layout-fastpath-off or reference-binary.
    #[arg(long, default_value = "layout")]
    serializer: Serializer,
    /// Iterations per measurement, including the 10% warmup.
    #[arg(long)]
    iterations: Option<usize>,
    /// Comma-separated byte counts for the codec (default 2^0..2^21).
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = BenchConfig::new(args.benchmark);
    cfg.executor = args.executor;
    cfg.serializer = args.serializer;
    cfg.seed = args.seed;
    if let Some(b) = args.backend {
        cfg.backend = b;
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    if let Some(s) = args.sizes {
        cfg.sizes = s;
    }
    match bench::run(&cfg) {
        Ok(records) => {
            if cfg.benchmark == Benchmark::Codec {
                eprintln!("codec: {}", domain_cell::fixtures::codec().name());
            }
            let out = match args.format {
                Format::Csv => bench::to_csv(&records),
                Format::Table => bench::to_table(&records),
            };
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e @ BenchError::BackendUnavailable(_)) => {
            eprintln!("domain-cell-bench: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("domain-cell-bench: {e}");
            ExitCode::FAILURE
        }
    }
}
