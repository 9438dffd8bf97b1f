use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use servicehub::endpoint::AccessOrder;
use servicehub::sim::SimConfig;
use servicehub_bench::{
    connect, emit_csv, raise_priority, run_attr_latency_client, run_attr_latency_direct, run_client_latency,
    run_ep_latency, run_throughput, BenchError, BenchRecord, Direction, Kind, SimBench, Variant, WorkloadSpec,
};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    EpLatency,
    ClientLatency,
    Throughput,
    AttrLatency,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DirectionArg {
    R,
    W,
    Wr,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Byte,
    Word32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OrderArg {
    Sequential,
    Scattered,
}

/// Benchmarks the hub: endpoint-direct and client latency, stream
/// throughput, driver attribute latency.
#[derive(Debug, Parser)]
#[command(name = "hubbench", version)]
struct Args {
    kind: KindArg,
    /// Array lengths, or block sizes in bytes for throughput.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<u64>>,
    /// Samples per cell; runs per cell for throughput.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, value_enum, default_value = "r")]
    direction: DirectionArg,
    #[arg(long, value_enum, default_value = "byte")]
    variant: VariantArg,
    /// Daemon address (`host:port`). attr-latency without a target measures
    /// the endpoint directly.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Charge simulated delays to a virtual clock and time with it.
    #[arg(long)]
    virtual_clock: bool,
    /// Try nice -20 and SCHED_FIFO; failure only warns.
    #[arg(long)]
    realtime_priority: bool,
    #[arg(long, default_value_t = servicehub_bench::workload::DEFAULT_WARMUP)]
    warmup: usize,
    /// Blocks per throughput run.
    #[arg(long, default_value_t = servicehub_bench::workload::DEFAULT_BLOCKS)]
    blocks: u32,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "raw0")]
    attribute: String,
    #[arg(long, default_value_t = 32)]
    width: u32,
    #[arg(long, value_enum, default_value = "sequential")]
    order: OrderArg,
    /// JSON backend settings for in-process cells (same schema as the
    /// daemon's `backend` section).
    #[arg(long)]
    sim_config: Option<PathBuf>,
}

fn spec(args: &Args) -> WorkloadSpec {
    let kind = match args.kind {
        KindArg::EpLatency => Kind::EpLatency,
        KindArg::ClientLatency => Kind::ClientLatency,
        KindArg::Throughput => Kind::Throughput,
        KindArg::AttrLatency => Kind::AttrLatency,
    };
    let mut spec = WorkloadSpec::new(kind)
        .repetitions(args.reps)
        .warmup(args.warmup)
        .blocks(args.blocks)
        .direction(match args.direction {
            DirectionArg::R => Direction::Read,
            DirectionArg::W => Direction::Write,
            DirectionArg::Wr => Direction::WriteRead,
        })
        .variant(match args.variant {
            VariantArg::Byte => Variant::Byte,
            VariantArg::Word32 => Variant::Word32,
        });
    if let Some(sizes) = &args.sizes {
        spec.sizes = sizes.clone();
    }
    if let Some(ep) = &args.endpoint {
        spec.endpoint = ep.clone();
    }
    spec.attribute = args.attribute.clone();
    spec.width = args.width;
    spec.order = match args.order {
        OrderArg::Sequential => AccessOrder::Sequential,
        OrderArg::Scattered => AccessOrder::Scattered,
    };
    spec
}

fn sim_bench(args: &Args) -> Result<SimBench, BenchError> {
    let config = match &args.sim_config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<SimConfig>(&text)
                .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?
        }
        None => SimConfig::default(),
    };
    SimBench::new(config, args.virtual_clock)
}

fn need_target(args: &Args) -> Result<&str, BenchError> {
    args.target.as_deref().ok_or_else(|| BenchError::Config("--target is required for this benchmark".into()))
}

async fn run(args: &Args) -> Result<Vec<BenchRecord>, BenchError> {
    let spec = spec(args);
    spec.validate()?;
    match spec.kind {
        Kind::EpLatency => run_ep_latency(&spec, &sim_bench(args)?),
        Kind::AttrLatency if args.target.is_none() => run_attr_latency_direct(&spec, &sim_bench(args)?),
        Kind::AttrLatency => run_attr_latency_client(&spec, &connect(need_target(args)?).await?).await,
        Kind::ClientLatency => run_client_latency(&spec, &connect(need_target(args)?).await?).await,
        Kind::Throughput => {
            let cells = run_throughput(&spec, &connect(need_target(args)?).await?).await?;
            println!("block_size,blocks,variant,direction,mean_mbit_s,crc");
            let mut records = Vec::new();
            for cell in &cells {
                let crc_ok = cell.runs.iter().all(|r| r.crc_ok());
                println!(
                    "{},{},{:?},{},{:.1},{}",
                    cell.block_size,
                    cell.blocks,
                    cell.variant,
                    cell.direction,
                    cell.mean_mbit_s(),
                    if crc_ok { "ok" } else { "MISMATCH" }
                );
                if !crc_ok {
                    return Err(BenchError::Integrity(format!("checksum mismatch at block size {}", cell.block_size)));
                }
                records.push(cell.record()?);
            }
            Ok(records)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.realtime_priority {
        if let Err(e) = raise_priority() {
            eprintln!("hubbench: realtime priority not available ({e}); continuing");
        }
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    let result = runtime.block_on(run(&args)).and_then(|records| {
        let sibling = emit_csv(&records, &args.out)?;
        for r in &records {
            eprintln!(
                "size {:>8}  mean {:>12.1} ns  std {:>10.1}  median {:>10.1}  q99 {:>10.1}  outliers {}",
                r.size,
                r.mean_ns,
                r.std_ns,
                r.median_ns,
                r.q99_ns,
                r.outliers.len()
            );
        }
        eprintln!("wrote {} and {}", args.out.display(), sibling.display());
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hubbench: {e}");
            ExitCode::from(match e {
                BenchError::Config(_) => 2,
                BenchError::Unreachable { .. } => 3,
                _ => 1,
            })
        }
    }
}
