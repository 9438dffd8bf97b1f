//! Benchmark cells: endpoint-direct, client RPC, streaming throughput and
//! driver attribute latency.

use std::sync::Arc;
use std::time::{Duration, Instant};

use servicehub::clock::{Timing, VirtualClock};
use servicehub::endpoint::{make_endpoints, parse_device_tree, EndpointDirectory, PlatformEndpoint, SysfsEndpoint, Width};
use servicehub::proto::attr_service_client::AttrServiceClient;
use servicehub::proto::register_service_client::RegisterServiceClient;
use servicehub::proto::stream_block::Payload;
use servicehub::proto::stream_service_client::StreamServiceClient;
use servicehub::proto::{AttrRequest, RegisterRequest, StreamBlock, StreamReadRequest};
use servicehub::services::stream::{fill_block, make_block};
use servicehub::sim::{SimBackend, SimConfig, DEFAULT_SIM_TREE};
use tonic::transport::{Channel, Endpoint};

use crate::stats::BenchRecord;
use crate::workload::{BenchError, Direction, Kind, Variant, WorkloadSpec};

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);

fn expect_kind(spec: &WorkloadSpec, kinds: &[Kind]) -> Result<(), BenchError> {
    spec.validate()?;
    if !kinds.contains(&spec.kind) {
        return Err(BenchError::Config(format!("{:?} workload given to a {:?} runner", spec.kind, kinds)));
    }
    Ok(())
}

/// Values written by size-`n` cells: distinct, within `width`.
pub fn write_pattern(n: usize, width: Width) -> Vec<u64> {
    (0..n as u64).map(|i| i.wrapping_mul(0x9e37_79b9_7f4a_7c15) & width.max_value()).collect()
}

/// Measures elapsed time on the wall clock or on a virtual clock.
#[derive(Debug, Clone)]
enum Stopwatch {
    Wall,
    Virtual(Arc<VirtualClock>),
}

impl Stopwatch {
    fn time<T>(&self, f: impl FnOnce() -> T) -> (T, u64) {
        match self {
            Stopwatch::Wall => {
                let t0 = Instant::now();
                let out = f();
                (out, t0.elapsed().as_nanos() as u64)
            }
            Stopwatch::Virtual(clock) => {
                use servicehub::clock::Clock;
                let t0 = clock.now_ns();
                let out = f();
                (out, clock.now_ns() - t0)
            }
        }
    }
}

/// In-process simulated hardware for endpoint-direct cells.
pub struct SimBench {
    endpoints: EndpointDirectory,
    backend: Arc<SimBackend>,
    stopwatch: Stopwatch,
}

impl SimBench {
    /// Builds the default simulated tree. With `virtual_clock` all charged
    /// delays go to a virtual clock, which also serves as the timing source.
    pub fn new(config: SimConfig, virtual_clock: bool) -> Result<Self, BenchError> {
        let nodes = parse_device_tree(DEFAULT_SIM_TREE).map_err(|e| BenchError::Config(e.to_string()))?;
        let (timing, stopwatch) = if virtual_clock {
            let clock = Arc::new(VirtualClock::new());
            (Timing::Virtual(clock.clone()), Stopwatch::Virtual(clock))
        } else {
            (Timing::Realtime, Stopwatch::Wall)
        };
        let backend =
            Arc::new(SimBackend::with_timing(config, &nodes, timing).map_err(|e| BenchError::Config(e.to_string()))?);
        let endpoints = make_endpoints(&nodes, backend.clone())?;
        Ok(Self { endpoints, backend, stopwatch })
    }

    pub fn endpoints(&self) -> &EndpointDirectory {
        &self.endpoints
    }

    pub fn backend(&self) -> &Arc<SimBackend> {
        &self.backend
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self.stopwatch, Stopwatch::Virtual(_))
    }

    fn platform(&self, label: &str) -> Result<&Arc<PlatformEndpoint>, BenchError> {
        self.endpoints.platform(label).ok_or_else(|| BenchError::Config(format!("no register endpoint `{label}`")))
    }

    fn sysfs(&self, label: &str) -> Result<&Arc<SysfsEndpoint>, BenchError> {
        self.endpoints.sysfs(label).ok_or_else(|| BenchError::Config(format!("no driver endpoint `{label}`")))
    }
}

/// Endpoint API latency per size; no network involved.
pub fn run_ep_latency(spec: &WorkloadSpec, bench: &SimBench) -> Result<Vec<BenchRecord>, BenchError> {
    expect_kind(spec, &[Kind::EpLatency])?;
    let ep = bench.platform(&spec.endpoint)?;
    let width = Width::from_bits(spec.width)?;
    let mut records = Vec::with_capacity(spec.sizes.len());
    for &size in &spec.sizes {
        let n = size as usize;
        let values = write_pattern(n, width);
        let call = || -> Result<(), BenchError> {
            match spec.direction {
                Direction::Read => ep.read_array(0, width, n, spec.order).map(drop)?,
                Direction::Write => ep.write_array(0, width, &values, spec.order)?,
                Direction::WriteRead => ep.write_read_array(0, width, &values, spec.order).map(drop)?,
            }
            Ok(())
        };
        for _ in 0..spec.warmup {
            call()?;
        }
        let mut samples = Vec::with_capacity(spec.repetitions);
        for _ in 0..spec.repetitions {
            let (result, ns) = bench.stopwatch.time(call);
            result?;
            samples.push(ns);
        }
        records.push(BenchRecord::from_samples(size, &samples)?);
    }
    Ok(records)
}

/// Driver attribute latency through the endpoint API.
pub fn run_attr_latency_direct(spec: &WorkloadSpec, bench: &SimBench) -> Result<Vec<BenchRecord>, BenchError> {
    expect_kind(spec, &[Kind::AttrLatency])?;
    let ep = bench.sysfs(&spec.endpoint)?;
    let mut flip = false;
    let mut call = || -> Result<(), BenchError> {
        flip = !flip;
        let value = if flip { 0x8000 } else { 0x4000 };
        match spec.direction {
            Direction::Read => ep.read(&spec.attribute).map(drop)?,
            Direction::Write => ep.write(&spec.attribute, value)?,
            Direction::WriteRead => ep.write_read(&spec.attribute, value).map(drop)?,
        }
        Ok(())
    };
    for _ in 0..spec.warmup {
        call()?;
    }
    let mut samples = Vec::with_capacity(spec.repetitions);
    for _ in 0..spec.repetitions {
        let (result, ns) = bench.stopwatch.time(&mut call);
        result?;
        samples.push(ns);
    }
    Ok(vec![BenchRecord::from_samples(1, &samples)?])
}

/// `host:port` or a full URI.
pub fn target_uri(target: &str) -> String {
    if target.contains("://") {
        target.to_string()
    } else {
        format!("http://{target}")
    }
}

pub async fn connect(target: &str) -> Result<Channel, BenchError> {
    let unreachable = |message: String| BenchError::Unreachable { target: target.to_string(), message };
    let endpoint = Endpoint::from_shared(target_uri(target))
        .map_err(|e| unreachable(e.to_string()))?
        .connect_timeout(CONNECT_TIMEOUT)
        .tcp_nodelay(true);
    endpoint.connect().await.map_err(|e| unreachable(format!("{e}: {:?}", std::error::Error::source(&e))))
}

/// Register RPC latency per size, timed on the client.
pub async fn run_client_latency(spec: &WorkloadSpec, channel: &Channel) -> Result<Vec<BenchRecord>, BenchError> {
    expect_kind(spec, &[Kind::ClientLatency])?;
    let width = Width::from_bits(spec.width)?;
    let mut client = RegisterServiceClient::new(channel.clone());
    let mut records = Vec::with_capacity(spec.sizes.len());
    for &size in &spec.sizes {
        let request = RegisterRequest {
            endpoint: spec.endpoint.clone(),
            address: 0,
            width: spec.width,
            count: size as u32,
            values: match spec.direction {
                Direction::Read => Vec::new(),
                _ => write_pattern(size as usize, width),
            },
        };
        let mut samples = Vec::with_capacity(spec.repetitions);
        for i in 0..spec.warmup + spec.repetitions {
            let request = request.clone();
            let t0 = Instant::now();
            match spec.direction {
                Direction::Read => drop(client.read_registers(request).await?),
                Direction::Write => drop(client.write_registers(request).await?),
                Direction::WriteRead => drop(client.write_read_registers(request).await?),
            }
            let ns = t0.elapsed().as_nanos() as u64;
            if i >= spec.warmup {
                samples.push(ns);
            }
        }
        records.push(BenchRecord::from_samples(size, &samples)?);
    }
    Ok(records)
}

/// Driver attribute latency through AttrService.
pub async fn run_attr_latency_client(spec: &WorkloadSpec, channel: &Channel) -> Result<Vec<BenchRecord>, BenchError> {
    expect_kind(spec, &[Kind::AttrLatency])?;
    let mut client = AttrServiceClient::new(channel.clone());
    let mut samples = Vec::with_capacity(spec.repetitions);
    for i in 0..spec.warmup + spec.repetitions {
        let request = AttrRequest {
            endpoint: spec.endpoint.clone(),
            attribute: spec.attribute.clone(),
            value: if i % 2 == 0 { 0x8000 } else { 0x4000 },
        };
        let t0 = Instant::now();
        match spec.direction {
            Direction::Read => drop(client.read_attr(request).await?),
            Direction::Write => drop(client.write_attr(request).await?),
            Direction::WriteRead => drop(client.write_read_attr(request).await?),
        }
        let ns = t0.elapsed().as_nanos() as u64;
        if i >= spec.warmup {
            samples.push(ns);
        }
    }
    Ok(vec![BenchRecord::from_samples(1, &samples)?])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputRun {
    pub elapsed_ns: u64,
    pub bytes: u64,
    /// CRC-32 of the payload stream as received (read) or as reported by
    /// the daemon (write).
    pub crc32: u32,
    pub expected_crc32: u32,
}

impl ThroughputRun {
    pub fn mbit_s(&self) -> f64 {
        self.bytes as f64 * 8.0 * 1e3 / self.elapsed_ns.max(1) as f64
    }

    pub fn crc_ok(&self) -> bool {
        self.crc32 == self.expected_crc32
    }
}

#[derive(Debug, Clone)]
pub struct ThroughputCell {
    pub block_size: u64,
    pub blocks: u32,
    pub variant: Variant,
    pub direction: Direction,
    pub runs: Vec<ThroughputRun>,
}

impl ThroughputCell {
    pub fn mean_mbit_s(&self) -> f64 {
        self.runs.iter().map(ThroughputRun::mbit_s).sum::<f64>() / self.runs.len() as f64
    }

    /// Run durations as a latency record.
    pub fn record(&self) -> Result<BenchRecord, BenchError> {
        let samples: Vec<u64> = self.runs.iter().map(|r| r.elapsed_ns).collect();
        Ok(BenchRecord::from_samples(self.block_size, &samples)?)
    }
}

fn words_as_bytes(words: &[u32], hasher: &mut crc32fast::Hasher) {
    if cfg!(target_endian = "little") {
        hasher.update(bytemuck::cast_slice(words));
    } else {
        for w in words {
            hasher.update(&w.to_le_bytes());
        }
    }
}

fn expected_crc(payload: &[u8], blocks: u32) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    for _ in 0..blocks {
        hasher.update(payload);
    }
    hasher.finalize()
}

/// Stream throughput per block size; compression must be off on the daemon.
pub async fn run_throughput(spec: &WorkloadSpec, channel: &Channel) -> Result<Vec<ThroughputCell>, BenchError> {
    expect_kind(spec, &[Kind::Throughput])?;
    if spec.direction == Direction::WriteRead {
        return Err(BenchError::Config("throughput runs read or write streams, not wr".into()));
    }
    let mut client = StreamServiceClient::new(channel.clone())
        .max_decoding_message_size(usize::MAX)
        .max_encoding_message_size(usize::MAX);
    let mut cells = Vec::with_capacity(spec.sizes.len());
    for &size in &spec.sizes {
        let mut runs = Vec::with_capacity(spec.repetitions);
        for run in 0..spec.warmup.min(2) + spec.repetitions {
            let seed = run as u64;
            let payload = fill_block(seed, size as usize);
            let expected_crc32 = expected_crc(&payload, spec.blocks);
            let measured = match spec.direction {
                Direction::Read => throughput_read(&mut client, spec, size, seed).await?,
                _ => throughput_write(&mut client, spec, &payload).await?,
            };
            if run >= spec.warmup.min(2) {
                runs.push(ThroughputRun { expected_crc32, ..measured });
            }
        }
        cells.push(ThroughputCell {
            block_size: size,
            blocks: spec.blocks,
            variant: spec.variant,
            direction: spec.direction,
            runs,
        });
    }
    Ok(cells)
}

async fn throughput_read(
    client: &mut StreamServiceClient<Channel>,
    spec: &WorkloadSpec,
    size: u64,
    seed: u64,
) -> Result<ThroughputRun, BenchError> {
    let request =
        StreamReadRequest { block_size: size as u32, block_count: spec.blocks, variant: spec.variant.payload() as i32, seed };
    let mut hasher = crc32fast::Hasher::new();
    let mut bytes = 0u64;
    let mut next = 0u64;
    let t0 = Instant::now();
    let mut stream = client.stream_read(request).await?.into_inner();
    while let Some(block) = stream.message().await? {
        if block.sequence != next {
            return Err(BenchError::Integrity(format!("block {} arrived as {next}", block.sequence)));
        }
        next += 1;
        match &block.payload {
            Some(Payload::Bytes(b)) => {
                bytes += b.len() as u64;
                hasher.update(b);
            }
            Some(Payload::Words(w)) => {
                bytes += w.values.len() as u64 * 4;
                words_as_bytes(&w.values, &mut hasher);
            }
            None => return Err(BenchError::Integrity(format!("block {} has no payload", block.sequence))),
        }
    }
    let elapsed_ns = t0.elapsed().as_nanos() as u64;
    if next != spec.blocks as u64 {
        return Err(BenchError::Integrity(format!("{next} of {} blocks received", spec.blocks)));
    }
    Ok(ThroughputRun { elapsed_ns, bytes, crc32: hasher.finalize(), expected_crc32: 0 })
}

async fn throughput_write(
    client: &mut StreamServiceClient<Channel>,
    spec: &WorkloadSpec,
    payload: &[u8],
) -> Result<ThroughputRun, BenchError> {
    let template = make_block(0, spec.variant.payload(), payload);
    let blocks = spec.blocks as u64;
    let outbound = tokio_stream::iter(
        (0..blocks).map(move |sequence| StreamBlock { sequence, payload: template.payload.clone() }),
    );
    let t0 = Instant::now();
    let summary = client.stream_write(outbound).await?.into_inner();
    let elapsed_ns = t0.elapsed().as_nanos() as u64;
    if summary.blocks != blocks {
        return Err(BenchError::Integrity(format!("daemon counted {} of {blocks} blocks", summary.blocks)));
    }
    Ok(ThroughputRun { elapsed_ns, bytes: summary.bytes, crc32: summary.crc32, expected_crc32: 0 })
}

/// Best effort: nice -20 and SCHED_FIFO for the calling process.
pub fn raise_priority() -> Result<(), String> {
    // SAFETY: plain syscalls on the current process with valid arguments.
    unsafe {
        if libc::setpriority(libc::PRIO_PROCESS, 0, -20) != 0 {
            return Err(format!("setpriority: {}", std::io::Error::last_os_error()));
        }
        let param = libc::sched_param { sched_priority: libc::sched_get_priority_max(libc::SCHED_FIFO) };
        if libc::sched_setscheduler(0, libc::SCHED_FIFO, &param) != 0 {
            return Err(format!("sched_setscheduler: {}", std::io::Error::last_os_error()));
        }
    }
    Ok(())
}
