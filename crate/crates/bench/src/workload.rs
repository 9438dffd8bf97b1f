use std::fmt;

use servicehub::endpoint::{AccessOrder, EndpointError};
use servicehub::proto::PayloadVariant;

use crate::stats::StatsError;

pub const DEFAULT_WARMUP: usize = 32;
pub const DEFAULT_BLOCKS: u32 = 1 << 10;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid workload: {0}")]
    Config(String),
    #[error("cannot reach {target}: {message}")]
    Unreachable { target: String, message: String },
    #[error("rpc failed: {0}")]
    Rpc(#[from] tonic::Status),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error("stream integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    EpLatency,
    ClientLatency,
    Throughput,
    AttrLatency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Read,
    Write,
    WriteRead,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Read, Direction::Write, Direction::WriteRead];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Read => "r",
            Direction::Write => "w",
            Direction::WriteRead => "wr",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Byte,
    Word32,
}

impl Variant {
    pub fn payload(self) -> PayloadVariant {
        match self {
            Variant::Byte => PayloadVariant::Bytes,
            Variant::Word32 => PayloadVariant::Word32,
        }
    }
}

/// What one benchmark run measures.
#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub kind: Kind,
    /// Register access width in bits.
    pub width: u32,
    /// Array lengths (latency) or block sizes in bytes (throughput).
    pub sizes: Vec<u64>,
    /// Timed samples per cell; runs per cell for throughput.
    pub repetitions: usize,
    pub direction: Direction,
    pub variant: Variant,
    /// Discarded iterations before each cell.
    pub warmup: usize,
    /// Endpoint label; register or driver endpoint depending on `kind`.
    pub endpoint: String,
    /// Attribute used by attr-latency.
    pub attribute: String,
    pub order: AccessOrder,
    /// Blocks per throughput run.
    pub blocks: u32,
}

impl WorkloadSpec {
    pub fn new(kind: Kind) -> Self {
        let (endpoint, sizes) = match kind {
            Kind::AttrLatency => ("dac0", vec![1]),
            Kind::Throughput => ("axi_bench", vec![64 << 10]),
            _ => ("axi_bench", vec![1]),
        };
        Self {
            kind,
            width: 32,
            sizes,
            repetitions: 1000,
            direction: Direction::Read,
            variant: Variant::Byte,
            warmup: DEFAULT_WARMUP,
            endpoint: endpoint.into(),
            attribute: "raw0".into(),
            order: AccessOrder::Sequential,
            blocks: DEFAULT_BLOCKS,
        }
    }

    pub fn sizes(mut self, sizes: impl Into<Vec<u64>>) -> Self {
        self.sizes = sizes.into();
        self
    }

    pub fn repetitions(mut self, n: usize) -> Self {
        self.repetitions = n;
        self
    }

    pub fn direction(mut self, d: Direction) -> Self {
        self.direction = d;
        self
    }

    pub fn variant(mut self, v: Variant) -> Self {
        self.variant = v;
        self
    }

    pub fn warmup(mut self, n: usize) -> Self {
        self.warmup = n;
        self
    }

    pub fn blocks(mut self, n: u32) -> Self {
        self.blocks = n;
        self
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.repetitions < 2 {
            return bad(format!("repetitions must be at least 2, got {}", self.repetitions));
        }
        if self.sizes.is_empty() {
            return bad("no sizes given".into());
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("sizes must be strictly increasing: {:?}", self.sizes));
        }
        if self.sizes[0] == 0 {
            return bad("sizes must be positive".into());
        }
        if !matches!(self.width, 8 | 16 | 32 | 64) {
            return bad(format!("width must be 8, 16, 32 or 64, got {}", self.width));
        }
        match self.kind {
            Kind::AttrLatency if self.sizes != [1] => {
                bad("attr-latency measures single attribute accesses; sizes must be [1]".into())
            }
            Kind::Throughput if self.blocks == 0 => bad("block count must be positive".into()),
            Kind::Throughput if self.variant == Variant::Word32 && self.sizes.iter().any(|s| s % 4 != 0) => {
                bad("word32 block sizes must be multiples of 4".into())
            }
            Kind::Throughput if self.sizes.iter().any(|&s| s > u32::MAX as u64) => {
                bad("block size exceeds 32 bits".into())
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let ok = WorkloadSpec::new(Kind::EpLatency).sizes([1, 2, 4]);
        assert!(ok.validate().is_ok());
        for bad in [
            ok.clone().repetitions(1),
            ok.clone().sizes([]),
            ok.clone().sizes([1, 1]),
            ok.clone().sizes([4, 2]),
            ok.clone().sizes([0, 2]),
            WorkloadSpec::new(Kind::Throughput).blocks(0),
            WorkloadSpec::new(Kind::Throughput).sizes([6]).variant(Variant::Word32),
            WorkloadSpec::new(Kind::AttrLatency).sizes([1, 2]),
        ] {
            assert!(matches!(bad.validate(), Err(BenchError::Config(_))), "{bad:?}");
        }
    }
}
