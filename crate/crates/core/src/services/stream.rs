use std::any::Any;
use std::pin::Pin;
use std::sync::Arc;

use bytes::Bytes;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use tokio::sync::mpsc;
use tokio_stream::wrappers::ReceiverStream;
use tokio_stream::Stream;
use tonic::codec::CompressionEncoding;
use tonic::{Request, Response, Status, Streaming};

use crate::hub::{HubContext, LogChannel, Plugin, PluginArgs, PluginError, ServiceRegistration};
use crate::proto::stream_block::Payload;
use crate::proto::stream_service_server::{StreamService, StreamServiceServer};
use crate::proto::{PayloadVariant, StreamBlock, StreamReadRequest, StreamSummary, Words};

pub const DEFAULT_MAX_BLOCK_SIZE: u32 = 4 << 20;
pub const DEFAULT_BUFFER_BLOCKS: usize = 4;

/// Room for the block header around the payload.
const FRAME_OVERHEAD: usize = 64;

/// The block StreamRead sends for `seed`: `size` bytes from ChaCha8.
pub fn fill_block(seed: u64, size: usize) -> Vec<u8> {
    let mut block = vec![0u8; size];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut block);
    block
}

/// Little-endian 32-bit words; `bytes.len()` must be a multiple of 4.
pub fn bytes_to_words(bytes: &[u8]) -> Vec<u32> {
    bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

pub fn words_to_bytes(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}

/// A block carrying `payload` in the given encoding.
pub fn make_block(sequence: u64, variant: PayloadVariant, payload: &[u8]) -> StreamBlock {
    let payload = match variant {
        PayloadVariant::Bytes => Payload::Bytes(Bytes::copy_from_slice(payload)),
        PayloadVariant::Word32 => Payload::Words(Words { values: bytes_to_words(payload) }),
    };
    StreamBlock { sequence, payload: Some(payload) }
}

/// Payload bytes of a block (words little-endian), `None` without payload.
pub fn block_bytes(block: &StreamBlock) -> Option<Vec<u8>> {
    match &block.payload {
        Some(Payload::Bytes(b)) => Some(b.to_vec()),
        Some(Payload::Words(w)) => Some(words_to_bytes(&w.values)),
        None => None,
    }
}

/// Running totals the way StreamWrite reports them.
#[derive(Debug, Clone, Default)]
pub struct SummaryBuilder {
    blocks: u64,
    bytes: u64,
    crc: crc32fast::Hasher,
}

impl SummaryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, payload: &[u8]) {
        self.blocks += 1;
        self.bytes += payload.len() as u64;
        self.crc.update(payload);
    }

    fn push_words(&mut self, words: &[u32]) {
        self.blocks += 1;
        self.bytes += words.len() as u64 * 4;
        for w in words {
            self.crc.update(&w.to_le_bytes());
        }
    }

    pub fn blocks(&self) -> u64 {
        self.blocks
    }

    pub fn finish(self) -> StreamSummary {
        StreamSummary { blocks: self.blocks, bytes: self.bytes, crc32: self.crc.finalize() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StreamConfig {
    max_block_size: u32,
    /// Blocks queued per StreamRead before the producer waits.
    buffer_blocks: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { max_block_size: DEFAULT_MAX_BLOCK_SIZE, buffer_blocks: DEFAULT_BUFFER_BLOCKS }
    }
}

struct Shared {
    ctx: HubContext,
    log: LogChannel,
    config: StreamConfig,
}

/// Serves `StreamService`: random-data block streams in both directions.
pub struct StreamPlugin {
    shared: Arc<Shared>,
}

impl StreamPlugin {
    pub fn construct(args: PluginArgs) -> Result<Arc<dyn Plugin>, PluginError> {
        let config: StreamConfig =
            serde_json::from_value(args.config).map_err(|e| PluginError::new(format_args!("config: {e}")))?;
        if config.max_block_size == 0 || config.buffer_blocks == 0 {
            return Err(PluginError::new("config: max_block_size and buffer_blocks must be positive"));
        }
        Ok(Arc::new(Self { shared: Arc::new(Shared { ctx: args.ctx, log: args.logger, config }) }))
    }
}

impl Plugin for StreamPlugin {
    fn services(&self) -> Vec<ServiceRegistration> {
        let limit = self.shared.config.max_block_size as usize + FRAME_OVERHEAD;
        let mut server = StreamServiceServer::new(StreamHandler { shared: self.shared.clone() })
            .max_decoding_message_size(limit)
            .max_encoding_message_size(limit);
        if self.shared.ctx.compression() {
            server = server.accept_compressed(CompressionEncoding::Gzip).send_compressed(CompressionEncoding::Gzip);
        }
        vec![ServiceRegistration::new(server)]
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[derive(Clone)]
struct StreamHandler {
    shared: Arc<Shared>,
}

type BlockStream = Pin<Box<dyn Stream<Item = Result<StreamBlock, Status>> + Send>>;

#[tonic::async_trait]
impl StreamService for StreamHandler {
    type StreamReadStream = BlockStream;

    async fn stream_read(&self, request: Request<StreamReadRequest>) -> Result<Response<BlockStream>, Status> {
        let request = request.into_inner();
        let variant = PayloadVariant::try_from(request.variant)
            .map_err(|_| Status::invalid_argument(format!("unknown payload variant {}", request.variant)))?;
        let size = request.block_size;
        if size == 0 || size > self.shared.config.max_block_size {
            return Err(Status::invalid_argument(format!(
                "block size {size} outside 1..={}",
                self.shared.config.max_block_size
            )));
        }
        if variant == PayloadVariant::Word32 && size % 4 != 0 {
            return Err(Status::invalid_argument(format!("word32 block size {size} is not a multiple of 4")));
        }
        let template = make_block(0, variant, &fill_block(request.seed, size as usize));
        let count = request.block_count as u64;
        let (tx, rx) = mpsc::channel(self.shared.config.buffer_blocks);
        let log = self.shared.log.clone();
        tokio::spawn(async move {
            for sequence in 0..count {
                let block = StreamBlock { sequence, payload: template.payload.clone() };
                if tx.send(Ok(block)).await.is_err() {
                    log.debug(format_args!("stream reader left after {sequence} of {count} blocks"));
                    return;
                }
            }
        });
        Ok(Response::new(Box::pin(ReceiverStream::new(rx))))
    }

    async fn stream_write(&self, request: Request<Streaming<StreamBlock>>) -> Result<Response<StreamSummary>, Status> {
        let mut inbound = request.into_inner();
        let mut summary = SummaryBuilder::new();
        loop {
            let block = match inbound.message().await {
                Ok(Some(block)) => block,
                Ok(None) => break,
                Err(status) => {
                    self.shared.log.debug(format_args!("stream writer left after {} blocks: {status}", summary.blocks()));
                    return Err(Status::cancelled(format!("client stream ended abnormally: {}", status.message())));
                }
            };
            if block.sequence != summary.blocks() {
                return Err(Status::invalid_argument(format!(
                    "sequence {} where {} was expected",
                    block.sequence,
                    summary.blocks()
                )));
            }
            match &block.payload {
                Some(Payload::Bytes(b)) => summary.push(b),
                Some(Payload::Words(w)) => summary.push_words(&w.values),
                None => return Err(Status::invalid_argument(format!("block {} has no payload", block.sequence))),
            }
        }
        Ok(Response::new(summary.finish()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_roundtrip_little_endian() {
        let bytes = [1u8, 0, 0, 0, 0xEF, 0xBE, 0xAD, 0xDE];
        assert_eq!(bytes_to_words(&bytes), vec![1, 0xDEAD_BEEF]);
        assert_eq!(words_to_bytes(&[1, 0xDEAD_BEEF]), bytes);
    }

    #[test]
    fn fill_is_seeded() {
        assert_eq!(fill_block(9, 100), fill_block(9, 100));
        assert_ne!(fill_block(9, 100), fill_block(10, 100));
        assert_eq!(fill_block(9, 100)[..50], fill_block(9, 50)[..]);
    }

    #[test]
    fn summary_same_for_both_variants() {
        let payload = fill_block(1, 64);
        let mut a = SummaryBuilder::new();
        let mut b = SummaryBuilder::new();
        a.push(&payload);
        b.push_words(&bytes_to_words(&payload));
        assert_eq!(a.finish(), b.finish());
        let block = make_block(3, PayloadVariant::Word32, &payload);
        assert_eq!(block_bytes(&block).unwrap(), payload);
    }
}
