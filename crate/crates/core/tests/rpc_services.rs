mod common;

use std::time::{Duration, Instant};

use common::{channel, functional_config, start, ALL_BUILTINS, REGISTER_AND_STREAM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use servicehub::proto::attr_service_client::AttrServiceClient;
use servicehub::proto::register_service_client::RegisterServiceClient;
use servicehub::proto::stream_block::Payload;
use servicehub::proto::stream_service_client::StreamServiceClient;
use servicehub::proto::{AttrRequest, PayloadVariant, RegisterRequest, StreamBlock, StreamReadRequest};
use servicehub::services::stream::{block_bytes, fill_block, make_block};
use servicehub::sim::{FaultMode, LatencyModel};
use tonic::codec::CompressionEncoding;
use tonic::Code;

fn regs(endpoint: &str, address: u64, count: u32, values: Vec<u64>) -> RegisterRequest {
    RegisterRequest { endpoint: endpoint.into(), address, width: 32, count, values }
}

fn attr(attribute: &str, value: u64) -> AttrRequest {
    AttrRequest { endpoint: "dac0".into(), attribute: attribute.into(), value }
}

#[tokio::test]
async fn register_round_trip_matches_shadow() {
    let (hub, _) = start(functional_config(REGISTER_AND_STREAM)).await;
    let mut client = RegisterServiceClient::new(channel(&hub).await);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values: Vec<u64> = (0..64).map(|_| rng.random::<u32>() as u64).collect();

    let echoed = client.write_read_registers(regs("axi_bench", 0x100, 64, values.clone())).await.unwrap();
    assert_eq!(echoed.into_inner().values, values);
    let read = client.read_registers(regs("axi_bench", 0x100, 64, vec![])).await.unwrap();
    assert_eq!(read.into_inner().values, values);

    let words = hub.sim().register_file("axi_bench").unwrap().snapshot();
    let shadow: Vec<u64> = words[0x40..0x80].iter().map(|&w| w as u64).collect();
    assert_eq!(shadow, values);
    assert!(words[..0x40].iter().chain(&words[0x80..]).all(|&w| w == 0));

    client.write_registers(regs("axi_aux", 0, 1, vec![0xdead_beef])).await.unwrap();
    let byte = RegisterRequest { width: 8, ..regs("axi_aux", 1, 2, vec![]) };
    assert_eq!(client.read_registers(byte).await.unwrap().into_inner().values, [0xbe, 0xad]);
    hub.shutdown().await.unwrap();
}

#[tokio::test]
async fn register_argument_errors() {
    let (hub, _) = start(functional_config(REGISTER_AND_STREAM)).await;
    let mut client = RegisterServiceClient::new(channel(&hub).await);
    let cases = [
        (regs("axi_bench", 0xfffc, 2, vec![]), Code::InvalidArgument),
        (regs("axi_bench", 0x10000, 1, vec![]), Code::InvalidArgument),
        (regs("axi_bench", 2, 1, vec![]), Code::InvalidArgument),
        (regs("axi_bench", 0, 0, vec![]), Code::InvalidArgument),
        (RegisterRequest { width: 24, ..regs("axi_bench", 0, 1, vec![]) }, Code::InvalidArgument),
        (regs("nowhere", 0, 1, vec![]), Code::NotFound),
    ];
    for (request, code) in cases {
        let err = client.read_registers(request.clone()).await.unwrap_err();
        assert_eq!(err.code(), code, "{request:?}: {}", err.message());
    }
    let short = client.write_registers(regs("axi_bench", 0, 3, vec![1, 2])).await.unwrap_err();
    assert_eq!(short.code(), Code::InvalidArgument);
    let wide = client.write_registers(regs("axi_bench", 0, 1, vec![1 << 32])).await.unwrap_err();
    assert_eq!(wide.code(), Code::InvalidArgument);
    assert!(hub.sim().register_file("axi_bench").unwrap().snapshot().iter().all(|&w| w == 0));
    hub.shutdown().await.unwrap();
}

#[tokio::test]
async fn write_read_is_one_round_trip() {
    let (hub, _) = start(functional_config(REGISTER_AND_STREAM)).await;
    let mut client = RegisterServiceClient::new(channel(&hub).await);
    client.write_read_registers(regs("axi_bench", 0, 4, vec![1, 2, 3, 4])).await.unwrap();
    client.write_registers(regs("axi_bench", 0, 4, vec![5, 6, 7, 8])).await.unwrap();
    client.read_registers(regs("axi_bench", 0, 4, vec![])).await.unwrap();
    let calls = hub.calls();
    assert_eq!(calls.get("/servicehub.v1.RegisterService/WriteReadRegisters"), 1);
    assert_eq!(calls.get("/servicehub.v1.RegisterService/WriteRegisters"), 1);
    assert_eq!(calls.get("/servicehub.v1.RegisterService/ReadRegisters"), 1);
    assert_eq!(calls.total(), 3);
    hub.shutdown().await.unwrap();
}

#[tokio::test]
async fn attribute_round_trip() {
    let (hub, _) = start(functional_config(ALL_BUILTINS)).await;
    let mut client = AttrServiceClient::new(channel(&hub).await);
    let back = client.write_read_attr(attr("raw0", 0x8000)).await.unwrap().into_inner().value;
    assert_eq!(back, 0x8000);
    client.write_attr(attr("raw7", 0xffff)).await.unwrap();
    assert_eq!(client.read_attr(attr("raw7", 0)).await.unwrap().into_inner().value, 0xffff);
    assert_eq!(client.read_attr(attr("raw3", 0)).await.unwrap().into_inner().value, 0);
    assert_eq!(hub.sim().i2c_device("dac0").unwrap().i2c_read16(0).unwrap(), 0x8000);

    for bad in [attr("raw8", 0), attr("bogus", 0)] {
        assert_eq!(client.read_attr(bad).await.unwrap_err().code(), Code::InvalidArgument);
    }
    assert_eq!(client.write_attr(attr("raw0", 0x1_0000)).await.unwrap_err().code(), Code::InvalidArgument);
    let other = AttrRequest { endpoint: "axi_bench".into(), ..attr("raw0", 0) };
    assert_eq!(client.read_attr(other).await.unwrap_err().code(), Code::NotFound);
    hub.shutdown().await.unwrap();
}

#[tokio::test]
async fn attributes_from_a_directory_tree() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("bus/iio/devices/iio:device0");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("name"), "dac0\n").unwrap();
    std::fs::write(dir.join("out_voltage0_raw"), "17\n").unwrap();
    let json = format!(
        r#"{{"backend": {{"sysfs_root": {:?}}}, "plugins": [{{"name": "attr", "library": "builtin:attr"}}]}}"#,
        root.path()
    );
    let (hub, _) = start(functional_config(&json)).await;
    let mut client = AttrServiceClient::new(channel(&hub).await);
    assert_eq!(client.read_attr(attr("out_voltage0_raw", 0)).await.unwrap().into_inner().value, 17);
    client.write_attr(attr("out_voltage0_raw", 4096)).await.unwrap();
    assert_eq!(std::fs::read_to_string(dir.join("out_voltage0_raw")).unwrap().trim(), "4096");
    hub.shutdown().await.unwrap();
}

async fn collect(
    client: &mut StreamServiceClient<tonic::transport::Channel>,
    request: StreamReadRequest,
) -> Result<Vec<StreamBlock>, tonic::Status> {
    let mut stream = client.stream_read(request).await?.into_inner();
    let mut blocks = Vec::new();
    while let Some(block) = stream.message().await? {
        blocks.push(block);
    }
    Ok(blocks)
}

#[tokio::test]
async fn stream_read_delivers_every_block() {
    let (hub, _) = start(functional_config(REGISTER_AND_STREAM)).await;
    let mut client = StreamServiceClient::new(channel(&hub).await);
    for variant in [PayloadVariant::Bytes, PayloadVariant::Word32] {
        let request = StreamReadRequest { block_size: 1024, block_count: 4, variant: variant as i32, seed: 11 };
        let blocks = collect(&mut client, request).await.unwrap();
        let expected = fill_block(11, 1024);
        assert_eq!(blocks.len(), 4);
        for (i, block) in blocks.iter().enumerate() {
            assert_eq!(block.sequence, i as u64);
            assert_eq!(block_bytes(block).unwrap(), expected);
            match (&block.payload, variant) {
                (Some(Payload::Bytes(_)), PayloadVariant::Bytes) | (Some(Payload::Words(_)), PayloadVariant::Word32) => {}
                other => panic!("wrong encoding {other:?}"),
            }
        }
    }
    let empty = StreamReadRequest { block_size: 16, block_count: 0, variant: 0, seed: 0 };
    assert!(collect(&mut client, empty).await.unwrap().is_empty());

    let cases = [
        StreamReadRequest { block_size: 6, block_count: 1, variant: PayloadVariant::Word32 as i32, seed: 0 },
        StreamReadRequest { block_size: 0, block_count: 1, variant: 0, seed: 0 },
        StreamReadRequest { block_size: (4 << 20) + 1, block_count: 1, variant: 0, seed: 0 },
        StreamReadRequest { block_size: 16, block_count: 1, variant: 9, seed: 0 },
    ];
    for request in cases {
        let err = collect(&mut client, request).await.unwrap_err();
        assert_eq!(err.code(), Code::InvalidArgument, "{request:?}");
    }
    hub.shutdown().await.unwrap();
}

#[tokio::test]
async fn stream_write_checksum_matches_client() {
    let (hub, _) = start(functional_config(REGISTER_AND_STREAM)).await;
    let mut client = StreamServiceClient::new(channel(&hub).await);
    const BLOCKS: u64 = 1 << 10;
    const SIZE: usize = 64 << 10;
    for variant in [PayloadVariant::Bytes, PayloadVariant::Word32] {
        let mut oracle = crc32fast::Hasher::new();
        let payloads: Vec<Vec<u8>> = (0..4).map(|s| fill_block(s, SIZE)).collect();
        for seq in 0..BLOCKS {
            oracle.update(&payloads[(seq % 4) as usize]);
        }
        let outbound = tokio_stream::iter(
            (0..BLOCKS).map(move |seq| make_block(seq, variant, &payloads[(seq % 4) as usize])),
        );
        let summary = client.stream_write(outbound).await.unwrap().into_inner();
        assert_eq!(summary.blocks, BLOCKS);
        assert_eq!(summary.bytes, BLOCKS * SIZE as u64);
        assert_eq!(summary.crc32, oracle.finalize(), "{variant:?}");
    }
    hub.shutdown().await.unwrap();
}

#[tokio::test]
async fn stream_write_rejects_gaps() {
    let (hub, _) = start(functional_config(REGISTER_AND_STREAM)).await;
    let mut client = StreamServiceClient::new(channel(&hub).await);
    let gap = vec![make_block(0, PayloadVariant::Bytes, b"ab"), make_block(2, PayloadVariant::Bytes, b"cd")];
    let err = client.stream_write(tokio_stream::iter(gap)).await.unwrap_err();
    assert_eq!(err.code(), Code::InvalidArgument);
    let hollow = vec![StreamBlock { sequence: 0, payload: None }];
    let err = client.stream_write(tokio_stream::iter(hollow)).await.unwrap_err();
    assert_eq!(err.code(), Code::InvalidArgument);
    let summary = client.stream_write(tokio_stream::iter(Vec::new())).await.unwrap().into_inner();
    assert_eq!((summary.blocks, summary.bytes, summary.crc32), (0, 0, 0));
    hub.shutdown().await.unwrap();
}

#[tokio::test]
async fn compression_is_transparent() {
    let mut results = Vec::new();
    for compress in [false, true] {
        let mut config = functional_config(REGISTER_AND_STREAM);
        config.compression_enabled = compress;
        let (hub, _) = start(config).await;
        let ch = channel(&hub).await;
        let mut regs_client = RegisterServiceClient::new(ch.clone());
        let mut stream_client = StreamServiceClient::new(ch);
        if compress {
            regs_client = regs_client.send_compressed(CompressionEncoding::Gzip).accept_compressed(CompressionEncoding::Gzip);
            stream_client =
                stream_client.send_compressed(CompressionEncoding::Gzip).accept_compressed(CompressionEncoding::Gzip);
        }
        let values: Vec<u64> = (0..256).collect();
        let echoed = regs_client.write_read_registers(regs("axi_bench", 0, 256, values)).await.unwrap();
        let request = StreamReadRequest { block_size: 4096, block_count: 8, variant: 1, seed: 5 };
        let blocks = collect(&mut stream_client, request).await.unwrap();
        let outbound = blocks.clone();
        let summary = stream_client.stream_write(tokio_stream::iter(outbound)).await.unwrap().into_inner();
        results.push((echoed.into_inner().values, blocks, summary));
        hub.shutdown().await.unwrap();
    }
    assert_eq!(results[0], results[1]);
}

#[tokio::test]
async fn deadline_is_honored() {
    let mut config = functional_config(REGISTER_AND_STREAM);
    config.backend.register_latency =
        LatencyModel { base_read_ns: 150_000_000, base_write_ns: 1_000, ..LatencyModel::zero() };
    let (hub, _) = start(config).await;
    let mut client = RegisterServiceClient::new(channel(&hub).await);

    let mut slow = tonic::Request::new(regs("axi_bench", 0, 1, vec![]));
    slow.set_timeout(Duration::from_millis(40));
    let started = Instant::now();
    let err = client.read_registers(slow).await.unwrap_err();
    let elapsed = started.elapsed();
    assert_eq!(err.code(), Code::DeadlineExceeded, "{}", err.message());
    assert!(elapsed < Duration::from_millis(120), "{elapsed:?}");

    let mut quick = tonic::Request::new(regs("axi_bench", 0, 1, vec![42]));
    quick.set_timeout(Duration::from_secs(5));
    client.write_registers(quick).await.unwrap();
    let back = client.read_registers(regs("axi_bench", 0, 1, vec![])).await.unwrap();
    assert_eq!(back.into_inner().values, [42]);
    hub.shutdown().await.unwrap();
}

#[tokio::test]
async fn faulted_endpoint_is_unavailable() {
    let (hub, _) = start(functional_config(ALL_BUILTINS)).await;
    let ch = channel(&hub).await;
    let mut client = RegisterServiceClient::new(ch.clone());
    hub.sim().inject_fault("axi_aux", FaultMode::ErrorOnAccess).unwrap();
    let err = client.read_registers(regs("axi_aux", 0, 1, vec![])).await.unwrap_err();
    assert_eq!(err.code(), Code::Unavailable);
    client.read_registers(regs("axi_bench", 0, 1, vec![])).await.unwrap();

    hub.sim().inject_fault("dac0", FaultMode::ErrorOnAccess).unwrap();
    let mut attrs = AttrServiceClient::new(ch);
    assert_eq!(attrs.read_attr(attr("raw0", 0)).await.unwrap_err().code(), Code::Unavailable);
    hub.shutdown().await.unwrap();
}
