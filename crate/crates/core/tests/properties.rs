use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use servicehub::clock::{Timing, VirtualClock};
use servicehub::endpoint::{
    make_endpoints, parse_device_tree, AccessOrder, BitField, EndpointDirectory, EndpointError, NodeFlavor, Width,
};
use servicehub::hub::{FnFactory, PluginCatalog, PluginError};
use servicehub::proto::PayloadVariant;
use servicehub::reliability::{Expiry, HealthRegistry, HealthStatus, Watchdog};
use servicehub::services::stream::{block_bytes, fill_block, make_block, SummaryBuilder};
use servicehub::sim::{AccessKind, LatencyModel, LatencySource, SimBackend, SimConfig, DEFAULT_SIM_TREE};

fn directory(config: SimConfig, timing: Timing) -> EndpointDirectory {
    let nodes = parse_device_tree(DEFAULT_SIM_TREE).unwrap();
    let backend = Arc::new(SimBackend::with_timing(config, &nodes, timing).unwrap());
    make_endpoints(&nodes, backend).unwrap()
}

const WIDTHS: [Width; 4] = [Width::W8, Width::W16, Width::W32, Width::W64];

fn width() -> impl Strategy<Value = Width> {
    prop::sample::select(WIDTHS.to_vec())
}

/// Byte-addressed little-endian model of a register window.
struct Shadow(Vec<u8>);

impl Shadow {
    fn fits(&self, address: u64, width: Width, count: usize) -> bool {
        let bytes = width.bits() as u64 / 8;
        count > 0 && address % bytes == 0 && address + bytes * count as u64 <= self.0.len() as u64
    }

    fn read(&self, address: u64, width: Width) -> u64 {
        let n = width.bits() as usize / 8;
        let at = address as usize;
        (0..n).rev().fold(0u64, |acc, i| (acc << 8) | self.0[at + i] as u64)
    }

    fn write(&mut self, address: u64, width: Width, value: u64) {
        let n = width.bits() as usize / 8;
        for i in 0..n {
            self.0[address as usize + i] = (value >> (8 * i)) as u8;
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Write { address: u64, width: Width, values: Vec<u64> },
    Read { address: u64, width: Width, count: usize },
    WriteRead { address: u64, width: Width, values: Vec<u64> },
    WriteBits { address: u64, offset: u8, width: u8, value: u32 },
    ReadBits { address: u64, offset: u8, width: u8 },
}

const AUX_SIZE: u64 = 0x1000;

fn op() -> impl Strategy<Value = Op> {
    // Addresses run a little past the window so some ops must be refused.
    let address = 0..AUX_SIZE + 16;
    let values = |w: Width| {
        let max = if w.bits() == 64 { u64::MAX } else { (1u64 << w.bits()) - 1 };
        prop::collection::vec(prop_oneof![4 => 0..=max, 1 => Just(max.wrapping_add(1).max(1) | max)], 1..6)
    };
    prop_oneof![
        (address.clone(), width()).prop_flat_map(move |(a, w)| values(w).prop_map(move |v| Op::Write {
            address: a,
            width: w,
            values: v
        })),
        (address.clone(), width(), 0usize..6).prop_map(|(address, width, count)| Op::Read { address, width, count }),
        (address.clone(), width()).prop_flat_map(move |(a, w)| values(w).prop_map(move |v| Op::WriteRead {
            address: a,
            width: w,
            values: v
        })),
        (address.clone(), 0u8..34, 0u8..34, any::<u32>()).prop_map(|(address, offset, width, value)| {
            Op::WriteBits { address, offset, width, value }
        }),
        (address, 0u8..34, 0u8..34).prop_map(|(address, offset, width)| Op::ReadBits { address, offset, width }),
    ]
}

fn field_ok(offset: u8, width: u8) -> bool {
    width > 0 && (offset as u32 + width as u32) <= 32
}

fn low_bits(width: u8) -> u64 {
    (1u64 << width) - 1
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn endpoint_matches_shadow(ops in prop::collection::vec(op(), 1..80), order in prop::sample::select(vec![AccessOrder::Sequential, AccessOrder::Scattered])) {
        let dir = directory(SimConfig::functional(), Timing::Realtime);
        let ep = dir.platform("axi_aux").unwrap();
        let mut shadow = Shadow(vec![0; AUX_SIZE as usize]);
        for op in ops {
            match op {
                Op::Write { address, width, values } => {
                    let fits = shadow.fits(address, width, values.len());
                    let narrow = values.iter().all(|&v| width.bits() == 64 || v >> width.bits() == 0);
                    let result = ep.write_array(address, width, &values, order);
                    prop_assert_eq!(result.is_ok(), fits && narrow, "{:?}", result);
                    if fits && narrow {
                        for (i, v) in values.iter().enumerate() {
                            shadow.write(address + i as u64 * (width.bits() as u64 / 8), width, *v);
                        }
                    }
                }
                Op::Read { address, width, count } => {
                    let result = ep.read_array(address, width, count, order);
                    if shadow.fits(address, width, count) {
                        let expected: Vec<u64> = (0..count as u64)
                            .map(|i| shadow.read(address + i * (width.bits() as u64 / 8), width))
                            .collect();
                        prop_assert_eq!(result.unwrap(), expected);
                    } else {
                        prop_assert!(result.is_err());
                    }
                }
                Op::WriteRead { address, width, values } => {
                    let fits = shadow.fits(address, width, values.len());
                    let narrow = values.iter().all(|&v| width.bits() == 64 || v >> width.bits() == 0);
                    let result = ep.write_read_array(address, width, &values, order);
                    if fits && narrow {
                        prop_assert_eq!(result.unwrap(), values.clone());
                        for (i, v) in values.iter().enumerate() {
                            shadow.write(address + i as u64 * (width.bits() as u64 / 8), width, *v);
                        }
                    } else {
                        prop_assert!(result.is_err());
                    }
                }
                Op::WriteBits { address, offset, width, value } => {
                    let ok = shadow.fits(address, Width::W32, 1) && field_ok(offset, width) && (value as u64) <= low_bits(width);
                    let result = BitField::new(offset, width).and_then(|f| ep.write_bits(address, f, value));
                    prop_assert_eq!(result.is_ok(), ok);
                    if ok {
                        let old = shadow.read(address, Width::W32);
                        let placed = low_bits(width) << offset;
                        let new = (old & !placed) | ((value as u64) << offset);
                        shadow.write(address, Width::W32, new & 0xffff_ffff);
                    }
                }
                Op::ReadBits { address, offset, width } => {
                    let result = BitField::new(offset, width).and_then(|f| ep.read_bits(address, f));
                    if shadow.fits(address, Width::W32, 1) && field_ok(offset, width) {
                        let expected = (shadow.read(address, Width::W32) >> offset) & low_bits(width);
                        prop_assert_eq!(result.unwrap() as u64, expected);
                    } else {
                        prop_assert!(result.is_err());
                    }
                }
            }
        }
        let words = shadow.0.chunks(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect::<Vec<_>>();
        let file = ep.read_array(0, Width::W32, (AUX_SIZE / 4) as usize, AccessOrder::Sequential).unwrap();
        prop_assert_eq!(file, words.iter().map(|&w| w as u64).collect::<Vec<_>>());
    }

    #[test]
    fn bit_fields_exhaustive(register in any::<u32>(), neighbours in any::<(u32, u32)>(), seed in any::<u32>()) {
        let dir = directory(SimConfig::functional(), Timing::Realtime);
        let ep = dir.platform("axi_aux").unwrap();
        for offset in 0u8..32 {
            for width in 1u8..=(32 - offset) {
                let field = BitField::new(offset, width).unwrap();
                let value = (seed.rotate_left(offset as u32) as u64 & low_bits(width)) as u32;
                ep.write(0x40, Width::W32, neighbours.0 as u64).unwrap();
                ep.write(0x44, Width::W32, register as u64).unwrap();
                ep.write(0x48, Width::W32, neighbours.1 as u64).unwrap();

                prop_assert_eq!(ep.read_bits(0x44, field).unwrap() as u64, (register as u64 >> offset) & low_bits(width));
                ep.write_bits(0x44, field, value).unwrap();
                let mut expected = register;
                for bit in 0..width {
                    let b = offset + bit;
                    expected = (expected & !(1 << b)) | (((value >> bit) & 1) << b);
                }
                prop_assert_eq!(ep.read(0x44, Width::W32).unwrap(), expected as u64, "offset {} width {}", offset, width);
                prop_assert_eq!(ep.read_bits(0x44, field).unwrap(), value);
                prop_assert_eq!(ep.read(0x40, Width::W32).unwrap(), neighbours.0 as u64);
                prop_assert_eq!(ep.read(0x48, Width::W32).unwrap(), neighbours.1 as u64);
            }
        }
    }

    #[test]
    fn bounds_are_total(address in any::<u64>(), w in width(), count in 0usize..5000) {
        let dir = directory(SimConfig::functional(), Timing::Realtime);
        let ep = dir.platform("axi_aux").unwrap();
        let bytes = w.bits() as u128 / 8;
        let end = address as u128 + bytes * count as u128;
        let valid = count > 0 && end <= AUX_SIZE as u128 && address as u128 % bytes == 0;
        match ep.read_array(address, w, count, AccessOrder::Sequential) {
            Ok(values) => {
                prop_assert!(valid);
                prop_assert_eq!(values.len(), count);
            }
            Err(EndpointError::OutOfRange { .. } | EndpointError::Misaligned { .. } | EndpointError::EmptyAccess) => prop_assert!(!valid),
            Err(other) => prop_assert!(false, "unexpected {}", other),
        }
    }

    #[test]
    fn device_tree_bijection(spec in prop::collection::vec((any::<bool>(), 1u64..16), 0..24)) {
        let mut text = String::from("# generated\n");
        let mut base = 0x8000_0000u64;
        for (i, (platform, pages)) in spec.iter().enumerate() {
            if *platform {
                text += &format!("node n{i} compatible=test,regs reg={base:#x},{:#x}\n", pages * 0x1000);
                base += pages * 0x1000;
            } else {
                text += &format!("node n{i} compatible=test,dac{i} sysfs=bus/iio/devices\n");
            }
        }
        let nodes = parse_device_tree(&text).unwrap();
        prop_assert_eq!(nodes.len(), spec.len());
        let backend = Arc::new(SimBackend::new(SimConfig::functional(), &nodes).unwrap());
        let dir = make_endpoints(&nodes, backend).unwrap();
        prop_assert_eq!(dir.len(), spec.len());
        for (i, (platform, pages)) in spec.iter().enumerate() {
            let ep = dir.get(&format!("n{i}")).unwrap();
            let flavor = if *platform { NodeFlavor::Platform } else { NodeFlavor::Sysfs };
            prop_assert_eq!(ep.flavor(), flavor);
            if *platform {
                prop_assert_eq!(ep.as_platform().unwrap().size(), pages * 0x1000);
            }
        }
    }

    #[test]
    fn factory_catalog_bijection(names in prop::collection::btree_set("[a-z][a-z0-9_]{0,10}", 0..20)) {
        let mut catalog = PluginCatalog::empty();
        for name in &names {
            catalog.insert(name, Arc::new(FnFactory(|_| Err(PluginError::new("unused")))));
        }
        prop_assert_eq!(catalog.keys().collect::<Vec<_>>(), names.iter().map(String::as_str).collect::<Vec<_>>());
        for name in &names {
            prop_assert!(catalog.get(name).is_some());
        }
        prop_assert!(catalog.get("Upper").is_none());
    }

    #[test]
    fn stream_summary_matches_bitwise_crc(sizes in prop::collection::vec(0usize..300, 0..12), seed in any::<u64>(), word32 in any::<bool>()) {
        let variant = if word32 { PayloadVariant::Word32 } else { PayloadVariant::Bytes };
        let mut summary = SummaryBuilder::new();
        let mut all = Vec::new();
        for (seq, size) in sizes.iter().enumerate() {
            let size = if word32 { size & !3 } else { *size };
            let payload = fill_block(seed.wrapping_add(seq as u64), size);
            let block = make_block(seq as u64, variant, &payload);
            let carried = block_bytes(&block).unwrap();
            prop_assert_eq!(&carried, &payload);
            summary.push(&carried);
            all.extend_from_slice(&payload);
        }
        let summary = summary.finish();
        prop_assert_eq!(summary.blocks, sizes.len() as u64);
        prop_assert_eq!(summary.bytes, all.len() as u64);
        prop_assert_eq!(summary.crc32, bitwise_crc32(&all));
    }

    #[test]
    fn latency_is_reproducible_per_seed(seed in any::<u64>(), words in prop::collection::vec(1u64..512, 1..64)) {
        let model = LatencyModel::register_bus().with_seed(seed);
        let a = LatencySource::new(model, Timing::virtual_clock()).unwrap();
        let b = LatencySource::new(model, Timing::virtual_clock()).unwrap();
        let c = LatencySource::new(model.with_seed(seed ^ 1), Timing::virtual_clock()).unwrap();
        let sa: Vec<u64> = words.iter().map(|&w| a.charge(AccessKind::Read, w)).collect();
        let sb: Vec<u64> = words.iter().map(|&w| b.charge(AccessKind::Read, w)).collect();
        let sc: Vec<u64> = words.iter().map(|&w| c.charge(AccessKind::Read, w)).collect();
        prop_assert_eq!(&sa, &sb);
        prop_assert_eq!(a.timing().now_ns(), sa.iter().sum::<u64>());
        if words.len() >= 8 {
            prop_assert_ne!(sa, sc);
        }
    }

    #[test]
    fn timing_never_changes_results(ops in prop::collection::vec(op(), 1..60)) {
        let functional = directory(SimConfig::functional(), Timing::Realtime);
        let clock = Arc::new(VirtualClock::new());
        let timed = directory(SimConfig::default(), Timing::Virtual(clock.clone()));
        let mut any_ok = false;
        for op in ops {
            let [a, b] = [&functional, &timed].map(|dir| {
                let ep = dir.platform("axi_aux").unwrap();
                let order = AccessOrder::Sequential;
                match &op {
                    Op::Write { address, width, values } => ep.write_array(*address, *width, values, order).map(|_| vec![]),
                    Op::Read { address, width, count } => ep.read_array(*address, *width, *count, order),
                    Op::WriteRead { address, width, values } => ep.write_read_array(*address, *width, values, order),
                    Op::WriteBits { address, offset, width, value } => BitField::new(*offset, *width)
                        .and_then(|f| ep.write_bits(*address, f, *value))
                        .map(|_| vec![]),
                    Op::ReadBits { address, offset, width } => BitField::new(*offset, *width)
                        .and_then(|f| ep.read_bits(*address, f))
                        .map(|v| vec![v as u64]),
                }
                .map_err(|e| e.to_string())
            });
            any_ok |= a.is_ok();
            prop_assert_eq!(a, b);
        }
        use servicehub::clock::Clock;
        // Refused accesses never reach the bus.
        prop_assert_eq!(clock.now_ns() > 0, any_ok);
    }

    #[test]
    fn watchdog_fires_once_per_starvation(
        timeout_ms in 1u64..50,
        steps in prop::collection::vec((0u64..20_000_000, any::<bool>()), 1..120),
    ) {
        let clock = Arc::new(VirtualClock::new());
        let fired: Arc<Mutex<Vec<Expiry>>> = Arc::default();
        let sink = fired.clone();
        let wd = Watchdog::new(clock.clone(), Arc::new(move |e: &Expiry| sink.lock().unwrap().push(e.clone())));
        wd.register("c", timeout_ms).unwrap();
        let timeout = timeout_ms * 1_000_000;
        let (mut last_kick, mut fired_since_kick, mut expected) = (0u64, false, 0usize);
        for (dt, kick) in steps {
            let now = clock.advance(dt);
            let new = wd.tick();
            let starving = now - last_kick > timeout;
            if starving && !fired_since_kick {
                prop_assert_eq!(new.len(), 1);
                prop_assert!(new[0].detected_ns - new[0].last_kick_ns > timeout);
                prop_assert!(new[0].detected_ns - new[0].last_kick_ns <= timeout + dt);
                fired_since_kick = true;
                expected += 1;
            } else {
                prop_assert!(new.is_empty());
            }
            if kick {
                wd.kick("c").unwrap();
                last_kick = now;
                fired_since_kick = false;
            }
        }
        prop_assert_eq!(fired.lock().unwrap().len(), expected);
        prop_assert_eq!(wd.fired_count(), expected as u64);
    }

    #[test]
    fn health_since_is_monotonic(steps in prop::collection::vec((0usize..3, 0u8..5, 0u64..3), 1..200)) {
        let clock = Arc::new(VirtualClock::new());
        let health = HealthRegistry::new(clock.clone());
        let names = ["a", "b", "c"];
        for n in names {
            health.register(n);
        }
        let mut last: BTreeMap<&str, (HealthStatus, u64)> =
            names.iter().map(|&n| (n, (HealthStatus::Healthy, 0))).collect();
        for (who, action, dt) in steps {
            clock.advance(dt);
            let name = names[who];
            let result = match action {
                0 => health.report(name, HealthStatus::Healthy, None),
                1 => health.report(name, HealthStatus::Degraded, Some("x")),
                2 => health.report(name, HealthStatus::Failed, Some("y")),
                3 => health.escalate(name, "z"),
                _ => health.mark_recovered(name),
            };
            let state = health.get(name).unwrap();
            let (prev_status, prev_since) = last[name];
            if result.is_err() {
                prop_assert_eq!((state.status, state.since_ns), (prev_status, prev_since));
            }
            if state.status != prev_status {
                prop_assert!(state.since_ns > prev_since);
            } else {
                prop_assert_eq!(state.since_ns, prev_since);
            }
            last.insert(name, (state.status, state.since_ns));
        }
    }
}

fn bitwise_crc32(data: &[u8]) -> u32 {
    let mut crc = 0xffff_ffffu32;
    for &byte in data {
        crc ^= byte as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xedb8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

#[test]
fn crc_oracle_check_value() {
    assert_eq!(bitwise_crc32(b"123456789"), 0xcbf4_3926);
}
