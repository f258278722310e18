//! Interconnect oracles: routing against breadth-first search, closed-form
//! timing of packets on an idle interposer, contention, and conservation.

use std::collections::{BTreeMap, VecDeque};

use proptest::prelude::*;

use chiplet_sni::apu::{ApuReplicas, ApuTable, RegionGeometry};
use chiplet_sni::codec::{CoherenceMessage, DataBlock, LinkWidth, MessageType, NodeId};
use chiplet_sni::harness::stats::collect_latency;
use chiplet_sni::noc::fabric::{Fabric, FabricConfig};
use chiplet_sni::noc::topology::{neighbour, route, Port, RouterId, SystemMap, MESH_ROUTERS};
use chiplet_sni::sni::legality::vnet_of;

const SYSTEM: SystemMap = SystemMap::BASELINE;

fn fabric(width: LinkWidth, sni: bool) -> Fabric {
    let mut cfg = FabricConfig::baseline(SYSTEM, width);
    cfg.sni_enabled = sni;
    let apu = ApuReplicas::new(ApuTable::permissive(RegionGeometry::BASELINE), MESH_ROUTERS);
    Fabric::new(cfg, apu)
}

/// Drive the fabric for `ticks`, collecting deliveries as (tick, message).
fn drain(f: &mut Fabric, ticks: u64) -> Vec<(u64, CoherenceMessage)> {
    let mut got = Vec::new();
    for tick in 0..ticks {
        if tick % 4 == 0 {
            assert!(f.interposer_cycle(tick / 4).is_empty());
            got.extend(f.take_mc_deliveries(tick / 4).into_iter().map(|(_, d)| (tick, d.message)));
        }
        f.chiplet_tick(tick);
        got.extend(f.take_core_deliveries(tick).into_iter().map(|d| (tick, d.message)));
    }
    got
}

fn line_homed_at(mc: u8) -> u64 {
    u64::from(mc) << 6
}

fn bfs(from: RouterId, to: RouterId) -> usize {
    let mut dist = BTreeMap::from([(from, 0usize)]);
    let mut queue = VecDeque::from([from]);
    while let Some(r) = queue.pop_front() {
        for port in [Port::North, Port::East, Port::South, Port::West] {
            if let Some(n) = neighbour(r, port) {
                if !dist.contains_key(&n) {
                    dist.insert(n, dist[&r] + 1);
                    queue.push_back(n);
                }
            }
        }
    }
    dist[&to]
}

#[test]
fn xy_routes_are_minimal_and_x_first() {
    for a in 0..MESH_ROUTERS {
        for b in 0..MESH_ROUTERS {
            let (from, to) = (RouterId::from_index(a), RouterId::from_index(b));
            let mut here = from;
            let mut path = Vec::new();
            loop {
                let port = route(here, to).unwrap();
                if port == Port::Local {
                    break;
                }
                path.push(port);
                here = neighbour(here, port).expect("route stays on the mesh");
                assert!(path.len() <= MESH_ROUTERS);
            }
            assert_eq!(here, to);
            assert_eq!(path.len(), bfs(from, to), "{from:?} -> {to:?}");
            let first_y = path.iter().position(|p| matches!(p, Port::North | Port::South));
            if let Some(i) = first_y {
                assert!(path[i..].iter().all(|p| matches!(p, Port::North | Port::South)));
            }
        }
    }
}

fn header_flits(width: LinkWidth) -> u64 {
    match width {
        LinkWidth::W64 => 2,
        LinkWidth::W128 => 1,
    }
}

/// Interposer cycle at which a lone packet's head enters its first router:
/// the cycle its first flit reaches the interface, plus the remaining header
/// flits and the pipeline latency when an SNI is present.
fn oracle_entry(arrival: u64, width: LinkWidth, sni_latency: Option<u64>) -> u64 {
    match sni_latency {
        None => arrival,
        Some(l) => arrival + header_flits(width) - 1 + l,
    }
}

#[test]
fn lone_request_timing_matches_closed_form() {
    for width in [LinkWidth::W64, LinkWidth::W128] {
        for sni in [false, true] {
            for core in [0u8, 9, 27, 56] {
                for mc in 0..4u8 {
                    let mut f = fabric(width, sni);
                    let msg = CoherenceMessage::control(
                        MessageType::GetS,
                        NodeId(core),
                        NodeId::mc(mc),
                        0,
                        line_homed_at(mc),
                    );
                    let id = f.send_from_core(NodeId(core), msg.clone(), 0, false);
                    let got = drain(&mut f, 400);
                    assert_eq!(got.len(), 1);
                    assert_eq!(got[0].1, msg);

                    let chiplet = SYSTEM.chiplet_of(NodeId(core)).unwrap();
                    let hops = bfs(SYSTEM.chiplet_router(chiplet), SYSTEM.mc_router(mc as usize)) as u64;
                    let entry = oracle_entry(1, width, sni.then_some(2));
                    let flits = width.flits_for(msg.msg_type) as u64;
                    let rec = f.packet(id);
                    assert_eq!(rec.entered_network_tick, Some(4 * entry));
                    assert_eq!(rec.hops as u64, hops);
                    assert_eq!(rec.delivered_tick, Some(4 * (entry + flits + hops)));
                    assert_eq!(got[0].0, 4 * (entry + flits + hops));
                    assert!(f.ledger().balances());
                    assert!(f.is_idle());
                }
            }
        }
    }
}

#[test]
fn lone_data_response_timing_matches_closed_form() {
    for width in [LinkWidth::W64, LinkWidth::W128] {
        for sni in [false, true] {
            for mc in 0..4u8 {
                let mut msg = CoherenceMessage::control(
                    MessageType::MemoryData,
                    NodeId::mc(mc),
                    NodeId(3),
                    2,
                    line_homed_at(mc),
                );
                msg.data = Some(DataBlock([7; 8]));
                let mut f = fabric(width, sni);
                let id = f.send_from_mc(mc as usize, msg.clone(), 0)[0];
                let got = drain(&mut f, 400);
                assert_eq!(got.len(), 1);
                assert_eq!(got[0].1, msg);

                let hops = bfs(SYSTEM.mc_router(mc as usize), SYSTEM.chiplet_router(0)) as u64;
                let entry = oracle_entry(0, width, sni.then_some(3));
                let flits = width.flits_for(msg.msg_type) as u64;
                let rec = f.packet(id);
                assert_eq!(rec.entered_network_tick, Some(4 * entry));
                // The chiplet crossbar then moves one 128-bit flit per tick.
                let chiplet_flits = LinkWidth::CHIPLET.flits_for(msg.msg_type) as u64;
                assert_eq!(rec.delivered_tick, Some(4 * (entry + flits + hops) + chiplet_flits));
            }
        }
    }
}

#[test]
fn three_disjoint_packets_latency_by_hand() {
    // Chiplet 0 -> MC 0, chiplet 7 -> MC 3 and MC 1 -> chiplet 1 use
    // disjoint one-hop paths, so each keeps its lone-packet timing.
    let width = LinkWidth::W64;
    let mut f = fabric(width, true);
    let a = CoherenceMessage::control(MessageType::GetS, NodeId(0), NodeId::mc(0), 0, line_homed_at(0));
    let b = CoherenceMessage::control(MessageType::GetX, NodeId(60), NodeId::mc(3), 0, line_homed_at(3));
    let c = CoherenceMessage::control(MessageType::WbAck, NodeId::mc(1), NodeId(8), vnet_of(MessageType::WbAck), line_homed_at(1));
    f.send_from_core(NodeId(0), a, 0, false);
    f.send_from_core(NodeId(60), b, 0, false);
    f.send_from_mc(1, c, 0);
    assert_eq!(drain(&mut f, 400).len(), 3);

    // Requests: first flit at cycle 1, two header flits, SNI-1 adds 2:
    // enters at cycle 4, tail arrives 2 flits + 1 hop later at cycle 7.
    // Ack: SNI-2 entry 0 + 1 + 3 = 4, reaches the hub at cycle 7, then one
    // chiplet tick for its single 128-bit flit.
    let (samples, agg) = collect_latency(f.packets());
    let mut by_packet: Vec<(u64, u64, u64)> = samples.iter().map(|s| (s.queuing, s.in_network, s.hops as u64)).collect();
    by_packet.sort();
    assert_eq!(by_packet, vec![(16, 12, 1), (16, 12, 1), (16, 13, 1)]);
    assert_eq!(agg.packets, 3);
    assert!((agg.mean_queuing - 4.0).abs() < 1e-9);
    assert!((agg.mean_in_network - 37.0 / 12.0).abs() < 1e-9);
    assert!((agg.mean_total - (4.0 + 37.0 / 12.0)).abs() < 1e-9);
}

#[test]
fn contention_serializes_packets_sharing_an_uplink() {
    for width in [LinkWidth::W64, LinkWidth::W128] {
        let mut f = fabric(width, false);
        let flits = width.flits_for(MessageType::GetS.code()) as u64;
        let ids: Vec<_> = (0..4u8)
            .map(|core| {
                let m = CoherenceMessage::control(MessageType::GetS, NodeId(core), NodeId::mc(0), 0, line_homed_at(0));
                f.send_from_core(NodeId(core), m, 0, false)
            })
            .collect();
        assert_eq!(drain(&mut f, 800).len(), 4);
        let mut delivered: Vec<u64> = ids.iter().map(|&id| f.packet(id).delivered_tick.unwrap()).collect();
        delivered.sort();
        let lone = 4 * (1 + flits + 1);
        assert_eq!(delivered[0], lone);
        for pair in delivered.windows(2) {
            assert!(pair[1] >= pair[0] + 4 * flits, "{delivered:?}");
        }
        assert!(f.ledger().balances());
    }
}

#[derive(Clone, Debug)]
struct Send {
    tick: u64,
    from_core: bool,
    node: u8,
    peer: u8,
    line: u64,
    data: bool,
}

fn arb_send() -> impl Strategy<Value = Send> {
    (0u64..200, any::<bool>(), 0u8..64, 0u8..64, 0u64..4096, any::<bool>()).prop_map(
        |(tick, from_core, node, peer, line, data)| Send { tick, from_core, node, peer, line, data },
    )
}

fn build(s: &Send) -> (bool, u8, CoherenceMessage) {
    let address = s.line << 6;
    let home = SYSTEM.home_of(address);
    if s.from_core {
        let kind = if s.data { MessageType::WritebackData } else { MessageType::GetS };
        let mut m = CoherenceMessage::control(kind, NodeId(s.node), home, vnet_of(kind), address);
        if s.data {
            m.data = Some(DataBlock([address; 8]));
        }
        (true, s.node, m)
    } else {
        let kind = if s.data { MessageType::MemoryData } else { MessageType::WbAck };
        let mut m = CoherenceMessage::control(kind, home, NodeId(s.peer), vnet_of(kind), address);
        if s.data {
            m.data = Some(DataBlock([address; 8]));
        }
        (false, home.mc_index().unwrap(), m)
    }
}

fn run_stream(sends: &[Send], width: LinkWidth, sni: bool) -> (Fabric, Vec<String>) {
    let mut f = fabric(width, sni);
    let mut sorted = sends.to_vec();
    sorted.sort_by_key(|s| s.tick);
    let mut next = 0;
    let mut delivered = Vec::new();
    for tick in 0..20_000u64 {
        if tick % 4 == 0 {
            assert!(f.interposer_cycle(tick / 4).is_empty());
            delivered.extend(f.take_mc_deliveries(tick / 4).into_iter().map(|(_, d)| d.message.canonical()));
        }
        while next < sorted.len() && sorted[next].tick <= tick {
            let (core, node, m) = build(&sorted[next]);
            if core {
                f.send_from_core(NodeId(node), m, tick, false);
            } else if tick % 4 == 0 {
                f.send_from_mc(node as usize, m, tick / 4);
            } else {
                break;
            }
            next += 1;
        }
        f.chiplet_tick(tick);
        delivered.extend(f.take_core_deliveries(tick).into_iter().map(|d| d.message.canonical()));
        assert!(f.ledger().balances());
        if next == sorted.len() && tick % 4 == 3 && f.is_idle() {
            break;
        }
    }
    delivered.sort();
    (f, delivered)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn legal_traffic_is_delivered_unchanged_with_or_without_snis(
        sends in proptest::collection::vec(arb_send(), 1..60),
        wide in any::<bool>(),
    ) {
        let width = if wide { LinkWidth::W128 } else { LinkWidth::W64 };
        let mut expected: Vec<String> = sends.iter().map(|s| build(s).2.canonical()).collect();
        expected.sort();
        let (off, got_off) = run_stream(&sends, width, false);
        let (on, got_on) = run_stream(&sends, width, true);
        prop_assert!(off.is_idle() && on.is_idle());
        prop_assert_eq!(&got_off, &expected);
        prop_assert_eq!(&got_on, &expected);
        let ledger = on.ledger();
        prop_assert!(ledger.balances());
        prop_assert_eq!(ledger.blocked_sni, 0);
        prop_assert_eq!(ledger.in_sni + ledger.in_network, 0);
        prop_assert_eq!(ledger.entered_sni, ledger.ejected);
    }

    #[test]
    fn sni_delay_is_exactly_the_pipeline_latency(
        sends in proptest::collection::vec(arb_send(), 1..60),
    ) {
        let (f, _) = run_stream(&sends, LinkWidth::W64, true);
        for r in f.packets().iter().filter(|r| r.interposer) {
            let stamp = r.sni.expect("every interposer packet crosses an SNI");
            let expect = if r.source.mc_index().is_some() { 3 } else { 2 };
            prop_assert_eq!(stamp.added_delay(), Some(expect));
        }
    }
}
