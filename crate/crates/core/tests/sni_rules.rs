//! Rule-check invariants over random headers and random permission tables.

use proptest::prelude::*;

use chiplet_sni::apu::{ApuTable, Permission, RegionGeometry, RegionId};
use chiplet_sni::codec::{CoherenceMessage, MessageType, NodeId, TypeCode};
use chiplet_sni::noc::topology::SystemMap;
use chiplet_sni::sni::legality::vnet_of;
use chiplet_sni::sni::{evaluate, pcm_check, sni2_filter, SniConfig, SniVerdict, ThreatClass};

const SYSTEM: SystemMap = SystemMap::BASELINE;
const GEOMETRY: RegionGeometry = RegionGeometry::BASELINE;

fn arb_perm() -> impl Strategy<Value = Permission> {
    prop_oneof![Just(Permission::NoAccess), Just(Permission::ReadOnly), Just(Permission::ReadWrite)]
}

fn arb_table() -> impl Strategy<Value = ApuTable> {
    proptest::collection::vec(arb_perm(), GEOMETRY.regions * 8).prop_map(|cells| {
        let mut t = ApuTable::new(GEOMETRY);
        for (i, p) in cells.into_iter().enumerate() {
            t.set(RegionId(i / 8), i % 8, p).unwrap();
        }
        t
    })
}

fn arb_message() -> impl Strategy<Value = CoherenceMessage> {
    (0u8..32, any::<u8>(), any::<u8>(), 0u8..4, any::<u64>(), any::<u8>(), any::<bool>()).prop_map(
        |(ty, req, dst, vnet, address, owner, dirty)| CoherenceMessage {
            msg_type: TypeCode(ty),
            requester: NodeId(req),
            destination: NodeId(dst),
            vnet,
            address,
            cur_owner: NodeId(owner),
            dirty,
            data: None,
        },
    )
}

fn any_sni() -> impl Strategy<Value = SniConfig> {
    prop_oneof![
        (0usize..8).prop_map(|c| SniConfig::sni1(SYSTEM, c)),
        (0usize..4).prop_map(|m| SniConfig::sni2(SYSTEM, m)),
    ]
}

fn request(kind: MessageType, core: u8, address: u64) -> CoherenceMessage {
    CoherenceMessage::control(kind, NodeId(core), SYSTEM.home_of(address), vnet_of(kind), address)
}

proptest! {
    #[test]
    fn undefined_type_codes_are_malformed(mut msg in arb_message(), code in 22u8..32, cfg in any_sni()) {
        msg.msg_type = TypeCode(code);
        prop_assert_eq!(pcm_check(&msg, &cfg, &ApuTable::permissive(GEOMETRY)).threat(), Some(ThreatClass::Malformed));
    }

    #[test]
    fn wrong_vnet_is_malformed(mut msg in arb_message(), cfg in any_sni(), shift in 1u8..4) {
        let Some(kind) = msg.kind() else { return Ok(()) };
        msg.vnet = (vnet_of(kind) + shift) % 4;
        prop_assert_eq!(pcm_check(&msg, &cfg, &ApuTable::permissive(GEOMETRY)).threat(), Some(ThreatClass::Malformed));
    }

    #[test]
    fn out_of_range_addresses_are_malformed(
        kind in prop::sample::select(MessageType::ALL.to_vec()),
        core in 0u8..64,
        address in (1u64 << 32)..,
    ) {
        let mut msg = request(MessageType::GetS, core, 0);
        msg.msg_type = kind.code();
        msg.vnet = vnet_of(kind);
        msg.address = address;
        let cfg = SniConfig::sni1(SYSTEM, core as usize / 8);
        prop_assert_eq!(pcm_check(&msg, &cfg, &ApuTable::permissive(GEOMETRY)).threat(), Some(ThreatClass::Malformed));
    }

    #[test]
    fn every_verdict_is_deterministic(msg in arb_message(), cfg in any_sni(), table in arb_table()) {
        prop_assert_eq!(evaluate(&msg, &cfg, &table), evaluate(&msg, &cfg, &table));
    }

    #[test]
    fn permitted_requests_pass(
        core in 0u8..64,
        line in 0u64..(1 << 26),
        kind in prop::sample::select(vec![MessageType::GetS, MessageType::GetX, MessageType::GetInstr]),
    ) {
        let cfg = SniConfig::sni1(SYSTEM, core as usize / 8);
        let msg = request(kind, core, line << 6);
        prop_assert_eq!(evaluate(&msg, &cfg, &ApuTable::permissive(GEOMETRY)), SniVerdict::Allow);
    }

    #[test]
    fn foreign_requesters_are_masquerading(
        chiplet in 0usize..8,
        requester in any::<u8>(),
        line in 0u64..(1 << 26),
        wrong_home in any::<bool>(),
    ) {
        prop_assume!(!SYSTEM.cores_of(chiplet).contains(&requester));
        let cfg = SniConfig::sni1(SYSTEM, chiplet);
        let mut msg = request(MessageType::GetS, requester, line << 6);
        if wrong_home {
            // A diverted destination does not mask the identity check.
            msg.destination = NodeId::mc((SYSTEM.home_of(msg.address).mc_index().unwrap() + 1) % 4);
        }
        prop_assert_eq!(pcm_check(&msg, &cfg, &ApuTable::permissive(GEOMETRY)).threat(), Some(ThreatClass::Masquerading));
    }

    #[test]
    fn requests_must_go_to_the_home_directory(core in 0u8..64, line in 0u64..(1 << 26), other in 1u8..4) {
        let cfg = SniConfig::sni1(SYSTEM, core as usize / 8);
        let mut msg = request(MessageType::GetX, core, line << 6);
        msg.destination = NodeId::mc((msg.destination.mc_index().unwrap() + other) % 4);
        prop_assert_eq!(pcm_check(&msg, &cfg, &ApuTable::permissive(GEOMETRY)).threat(), Some(ThreatClass::Diverting));
    }

    #[test]
    fn region_permissions_gate_reads_and_writes(table in arb_table(), core in 0u8..64, line in 0u64..(1 << 26)) {
        let chiplet = core as usize / 8;
        let cfg = SniConfig::sni1(SYSTEM, chiplet);
        let address = line << 6;
        let p = table.permission(address, chiplet).unwrap();
        let gets = pcm_check(&request(MessageType::GetS, core, address), &cfg, &table);
        let getx = pcm_check(&request(MessageType::GetX, core, address), &cfg, &table);
        prop_assert_eq!(gets.threat(), (p < Permission::ReadOnly).then_some(ThreatClass::Modifying));
        prop_assert_eq!(getx.threat(), (p < Permission::ReadWrite).then_some(ThreatClass::Modifying));
    }

    #[test]
    fn probe_copies_to_blind_chiplets_become_nacks(
        table in arb_table(),
        requester in 0u8..64,
        line in 0u64..(1 << 26),
        target in 0usize..8,
        invalidate in any::<bool>(),
    ) {
        let address = line << 6;
        let home = SYSTEM.home_of(address).mc_index().unwrap() as usize;
        let kind = if invalidate { MessageType::ProbeInv } else { MessageType::Probe };
        let mut probe = CoherenceMessage::control(kind, NodeId(requester), SYSTEM.first_core(target), vnet_of(kind), address);
        probe.cur_owner = NodeId::BROADCAST;
        let cfg = SniConfig::sni2(SYSTEM, home);
        let verdict = sni2_filter(&probe, target, &cfg, &table);
        if table.permission(address, target).unwrap() == Permission::NoAccess {
            let SniVerdict::Rewrite { replacement, new_destination } = verdict else {
                return Err(TestCaseError::fail("probe to a blind chiplet was not rewritten"));
            };
            prop_assert_eq!(new_destination, NodeId(requester));
            prop_assert_eq!(replacement.kind(), Some(MessageType::Nack));
            prop_assert_eq!(replacement.requester, SYSTEM.first_core(target));
            prop_assert_eq!(replacement.address, address);
            prop_assert_eq!(replacement.vnet, vnet_of(MessageType::Nack));
        } else {
            prop_assert_eq!(verdict, SniVerdict::Allow);
        }
    }
}

#[test]
fn filtering_disabled_lets_every_probe_through() {
    let mut table = ApuTable::permissive(GEOMETRY);
    table.set(RegionId(0), 3, Permission::NoAccess).unwrap();
    let probe = CoherenceMessage::control(MessageType::Probe, NodeId(1), SYSTEM.first_core(3), vnet_of(MessageType::Probe), 0);
    let mut cfg = SniConfig::sni2(SYSTEM, 0);
    assert!(matches!(sni2_filter(&probe, 3, &cfg, &table), SniVerdict::Rewrite { .. }));
    cfg.probe_filtering = false;
    assert_eq!(sni2_filter(&probe, 3, &cfg, &table), SniVerdict::Allow);
}
