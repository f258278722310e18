//! Open-loop replay of a recorded injection stream.
//!
//! The same messages are handed to the network at the same ticks regardless
//! of what the network does, so two fabrics with different SNI settings see
//! identical offered traffic and their deliveries can be compared directly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::apu::{ApuReplicas, ApuTable};
use crate::codec::NodeId;
use crate::noc::fabric::{Fabric, FabricConfig, PacketRecord};
use crate::noc::topology::MESH_ROUTERS;

use super::engine::{Endpoint, Injection, TICKS_PER_CYCLE};

/// Per-destination delivery sequences from one replay.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub sequences: BTreeMap<NodeId, Vec<String>>,
    pub packets: Vec<PacketRecord>,
    pub delivered: u64,
    pub cycles: u64,
    pub drained: bool,
}

/// Feed `injections` into a fresh fabric and record what each endpoint receives.
pub fn replay(cfg: FabricConfig, table: ApuTable, injections: &[Injection], max_cycles: u64) -> ReplayOutcome {
    let mut fabric = Fabric::new(cfg, ApuReplicas::new(table, MESH_ROUTERS));
    let mut out = ReplayOutcome::default();
    let mut next = 0;
    let mut tick = 0u64;
    loop {
        if tick.is_multiple_of(TICKS_PER_CYCLE) {
            let cycle = tick / TICKS_PER_CYCLE;
            if next == injections.len() && fabric.is_idle() {
                out.drained = true;
                break;
            }
            if cycle >= max_cycles {
                break;
            }
            fabric.interposer_cycle(cycle);
            for (mc, d) in fabric.take_mc_deliveries(cycle) {
                out.delivered += 1;
                out.sequences
                    .entry(NodeId::mc(mc as u8))
                    .or_default()
                    .push(d.message.canonical());
            }
        }
        for d in fabric.take_core_deliveries(tick) {
            out.delivered += 1;
            out.sequences
                .entry(d.message.destination)
                .or_default()
                .push(d.message.canonical());
        }
        while let Some(inj) = injections.get(next).filter(|i| i.tick <= tick) {
            match inj.from {
                Endpoint::Core(c) => {
                    fabric.send_from_core(NodeId(c), inj.message.clone(), tick, inj.malicious);
                }
                Endpoint::Mc(m) => {
                    fabric.send_from_mc(m as usize, inj.message.clone(), tick / TICKS_PER_CYCLE);
                }
            }
            next += 1;
        }
        fabric.chiplet_tick(tick);
        tick += 1;
    }
    out.cycles = tick / TICKS_PER_CYCLE;
    out.packets = fabric.packets().to_vec();
    out
}

/// First destination whose delivery sequence differs, with the index of the first mismatch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceMismatch {
    pub destination: NodeId,
    pub index: usize,
    pub left: Option<String>,
    pub right: Option<String>,
}

/// Neutrality verdict between two replays of the same stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeutralityReport {
    pub compared: u64,
    pub destinations: usize,
    pub mismatches: usize,
    pub first: Option<SequenceMismatch>,
    /// Destinations whose multiset of messages differs, not just their order.
    pub content_mismatches: usize,
}

impl NeutralityReport {
    pub fn identical(&self) -> bool {
        self.mismatches == 0
    }
}

pub fn compare_sequences(a: &ReplayOutcome, b: &ReplayOutcome) -> NeutralityReport {
    let mut keys: Vec<NodeId> = a.sequences.keys().chain(b.sequences.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    let empty = Vec::new();
    let mut report = NeutralityReport {
        compared: a.delivered.min(b.delivered),
        destinations: keys.len(),
        mismatches: 0,
        first: None,
        content_mismatches: 0,
    };
    for k in keys {
        let x = a.sequences.get(&k).unwrap_or(&empty);
        let y = b.sequences.get(&k).unwrap_or(&empty);
        if x == y {
            continue;
        }
        report.mismatches += 1;
        let index = x.iter().zip(y).position(|(p, q)| p != q).unwrap_or(x.len().min(y.len()));
        if report.first.is_none() {
            report.first = Some(SequenceMismatch {
                destination: k,
                index,
                left: x.get(index).cloned(),
                right: y.get(index).cloned(),
            });
        }
        let (mut sx, mut sy) = (x.clone(), y.clone());
        sx.sort();
        sy.sort();
        if sx != sy {
            report.content_mismatches += 1;
        }
    }
    report
}
