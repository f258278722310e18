//! Cycle-level model of the lookup/check/modify pipeline.
//!
//! Flits arrive one per interposer cycle. Once the final header flit is in
//! (cycle `A`) the verdict is known; every flit of an allowed packet leaves
//! at `max(arrival, A) + latency`. A violating packet is held back entirely
//! and the violation is raised at `A + 2`, after lookup and check.

use std::collections::VecDeque;

use crate::apu::ApuTable;
use crate::codec::{
    encode, extract_stage, CoherenceMessage, Flit, LinkWidth, NodeId, PacketId, TypeCode,
};
use crate::noc::topology::Port;

use super::{evaluate, SniConfig, SniVerdict, ViolationRecord};

/// Cycles from final header arrival to the verdict (lookup, check).
pub const CHECK_STAGES: u64 = 2;

/// Reported once per packet, when its header is complete.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeaderEvent {
    pub packet: PacketId,
    pub header_arrival: u64,
    pub head_release: Option<u64>,
    pub message: CoherenceMessage,
    pub verdict: SniVerdict,
}

#[derive(Clone, Copy, Debug)]
enum Fate {
    Pass { header_arrival: u64 },
    Replace { header_arrival: u64 },
    Blocked,
}

#[derive(Clone, Debug)]
struct Incoming {
    packet: PacketId,
    received: usize,
    fate: Option<Fate>,
    replacement: Vec<Flit>,
}

#[derive(Clone, Copy, Debug)]
struct Held {
    flit: Flit,
    release: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct SniPipeline {
    pub cfg: SniConfig,
    /// When false the interface forwards flits untouched and adds no delay.
    pub enabled: bool,
    width: LinkWidth,
    current: Option<Incoming>,
    held: VecDeque<Held>,
    raised: Vec<ViolationRecord>,
    absorbed: u64,
    rewritten: u64,
}

impl SniPipeline {
    pub fn new(cfg: SniConfig, width: LinkWidth, enabled: bool) -> Self {
        SniPipeline {
            cfg,
            enabled,
            width,
            current: None,
            held: VecDeque::new(),
            raised: Vec::new(),
            absorbed: 0,
            rewritten: 0,
        }
    }

    /// Flits inside the pipeline.
    pub fn occupancy(&self) -> usize {
        self.held.len()
    }

    /// Flits of violating packets, consumed without release.
    pub fn absorbed(&self) -> u64 {
        self.absorbed
    }

    /// Flits whose payload was replaced by a synthesized NACK.
    pub fn rewritten(&self) -> u64 {
        self.rewritten
    }

    /// Take one flit off the upstream link at `cycle`.
    pub fn accept(&mut self, flit: Flit, cycle: u64, table: &ApuTable) -> Option<HeaderEvent> {
        if !self.enabled {
            self.held.push_back(Held {
                flit,
                release: Some(cycle),
            });
            return None;
        }
        if flit.position.is_head() {
            self.current = Some(Incoming {
                packet: flit.packet_id,
                received: 0,
                fate: None,
                replacement: Vec::new(),
            });
        }
        let latency = self.cfg.latency_cycles;
        let header_flits = self.width.header_flits();
        let cur = self
            .current
            .as_mut()
            .expect("a packet's flits follow its head on the link");
        debug_assert_eq!(cur.packet, flit.packet_id);
        let index = cur.received;
        cur.received += 1;
        let tail = flit.position.is_tail();

        let mut event = None;
        match cur.fate {
            Some(Fate::Blocked) => self.absorbed += 1,
            Some(Fate::Pass { header_arrival }) => self.held.push_back(Held {
                flit,
                release: Some(cycle.max(header_arrival) + latency),
            }),
            Some(Fate::Replace { header_arrival }) => {
                let mut out = cur.replacement.get(index).copied().unwrap_or(flit);
                out.packet_id = flit.packet_id;
                out.meta = flit.meta;
                self.rewritten += 1;
                self.held.push_back(Held {
                    flit: out,
                    release: Some(cycle.max(header_arrival) + latency),
                });
            }
            None => {
                self.held.push_back(Held {
                    flit,
                    release: None,
                });
                if cur.received == header_flits {
                    event = Some(self.decide(cycle, table));
                }
            }
        }
        if tail {
            self.current = None;
        }
        event
    }

    fn decide(&mut self, cycle: u64, table: &ApuTable) -> HeaderEvent {
        let latency = self.cfg.latency_cycles;
        let cur = self.current.as_mut().expect("deciding an arriving packet");
        let packet = cur.packet;
        let pending: Vec<usize> = (0..self.held.len())
            .filter(|&i| self.held[i].release.is_none())
            .collect();
        let header_flits: Vec<Flit> = pending.iter().map(|&i| self.held[i].flit).collect();
        let h = extract_stage(&header_flits, self.width, self.width.header_flits() as u8);
        let message = CoherenceMessage {
            msg_type: h.msg_type.unwrap_or(TypeCode(0)),
            requester: h.requester.unwrap_or(NodeId(0)),
            destination: h.destination.unwrap_or(NodeId(0)),
            vnet: h.vnet.unwrap_or(0),
            address: h.address.unwrap_or(0),
            cur_owner: h.cur_owner.unwrap_or(NodeId(0)),
            dirty: h.dirty.unwrap_or(false),
            data: None,
        };
        let verdict = evaluate(&message, &self.cfg, table);
        let release = cycle + latency;
        let head_release = match &verdict {
            SniVerdict::Allow => {
                cur.fate = Some(Fate::Pass {
                    header_arrival: cycle,
                });
                for &i in &pending {
                    self.held[i].release = Some(release);
                }
                Some(release)
            }
            SniVerdict::Rewrite { replacement, .. } => {
                let stream = encode(replacement, self.width).expect("synthesized NACK encodes");
                cur.replacement = stream.flits;
                cur.fate = Some(Fate::Replace {
                    header_arrival: cycle,
                });
                for (k, &i) in pending.iter().enumerate() {
                    let original = self.held[i].flit;
                    let mut out = cur.replacement.get(k).copied().unwrap_or(original);
                    out.packet_id = original.packet_id;
                    out.meta = original.meta;
                    self.held[i] = Held {
                        flit: out,
                        release: Some(release),
                    };
                    self.rewritten += 1;
                }
                Some(release)
            }
            SniVerdict::Violation { threat, detail } => {
                cur.fate = Some(Fate::Blocked);
                self.absorbed += pending.len() as u64;
                self.held.retain(|h| h.release.is_some());
                self.raised.push(ViolationRecord {
                    cycle: cycle + CHECK_STAGES.min(latency.max(1)),
                    router: self.cfg.router,
                    port: Port::Local,
                    sni: self.cfg.kind.to_string(),
                    threat: Some(*threat),
                    detail: detail.clone(),
                    message: message.canonical(),
                });
                None
            }
        };
        HeaderEvent {
            packet,
            header_arrival: cycle,
            head_release,
            message,
            verdict,
        }
    }

    /// Flits leaving the pipeline at `cycle`, plus violations due now.
    pub fn advance(&mut self, cycle: u64) -> (Vec<Flit>, Vec<ViolationRecord>) {
        let mut out = Vec::new();
        while let Some(front) = self.held.front() {
            match front.release {
                Some(r) if r <= cycle => {
                    out.push(self.held.pop_front().expect("front exists").flit);
                }
                _ => break,
            }
        }
        let (due, later): (Vec<_>, Vec<_>) =
            self.raised.drain(..).partition(|v| v.cycle <= cycle);
        self.raised = later;
        (out, due)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apu::{ApuEntry, RegionGeometry, RegionId};
    use crate::codec::MessageType;
    use crate::noc::topology::SystemMap;
    use crate::sni::ThreatClass;

    fn stream(msg: &CoherenceMessage, width: LinkWidth, id: u64) -> Vec<Flit> {
        encode(msg, width).unwrap().with_packet_id(PacketId(id)).flits
    }

    fn gets(req: u8) -> CoherenceMessage {
        CoherenceMessage::control(MessageType::GetS, NodeId(req), NodeId::mc(1), 0, 0x40)
    }

    fn run(p: &mut SniPipeline, flits: &[Flit], start: u64, table: &ApuTable) -> Vec<(u64, Flit)> {
        let mut out = Vec::new();
        for cycle in start..start + 20 {
            if let Some(f) = flits.get((cycle - start) as usize) {
                p.accept(*f, cycle, table);
            }
            let (fl, _) = p.advance(cycle);
            out.extend(fl.into_iter().map(|f| (cycle, f)));
        }
        out
    }

    #[test]
    fn clean_gets_leaves_two_cycles_after_header() {
        let t = ApuTable::permissive(RegionGeometry::BASELINE);
        for (width, header_cycle) in [(LinkWidth::W128, 5), (LinkWidth::W64, 6)] {
            let mut p = SniPipeline::new(SniConfig::sni1(SystemMap::BASELINE, 0), width, true);
            let out = run(&mut p, &stream(&gets(3), width, 1), 5, &t);
            assert!(out.iter().all(|(c, _)| *c == header_cycle + 2), "{out:?}");
            assert_eq!(out.len(), width.header_flits());
        }
    }

    #[test]
    fn data_flits_follow_their_arrival() {
        let t = ApuTable::permissive(RegionGeometry::BASELINE);
        let mut msg = CoherenceMessage::control(MessageType::WritebackData, NodeId(1), NodeId::mc(1), 2, 0x40);
        msg.data = Some(Default::default());
        let mut p = SniPipeline::new(SniConfig::sni1(SystemMap::BASELINE, 0), LinkWidth::W64, true);
        let out = run(&mut p, &stream(&msg, LinkWidth::W64, 2), 0, &t);
        let cycles: Vec<u64> = out.iter().map(|(c, _)| *c).collect();
        assert_eq!(cycles, vec![3, 3, 4, 5, 6, 7, 8, 9, 10, 11]);
    }

    #[test]
    fn rewritten_probe_is_a_nack_after_three_cycles() {
        let mut t = ApuTable::permissive(RegionGeometry::BASELINE);
        t.set_entry(RegionId(0), "RW,RW,--,RW,RW,RW,RW,RW".parse::<ApuEntry>().unwrap()).unwrap();
        let probe = CoherenceMessage::control(MessageType::Probe, NodeId(3), NodeId(16), 1, 0x40);
        let mut p = SniPipeline::new(SniConfig::sni2(SystemMap::BASELINE, 1), LinkWidth::W128, true);
        let out = run(&mut p, &stream(&probe, LinkWidth::W128, 7), 0, &t);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, 3);
        let nack = crate::codec::decode(&crate::codec::FlitStream {
            width: LinkWidth::W128,
            flits: vec![out[0].1],
        })
        .unwrap();
        assert_eq!(nack.kind(), Some(MessageType::Nack));
        assert_eq!(nack.destination, NodeId(3));
        assert_eq!(out[0].1.packet_id, PacketId(7));
    }

    #[test]
    fn violation_releases_nothing_and_halts_at_a_plus_two() {
        let t = ApuTable::permissive(RegionGeometry::BASELINE);
        let mut bad = gets(3);
        bad.msg_type = crate::codec::TypeCode(30);
        let flits = stream(&bad, LinkWidth::W64, 9);
        let mut p = SniPipeline::new(SniConfig::sni1(SystemMap::BASELINE, 0), LinkWidth::W64, true);
        let mut halts = Vec::new();
        let mut released = 0;
        for cycle in 0..10 {
            if let Some(f) = flits.get(cycle as usize) {
                p.accept(*f, cycle, &t);
            }
            let (fl, v) = p.advance(cycle);
            released += fl.len();
            halts.extend(v.into_iter().map(|v| (cycle, v.threat)));
        }
        assert_eq!(released, 0);
        assert_eq!(halts, vec![(3, Some(ThreatClass::Malformed))]);
        assert_eq!(p.absorbed(), 2);
    }

    #[test]
    fn disabled_interface_is_transparent() {
        let t = ApuTable::permissive(RegionGeometry::BASELINE);
        let mut bad = gets(40);
        bad.msg_type = crate::codec::TypeCode(30);
        let mut p = SniPipeline::new(SniConfig::sni1(SystemMap::BASELINE, 0), LinkWidth::W64, false);
        let out = run(&mut p, &stream(&bad, LinkWidth::W64, 1), 4, &t);
        let cycles: Vec<u64> = out.iter().map(|(c, _)| *c).collect();
        assert_eq!(cycles, vec![4, 5]);
    }
}
