//! Home-node directory with a sparse LRU entry store and a fixed-latency DRAM.
//!
//! The directory blocks per line: a request makes the line busy until the
//! requester's UNBLOCK/UNBLOCKS, a granted PUT until the WRITEBACK_DATA.
//! Requests for a busy line wait in arrival order.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::codec::{CoherenceMessage, DataBlock, MessageType, NodeId};
use crate::noc::topology::SystemMap;
use crate::sni::legality::vnet_of;

use super::line_of;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectoryConfig {
    /// Entries per directory; a missing entry forces a broadcast.
    pub capacity: usize,
    /// GETS/GETX that may wait on busy lines before new ones are NACKed.
    pub queue_capacity: usize,
    /// Interposer cycles for a DRAM read.
    pub dram_latency: u64,
}

impl Default for DirectoryConfig {
    fn default() -> Self {
        DirectoryConfig {
            capacity: 512,
            queue_capacity: 32,
            dram_latency: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirState {
    Uncached,
    Shared { owner: Option<NodeId> },
    Exclusive { owner: NodeId },
}

impl DirState {
    pub fn owner(self) -> Option<NodeId> {
        match self {
            DirState::Uncached => None,
            DirState::Shared { owner } => owner,
            DirState::Exclusive { owner } => Some(owner),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Busy {
    Request { requester: NodeId },
    Writeback { owner: NodeId },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectoryStats {
    pub requests: u64,
    pub broadcasts: u64,
    pub unicast_probes: u64,
    pub queue_nacks: u64,
    pub writebacks: u64,
    pub dirty_writebacks: u64,
    pub entry_evictions: u64,
    pub dram_reads: u64,
}

#[derive(Clone, Debug)]
pub struct Directory {
    pub id: NodeId,
    system: SystemMap,
    cfg: DirectoryConfig,
    entries: HashMap<u64, (DirState, u64)>,
    lru: BTreeMap<u64, u64>,
    stamp: u64,
    busy: HashMap<u64, Busy>,
    waiting: HashMap<u64, VecDeque<CoherenceMessage>>,
    waiting_requests: usize,
    memory: HashMap<u64, DataBlock>,
    outbox: BTreeMap<u64, Vec<CoherenceMessage>>,
    corrupt_next_read: bool,
    pub stats: DirectoryStats,
}

impl Directory {
    pub fn new(mc: usize, system: SystemMap, cfg: DirectoryConfig) -> Self {
        Directory {
            id: NodeId::mc(mc as u8),
            system,
            cfg,
            entries: HashMap::new(),
            lru: BTreeMap::new(),
            stamp: 0,
            busy: HashMap::new(),
            waiting: HashMap::new(),
            waiting_requests: 0,
            memory: HashMap::new(),
            outbox: BTreeMap::new(),
            corrupt_next_read: false,
            stats: DirectoryStats::default(),
        }
    }

    pub fn entry(&self, line: u64) -> Option<DirState> {
        self.entries.get(&line).map(|e| e.0)
    }

    pub fn memory(&self, line: u64) -> DataBlock {
        self.memory.get(&line).copied().unwrap_or_default()
    }

    pub fn is_busy(&self, line: u64) -> bool {
        self.busy.contains_key(&line)
    }

    /// Nothing in flight and nothing scheduled.
    pub fn is_quiet(&self) -> bool {
        self.busy.is_empty() && self.outbox.is_empty() && self.waiting_requests == 0
    }

    /// Flip every bit of the next DRAM read (negative control for the oracle).
    pub fn corrupt_next_read(&mut self) {
        self.corrupt_next_read = true;
    }

    /// Messages due by `cycle`.
    pub fn take_outgoing(&mut self, cycle: u64) -> Vec<CoherenceMessage> {
        let later = self.outbox.split_off(&(cycle + 1));
        let due = std::mem::replace(&mut self.outbox, later);
        due.into_values().flatten().collect()
    }

    fn send(&mut self, at: u64, msg: CoherenceMessage) {
        self.outbox.entry(at).or_default().push(msg);
    }

    fn reply(&self, kind: MessageType, to: NodeId, address: u64) -> CoherenceMessage {
        CoherenceMessage::control(kind, self.id, to, vnet_of(kind), address)
    }

    fn read_dram(&mut self, line: u64) -> DataBlock {
        self.stats.dram_reads += 1;
        let mut block = self.memory(line);
        if std::mem::take(&mut self.corrupt_next_read) {
            for w in &mut block.0 {
                *w = !*w;
            }
        }
        block
    }

    fn touch(&mut self, line: u64) {
        if let Some((_, stamp)) = self.entries.get_mut(&line) {
            self.lru.remove(stamp);
            self.stamp += 1;
            *stamp = self.stamp;
            self.lru.insert(self.stamp, line);
        }
    }

    fn store(&mut self, line: u64, state: DirState) {
        if !self.entries.contains_key(&line) && self.entries.len() >= self.cfg.capacity {
            let victim = self
                .lru
                .iter()
                .map(|(&s, &l)| (s, l))
                .find(|(_, l)| !self.busy.contains_key(l));
            if let Some((s, l)) = victim {
                self.lru.remove(&s);
                self.entries.remove(&l);
                self.stats.entry_evictions += 1;
            }
        }
        self.stamp += 1;
        if let Some((_, old)) = self.entries.insert(line, (state, self.stamp)) {
            self.lru.remove(&old);
        }
        self.lru.insert(self.stamp, line);
    }

    /// A message delivered to this home node at `cycle`.
    pub fn receive(&mut self, msg: CoherenceMessage, cycle: u64) {
        let kind = msg.kind().expect("directory received an undefined message type");
        let line = line_of(msg.address);
        match kind {
            MessageType::GetS | MessageType::GetX | MessageType::Put => {
                if self.busy.contains_key(&line) {
                    if kind != MessageType::Put {
                        if self.waiting_requests >= self.cfg.queue_capacity {
                            self.stats.queue_nacks += 1;
                            let nack = self.reply(MessageType::Nack, msg.requester, msg.address);
                            self.send(cycle, nack);
                            return;
                        }
                        self.waiting_requests += 1;
                    }
                    self.waiting.entry(line).or_default().push_back(msg);
                } else {
                    self.start(msg, cycle);
                }
            }
            MessageType::Unblock | MessageType::UnblockS => {
                match self.busy.get(&line) {
                    Some(Busy::Request { requester }) if *requester == msg.requester => {}
                    other => panic!("protocol assertion: {kind} from {} with line {line:#x} in {other:?}", msg.requester),
                }
                let state = if kind == MessageType::Unblock {
                    DirState::Exclusive {
                        owner: msg.requester,
                    }
                } else {
                    DirState::Shared {
                        owner: self.system.is_core(msg.cur_owner).then_some(msg.cur_owner),
                    }
                };
                self.busy.remove(&line);
                self.store(line, state);
                self.drain(line, cycle);
            }
            MessageType::WritebackData => {
                match self.busy.get(&line) {
                    Some(Busy::Writeback { owner }) if *owner == msg.requester => {}
                    other => panic!("protocol assertion: writeback from {} with line {line:#x} in {other:?}", msg.requester),
                }
                self.stats.writebacks += 1;
                if msg.dirty {
                    self.stats.dirty_writebacks += 1;
                    self.memory.insert(line, msg.data.expect("writeback carries data"));
                }
                let next = match self.entry(line) {
                    Some(DirState::Exclusive { owner }) if owner == msg.requester => Some(DirState::Uncached),
                    Some(DirState::Shared { owner: Some(o) }) if o == msg.requester => {
                        Some(DirState::Shared { owner: None })
                    }
                    _ => None,
                };
                if let Some(s) = next {
                    self.store(line, s);
                }
                self.busy.remove(&line);
                self.drain(line, cycle);
            }
            other => panic!("protocol assertion: directory cannot handle {other}"),
        }
    }

    fn drain(&mut self, line: u64, cycle: u64) {
        while !self.busy.contains_key(&line) {
            let Some(queue) = self.waiting.get_mut(&line) else {
                return;
            };
            let msg = queue.pop_front().expect("waiting queues are never empty");
            if queue.is_empty() {
                self.waiting.remove(&line);
            }
            if msg.kind() != Some(MessageType::Put) {
                self.waiting_requests -= 1;
            }
            self.start(msg, cycle);
        }
    }

    fn start(&mut self, msg: CoherenceMessage, cycle: u64) {
        let kind = msg.kind().expect("checked by receive");
        let line = line_of(msg.address);
        let r = msg.requester;
        let addr = msg.address;
        if kind == MessageType::Put {
            let grant = match self.entry(line) {
                Some(state) => state.owner() == Some(r),
                None => true,
            };
            if grant {
                self.busy.insert(line, Busy::Writeback { owner: r });
                let ack = self.reply(MessageType::WbAck, r, addr);
                self.send(cycle, ack);
            } else {
                let nack = self.reply(MessageType::WbNack, r, addr);
                self.send(cycle, nack);
            }
            return;
        }

        self.stats.requests += 1;
        self.busy.insert(line, Busy::Request { requester: r });
        self.touch(line);
        let dram_at = cycle + self.cfg.dram_latency;
        let getx = kind == MessageType::GetX;
        let probe_kind = if getx {
            MessageType::ProbeInv
        } else {
            MessageType::Probe
        };
        let state = self.entry(line);
        match state {
            Some(DirState::Exclusive { owner: o }) => {
                assert_ne!(o, r, "protocol assertion: owner {o} re-requests line {line:#x}");
                self.probe(probe_kind, r, o, addr, cycle);
                let mut ack = self.reply(MessageType::MemoryAck, r, addr);
                ack.cur_owner = o;
                self.send(cycle, ack);
            }
            Some(DirState::Shared { owner: Some(o) }) if !getx => {
                assert_ne!(o, r, "protocol assertion: owner {o} re-requests line {line:#x}");
                self.probe(probe_kind, r, o, addr, cycle);
                let mut ack = self.reply(MessageType::MemoryAck, r, addr);
                ack.cur_owner = o;
                self.send(cycle, ack);
            }
            Some(DirState::Shared { owner: Some(_) }) => {
                self.probe(probe_kind, r, NodeId::BROADCAST, addr, cycle);
                let mut ack = self.reply(MessageType::MemoryAck, r, addr);
                ack.cur_owner = NodeId::BROADCAST;
                self.send(cycle, ack);
            }
            Some(DirState::Shared { owner: None }) if !getx => {
                let data = self.read_dram(line);
                let mut m = self.reply(MessageType::MemoryData, r, addr);
                m.cur_owner = self.id;
                m.data = Some(data);
                self.send(dram_at, m);
            }
            Some(DirState::Uncached) => {
                let data = self.read_dram(line);
                let mut m = self.reply(MessageType::DataExclusive, r, addr);
                m.data = Some(data);
                self.send(dram_at, m);
            }
            Some(DirState::Shared { owner: None }) | None => {
                self.probe(probe_kind, r, NodeId::BROADCAST, addr, cycle);
                let data = self.read_dram(line);
                let mut m = self.reply(MessageType::MemoryData, r, addr);
                m.cur_owner = NodeId::BROADCAST;
                m.data = Some(data);
                self.send(dram_at, m);
            }
        }
    }

    fn probe(&mut self, kind: MessageType, requester: NodeId, to: NodeId, addr: u64, cycle: u64) {
        if to == NodeId::BROADCAST {
            self.stats.broadcasts += 1;
        } else {
            self.stats.unicast_probes += 1;
        }
        let p = CoherenceMessage::control(kind, requester, to, vnet_of(kind), addr);
        self.send(cycle, p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir() -> Directory {
        Directory::new(0, SystemMap::BASELINE, DirectoryConfig::default())
    }

    fn req(kind: MessageType, from: u8, addr: u64) -> CoherenceMessage {
        CoherenceMessage::control(kind, NodeId(from), NodeId::mc(0), vnet_of(kind), addr)
    }

    fn kinds(msgs: &[CoherenceMessage]) -> Vec<(MessageType, NodeId, NodeId)> {
        msgs.iter().map(|m| (m.kind().unwrap(), m.destination, m.cur_owner)).collect()
    }

    #[test]
    fn gets_without_entry_broadcasts_and_reads_dram() {
        let mut d = dir();
        d.receive(req(MessageType::GetS, 3, 0), 10);
        let now = d.take_outgoing(10);
        assert_eq!(kinds(&now), vec![(MessageType::Probe, NodeId::BROADCAST, NodeId(0))]);
        assert_eq!(now[0].requester, NodeId(3));
        assert!(d.take_outgoing(109).is_empty());
        let later = d.take_outgoing(110);
        assert_eq!(kinds(&later), vec![(MessageType::MemoryData, NodeId(3), NodeId::BROADCAST)]);
        assert_eq!(later[0].requester, NodeId::mc(0));
    }

    #[test]
    fn busy_line_serializes_and_unblock_records_owner() {
        let mut d = dir();
        d.receive(req(MessageType::GetX, 3, 0), 0);
        d.receive(req(MessageType::GetS, 9, 0), 1);
        d.take_outgoing(200);
        d.receive(req(MessageType::Unblock, 3, 0), 201);
        assert_eq!(d.entry(0), Some(DirState::Exclusive { owner: NodeId(3) }));
        let probe = d.take_outgoing(201);
        assert_eq!(
            kinds(&probe),
            vec![
                (MessageType::Probe, NodeId(3), NodeId(0)),
                (MessageType::MemoryAck, NodeId(9), NodeId(3))
            ]
        );
        let mut unblock = req(MessageType::UnblockS, 9, 0);
        unblock.cur_owner = NodeId(3);
        d.receive(unblock, 230);
        assert_eq!(d.entry(0), Some(DirState::Shared { owner: Some(NodeId(3)) }));
    }

    #[test]
    fn unblocks_from_shared_fill_records_owner_from_cur_owner() {
        let mut d = dir();
        d.receive(req(MessageType::GetS, 5, 0x40), 0);
        let mut u = req(MessageType::UnblockS, 5, 0x40);
        u.cur_owner = NodeId::mc(0);
        d.receive(u, 150);
        assert_eq!(d.entry(1), Some(DirState::Shared { owner: None }));
    }

    #[test]
    fn put_from_owner_is_acked_and_writeback_updates_memory() {
        let mut d = dir();
        d.receive(req(MessageType::GetX, 3, 0), 0);
        d.receive(req(MessageType::Unblock, 3, 0), 150);
        d.take_outgoing(150);
        d.receive(req(MessageType::Put, 3, 0), 160);
        assert_eq!(kinds(&d.take_outgoing(160))[0].0, MessageType::WbAck);
        let mut wb = req(MessageType::WritebackData, 3, 0);
        wb.dirty = true;
        wb.data = Some(DataBlock([7; 8]));
        d.receive(wb, 170);
        assert_eq!(d.memory(0), DataBlock([7; 8]));
        assert_eq!(d.entry(0), Some(DirState::Uncached));
        d.receive(req(MessageType::GetS, 4, 0), 180);
        let grant = d.take_outgoing(280);
        assert_eq!(kinds(&grant)[0].0, MessageType::DataExclusive);
        assert_eq!(grant[0].data, Some(DataBlock([7; 8])));
    }

    #[test]
    fn put_from_non_owner_is_nacked() {
        let mut d = dir();
        d.receive(req(MessageType::GetX, 3, 0), 0);
        d.receive(req(MessageType::Unblock, 3, 0), 150);
        d.take_outgoing(150);
        d.receive(req(MessageType::Put, 4, 0), 160);
        assert_eq!(kinds(&d.take_outgoing(160))[0].0, MessageType::WbNack);
        assert!(!d.is_busy(0));
    }

    #[test]
    fn getx_on_shared_with_owner_broadcasts_invalidation() {
        let mut d = dir();
        d.receive(req(MessageType::GetS, 3, 0), 0);
        let mut u = req(MessageType::UnblockS, 3, 0);
        u.cur_owner = NodeId(9);
        d.receive(u, 150);
        d.take_outgoing(150);
        d.receive(req(MessageType::GetX, 3, 0), 151);
        assert_eq!(
            kinds(&d.take_outgoing(151)),
            vec![
                (MessageType::ProbeInv, NodeId::BROADCAST, NodeId(0)),
                (MessageType::MemoryAck, NodeId(3), NodeId::BROADCAST)
            ]
        );
    }

    #[test]
    fn full_queue_nacks_new_requests() {
        let mut d = Directory::new(
            0,
            SystemMap::BASELINE,
            DirectoryConfig {
                queue_capacity: 1,
                ..DirectoryConfig::default()
            },
        );
        d.receive(req(MessageType::GetX, 1, 0), 0);
        d.receive(req(MessageType::GetX, 2, 0), 0);
        d.receive(req(MessageType::GetX, 3, 0), 0);
        let out = d.take_outgoing(0);
        let nack = out.iter().find(|m| m.kind() == Some(MessageType::Nack)).unwrap();
        assert_eq!((nack.requester, nack.destination), (NodeId::mc(0), NodeId(3)));
        assert_eq!(d.stats.queue_nacks, 1);
    }

    #[test]
    fn sparse_capacity_evicts_least_recent_entry() {
        let mut d = Directory::new(
            0,
            SystemMap::BASELINE,
            DirectoryConfig {
                capacity: 2,
                ..DirectoryConfig::default()
            },
        );
        for (i, line) in [0u64, 4, 8].into_iter().enumerate() {
            d.receive(req(MessageType::GetS, i as u8, line * 64), 0);
            d.receive(req(MessageType::Unblock, i as u8, line * 64), 1);
        }
        assert_eq!(d.entry(0), None);
        assert!(d.entry(4).is_some() && d.entry(8).is_some());
        assert_eq!(d.stats.entry_evictions, 1);
    }
}
