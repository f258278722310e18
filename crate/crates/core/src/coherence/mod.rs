//! Simplified MOESI-Hammer protocol engine.
//!
//! Each core has one private cache level and issues one operation at a
//! time. Transient behaviour is carried by a per-core transaction with an
//! answer counter. Probes are answered once per chiplet by a chiplet agent
//! that snoops every core on the die. The `docs/protocol.md` table lists
//! every transition modelled here.

pub mod cache;
pub mod directory;
pub mod oracle;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{CoherenceMessage, DataBlock, MessageType, NodeId, DATA_WORDS};
use crate::noc::topology::{SystemMap, LINE_BYTES};
use crate::sni::legality::vnet_of;

pub use cache::{Cache, CacheGeometry, LineState, WbState};
pub use directory::{DirState, Directory, DirectoryConfig, DirectoryStats};
pub use oracle::{oracle_check, Completion, Divergence, MemOp, MemoryOracle, OpKind};

pub fn line_of(address: u64) -> u64 {
    address / LINE_BYTES
}

fn word_of(address: u64) -> usize {
    ((address % LINE_BYTES) / 8) as usize % DATA_WORDS
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoherenceConfig {
    pub cache: CacheGeometry,
    pub directory: DirectoryConfig,
    /// Interposer cycles a core waits before reissuing a NACKed request.
    pub nack_backoff: u64,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        CoherenceConfig {
            cache: CacheGeometry { sets: 64, ways: 4 },
            directory: DirectoryConfig::default(),
            nack_backoff: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Issue {
    Hit(Completion),
    Miss,
    /// The line is still in the writeback buffer; try again later.
    Stalled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolStats {
    pub hits: u64,
    pub misses: u64,
    pub upgrades: u64,
    pub puts: u64,
    pub retries: u64,
    pub probes_handled: u64,
    /// NACKs received in place of a probe answer.
    pub probe_nacks: u64,
    pub supplier_answers: u64,
}

#[derive(Clone, Debug)]
struct Transaction {
    op: MemOp,
    line: u64,
    request: MessageType,
    issued_tick: u64,
    needed: Option<u32>,
    answers: u32,
    supplier: Option<(NodeId, DataBlock, bool)>,
    memory: Option<DataBlock>,
    exclusive_grant: bool,
    broadcast: bool,
    shared: bool,
    retry_at: Option<u64>,
}

#[derive(Clone, Debug)]
struct CoreCtl {
    id: NodeId,
    cache: Cache,
    txn: Option<Transaction>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwmrViolation {
    pub line: u64,
    pub holders: Vec<(NodeId, LineState)>,
    pub reason: String,
}

impl fmt::Display for SwmrViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {:#x}: {} (", self.line, self.reason)?;
        for (i, (n, s)) in self.holders.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{n}:{s:?}")?;
        }
        f.write_str(")")
    }
}

pub struct Protocol {
    system: SystemMap,
    cfg: CoherenceConfig,
    cores: Vec<CoreCtl>,
    pub directories: Vec<Directory>,
    outbox: Vec<(NodeId, CoherenceMessage)>,
    completions: Vec<Completion>,
    seq: u64,
    touched: BTreeSet<u64>,
    pub stats: ProtocolStats,
}

impl Protocol {
    pub fn new(system: SystemMap, cfg: CoherenceConfig) -> Self {
        Protocol {
            system,
            cfg,
            cores: (0..system.cores())
                .map(|i| CoreCtl {
                    id: NodeId::core(i as u8),
                    cache: Cache::new(cfg.cache),
                    txn: None,
                })
                .collect(),
            directories: (0..NodeId::MC_COUNT as usize)
                .map(|m| Directory::new(m, system, cfg.directory))
                .collect(),
            outbox: Vec::new(),
            completions: Vec::new(),
            seq: 0,
            touched: BTreeSet::new(),
            stats: ProtocolStats::default(),
        }
    }

    pub fn config(&self) -> &CoherenceConfig {
        &self.cfg
    }

    fn core(&mut self, id: NodeId) -> &mut CoreCtl {
        &mut self.cores[id.0 as usize]
    }

    pub fn is_idle(&self, core: NodeId) -> bool {
        self.cores[core.0 as usize].txn.is_none()
    }

    pub fn state(&self, core: NodeId, line: u64) -> LineState {
        self.cores[core.0 as usize].cache.state(line)
    }

    /// Messages the cores produced since the last call, tagged with the sender.
    pub fn take_core_outgoing(&mut self) -> Vec<(NodeId, CoherenceMessage)> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_completions(&mut self) -> Vec<Completion> {
        std::mem::take(&mut self.completions)
    }

    /// Lines whose cached state changed since the last call.
    pub fn take_touched(&mut self) -> BTreeSet<u64> {
        std::mem::take(&mut self.touched)
    }

    /// Directory messages due by `cycle`, tagged with the controller index.
    pub fn take_directory_outgoing(&mut self, cycle: u64) -> Vec<(usize, CoherenceMessage)> {
        let mut out = Vec::new();
        for (m, d) in self.directories.iter_mut().enumerate() {
            out.extend(d.take_outgoing(cycle).into_iter().map(|msg| (m, msg)));
        }
        out
    }

    pub fn directory_receive(&mut self, mc: usize, msg: CoherenceMessage, cycle: u64) {
        self.directories[mc].receive(msg, cycle);
    }

    fn send(&mut self, from: NodeId, msg: CoherenceMessage) {
        self.outbox.push((from, msg));
    }

    fn request(&self, core: NodeId, kind: MessageType, address: u64) -> CoherenceMessage {
        let home = self.system.home_of(address);
        CoherenceMessage::control(kind, core, home, vnet_of(kind), address & !(LINE_BYTES - 1))
    }

    fn perform(&mut self, core: NodeId, op: MemOp, data: &mut DataBlock, issued_tick: u64, tick: u64, hit: bool) -> Completion {
        let w = word_of(op.address);
        let value = match op.kind {
            OpKind::Read => data.0[w],
            OpKind::Write(v) => {
                data.0[w] = v;
                v
            }
        };
        let c = Completion {
            seq: self.seq,
            core,
            op,
            value,
            issued_tick,
            performed_tick: tick,
            hit,
        };
        self.seq += 1;
        self.completions.push(c);
        c
    }

    /// Start `op` at an idle core.
    pub fn issue(&mut self, core: NodeId, op: MemOp, tick: u64) -> Issue {
        let line = line_of(op.address);
        let ctl = self.core(core);
        assert!(ctl.txn.is_none(), "core {core} issued while busy");
        if ctl.cache.writebacks.contains_key(&line) {
            return Issue::Stalled;
        }
        let state = ctl.cache.state(line);
        let hit = match op.kind {
            OpKind::Read => state.can_read(),
            OpKind::Write(_) => state.can_write(),
        };
        if hit {
            ctl.cache.touch(line);
            let l = ctl.cache.get_mut(line).expect("hit line present");
            if op.is_write() {
                l.state = LineState::M;
            }
            let mut data = l.data;
            let c = self.perform(core, op, &mut data, tick, tick, true);
            self.core(core).cache.get_mut(line).expect("hit line present").data = data;
            self.stats.hits += 1;
            self.touched.insert(line);
            return Issue::Hit(c);
        }

        let request = if op.is_write() {
            MessageType::GetX
        } else {
            MessageType::GetS
        };
        match state {
            LineState::S | LineState::O => {
                let l = ctl.cache.get_mut(line).expect("upgrading line present");
                l.state = if state == LineState::S {
                    LineState::SM
                } else {
                    LineState::OM
                };
                ctl.cache.touch(line);
                self.stats.upgrades += 1;
            }
            LineState::I => {
                let pending = if op.is_write() {
                    LineState::IM
                } else {
                    LineState::IS
                };
                if let Some(victim) = ctl.cache.allocate(line, pending, DataBlock::default()) {
                    if let Some(wb) = WbState::from_evicted(victim.state) {
                        ctl.cache.writebacks.insert(victim.line, (wb, victim.data));
                        let put = self.request(core, MessageType::Put, victim.line * LINE_BYTES);
                        self.send(core, put);
                        self.stats.puts += 1;
                    } else {
                        assert_eq!(victim.state, LineState::S, "evicting a transient line");
                    }
                    self.touched.insert(victim.line);
                }
            }
            other => panic!("core {core} issued with line {line:#x} in {other:?}"),
        }
        self.stats.misses += 1;
        self.core(core).txn = Some(Transaction {
            op,
            line,
            request,
            issued_tick: tick,
            needed: None,
            answers: 0,
            supplier: None,
            memory: None,
            exclusive_grant: false,
            broadcast: false,
            shared: false,
            retry_at: None,
        });
        let msg = self.request(core, request, op.address);
        self.send(core, msg);
        self.touched.insert(line);
        Issue::Miss
    }

    /// Reissue requests whose NACK backoff ends at `tick`.
    pub fn retry_due(&mut self, tick: u64) {
        let mut due = Vec::new();
        for c in &mut self.cores {
            if let Some(t) = &mut c.txn {
                if t.retry_at == Some(tick) {
                    t.retry_at = None;
                    due.push((c.id, t.request, t.op.address));
                }
            }
        }
        for (core, kind, addr) in due {
            self.stats.retries += 1;
            let msg = self.request(core, kind, addr);
            self.send(core, msg);
        }
    }

    /// A message delivered to `core` at `tick`.
    pub fn core_receive(&mut self, core: NodeId, msg: CoherenceMessage, tick: u64) {
        let kind = msg
            .kind()
            .unwrap_or_else(|| panic!("core {core} received undefined type {}", msg.msg_type));
        let line = line_of(msg.address);
        match kind {
            MessageType::Probe | MessageType::ProbeInv => {
                self.chiplet_agent(core, &msg);
                return;
            }
            MessageType::WbAck | MessageType::WbNack => {
                let (wb, data) = self
                    .core(core)
                    .cache
                    .writebacks
                    .remove(&line)
                    .unwrap_or_else(|| panic!("core {core}: {kind} without a pending writeback"));
                if kind == MessageType::WbAck {
                    let mut m = self.request(core, MessageType::WritebackData, msg.address);
                    m.dirty = wb.is_dirty();
                    m.data = Some(data);
                    self.send(core, m);
                } else {
                    assert_eq!(wb, WbState::II, "core {core}: owner's writeback refused");
                }
                return;
            }
            _ => {}
        }

        let backoff = self.cfg.nack_backoff * 4;
        let system = self.system;
        let t = self
            .core(core)
            .txn
            .as_mut()
            .filter(|t| t.line == line)
            .unwrap_or_else(|| panic!("core {core}: unexpected {kind} for line {line:#x}"));
        match kind {
            MessageType::Nack if msg.requester.is_mc() => {
                assert!(t.needed.is_none() && t.answers == 0, "NACK after the request was accepted");
                t.retry_at = Some(tick + backoff);
                return;
            }
            MessageType::Nack => {
                t.answers += 1;
                self.stats.probe_nacks += 1;
            }
            MessageType::MemoryData | MessageType::MemoryAck => {
                t.needed = Some(if msg.cur_owner == NodeId::BROADCAST {
                    t.broadcast = true;
                    system.chiplets as u32
                } else if system.is_core(msg.cur_owner) {
                    1
                } else {
                    0
                });
                t.memory = msg.data;
            }
            MessageType::DataExclusive => {
                t.needed = Some(0);
                t.memory = msg.data;
                t.exclusive_grant = true;
            }
            MessageType::Data | MessageType::DataShared => {
                t.answers += 1;
                assert!(t.supplier.is_none(), "two suppliers for line {line:#x}");
                t.supplier = Some((msg.requester, msg.data.expect("data message"), msg.dirty));
                t.shared |= kind == MessageType::DataShared;
            }
            MessageType::Ack => t.answers += 1,
            MessageType::SharedAck => {
                t.answers += 1;
                t.shared = true;
            }
            other => panic!("core {core}: unexpected {other}"),
        }
        self.try_complete(core, tick);
    }

    fn try_complete(&mut self, core: NodeId, tick: u64) {
        let ctl = self.core(core);
        let t = ctl.txn.as_ref().expect("transaction open");
        match t.needed {
            Some(n) if t.answers == n => {}
            Some(n) => {
                assert!(t.answers < n, "core {core}: {} answers, expected {n}", t.answers);
                return;
            }
            None => return,
        }
        let t = ctl.txn.take().expect("transaction open");
        let line = ctl.cache.get_mut(t.line).expect("pending line allocated");
        let own = matches!(line.state, LineState::SM | LineState::OM).then_some(line.data);
        let mut data = t
            .supplier
            .map(|s| s.1)
            .or(own)
            .or(t.memory)
            .unwrap_or_else(|| panic!("core {core}: line {:#x} completed without data", t.line));
        let getx = t.request == MessageType::GetX;
        let exclusive = getx || t.exclusive_grant || (t.broadcast && !t.shared && t.supplier.is_none());
        line.state = if getx {
            LineState::M
        } else if exclusive {
            LineState::E
        } else {
            LineState::S
        };
        let addr = t.line * LINE_BYTES;
        let mut unblock = self.request(
            core,
            if exclusive {
                MessageType::Unblock
            } else {
                MessageType::UnblockS
            },
            addr,
        );
        if !exclusive {
            unblock.cur_owner = match t.supplier {
                Some((s, _, true)) => s,
                _ => self.system.home_of(addr),
            };
        }
        self.perform(core, t.op, &mut data, t.issued_tick, tick, false);
        self.core(core).cache.get_mut(t.line).expect("line present").data = data;
        self.send(core, unblock);
        self.touched.insert(t.line);
    }

    /// Answer a probe delivered to `d` on behalf of every core of its chiplet.
    fn chiplet_agent(&mut self, d: NodeId, probe: &CoherenceMessage) {
        self.stats.probes_handled += 1;
        let chiplet = self.system.chiplet_of(d).expect("probe delivered to a core");
        let inv = probe.kind() == Some(MessageType::ProbeInv);
        let line = line_of(probe.address);
        let mut supplier: Option<(NodeId, DataBlock, bool)> = None;
        let mut remaining = false;
        for c in self.system.cores_of(chiplet) {
            let c = NodeId(c);
            if c == probe.requester {
                continue;
            }
            let cache = &mut self.cores[c.0 as usize].cache;
            if let Some(l) = cache.get_mut(line) {
                if l.state.is_owner() {
                    assert!(supplier.is_none(), "two owners of line {line:#x}");
                    supplier = Some((c, l.data, l.state.is_dirty()));
                }
                l.state = if inv {
                    l.state.after_probe_inv()
                } else {
                    l.state.after_probe()
                };
                remaining |= l.state.has_data();
            }
            if let Some((wb, data)) = cache.writebacks.get_mut(&line) {
                if wb.is_owner() {
                    assert!(supplier.is_none(), "two owners of line {line:#x}");
                    supplier = Some((c, *data, wb.is_dirty()));
                }
                *wb = if inv { WbState::II } else { wb.after_probe() };
            }
        }
        self.touched.insert(line);
        let (from, kind) = match supplier {
            Some((s, _, _)) => {
                self.stats.supplier_answers += 1;
                (
                    s,
                    if inv {
                        MessageType::Data
                    } else {
                        MessageType::DataShared
                    },
                )
            }
            None if !inv && remaining => (d, MessageType::SharedAck),
            None => (d, MessageType::Ack),
        };
        let mut answer = CoherenceMessage::control(kind, from, probe.requester, vnet_of(kind), probe.address);
        if let Some((_, data, dirty)) = supplier {
            answer.data = Some(data);
            answer.dirty = dirty;
        }
        self.send(from, answer);
    }

    /// Check single-writer/multiple-reader and value agreement for `line`.
    pub fn check_swmr(&self, line: u64) -> Result<(), SwmrViolation> {
        let holders: Vec<(NodeId, LineState, DataBlock)> = self
            .cores
            .iter()
            .filter_map(|c| c.cache.get(line).map(|l| (c.id, l.state, l.data)))
            .filter(|(_, s, _)| s.has_data())
            .collect();
        let fail = |reason: &str| {
            Err(SwmrViolation {
                line,
                holders: holders.iter().map(|&(n, s, _)| (n, s)).collect(),
                reason: reason.to_string(),
            })
        };
        let writers = holders
            .iter()
            .filter(|(_, s, _)| matches!(s, LineState::M | LineState::E))
            .count();
        let owners = holders
            .iter()
            .filter(|(_, s, _)| matches!(s, LineState::O | LineState::OM))
            .count();
        if writers > 1 {
            return fail("more than one core in M or E");
        }
        if writers == 1 && holders.len() > 1 {
            return fail("a writer coexists with other copies");
        }
        if owners > 1 {
            return fail("more than one owner");
        }
        if let Some((_, _, first)) = holders.first() {
            if holders.iter().any(|(_, _, d)| d != first) {
                return fail("copies disagree");
            }
        }
        Ok(())
    }

    /// The value a coherent read of `address` would return when quiescent.
    pub fn coherent_value(&self, address: u64) -> u64 {
        let line = line_of(address);
        let w = word_of(address);
        for c in &self.cores {
            if let Some(l) = c.cache.get(line) {
                if l.state.has_data() {
                    return l.data.0[w];
                }
            }
        }
        for c in &self.cores {
            if let Some((wb, data)) = c.cache.writebacks.get(&line) {
                if wb.is_dirty() {
                    return data.0[w];
                }
            }
        }
        let mc = self.system.home_of(address).mc_index().expect("home is an MC") as usize;
        self.directories[mc].memory(line).0[w]
    }

    /// No open transactions, pending writebacks or directory work.
    pub fn is_quiet(&self) -> bool {
        self.cores
            .iter()
            .all(|c| c.txn.is_none() && c.cache.writebacks.is_empty())
            && self.directories.iter().all(Directory::is_quiet)
            && self.outbox.is_empty()
    }

    /// Cores with an open transaction, with the tick it was issued.
    pub fn open_transactions(&self) -> Vec<(NodeId, u64, u64)> {
        self.cores
            .iter()
            .filter_map(|c| c.txn.as_ref().map(|t| (c.id, t.line, t.issued_tick)))
            .collect()
    }

    pub fn system(&self) -> SystemMap {
        self.system
    }
}
