//! The whole interconnect: chiplet crossbars, clock-crossing uplinks and
//! downlinks, the SNIs and elastic ingress buffers, the interposer routers,
//! and the memory-controller network interfaces.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::apu::ApuReplicas;
use crate::codec::{
    decode, encode, CoherenceMessage, Flit, FlitStream, LinkWidth, NodeId, PacketId,
    DESTINATION_OFFSET, NODE_BITS, VNETS,
};
use crate::sni::{HeaderEvent, SniConfig, SniKind, SniPipeline, SniVerdict, ViolationRecord};

use super::clock::{self, ClockDomains};
use super::crossbar::{Crossbar, XbarPort};
use super::router::{OutputUnit, Router, RouterConfig};
use super::topology::{self, Attachment, Port, RouterId, SystemMap, MESH_ROUTERS};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FabricConfig {
    pub system: SystemMap,
    pub width: LinkWidth,
    pub vc_per_vnet: usize,
    pub sni_enabled: bool,
    pub probe_filtering: bool,
    pub check_directory_traffic: bool,
    pub sni1_latency: u64,
    pub sni2_latency: u64,
    /// Flits an SNI and its ingress buffer may hold together.
    pub ingress_capacity: usize,
    /// 128-bit flits the chiplet uplink buffer holds.
    pub uplink_capacity: usize,
    pub trace: bool,
}

impl FabricConfig {
    pub fn baseline(system: SystemMap, width: LinkWidth) -> Self {
        FabricConfig {
            system,
            width,
            vc_per_vnet: 4,
            sni_enabled: true,
            probe_filtering: true,
            check_directory_traffic: true,
            sni1_latency: SniKind::Sni1.baseline_latency(),
            sni2_latency: SniKind::Sni2.baseline_latency(),
            ingress_capacity: 16,
            uplink_capacity: 8,
            trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SniStamp {
    pub router: RouterId,
    pub kind: SniKind,
    pub header_arrival: u64,
    pub head_release: Option<u64>,
}

impl SniStamp {
    /// Cycles the interface added between final header arrival and release.
    pub fn added_delay(&self) -> Option<u64> {
        self.head_release.map(|r| r - self.header_arrival)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub id: PacketId,
    pub message: CoherenceMessage,
    pub source: NodeId,
    pub created_tick: u64,
    /// Crosses the interposer (false for traffic kept inside a chiplet).
    pub interposer: bool,
    pub fanout_target: Option<usize>,
    pub malicious: bool,
    pub entered_network_tick: Option<u64>,
    pub delivered_tick: Option<u64>,
    pub hops: u32,
    pub sni: Option<SniStamp>,
    pub rewritten: bool,
    pub blocked: bool,
}

impl PacketRecord {
    pub fn queuing(&self) -> Option<u64> {
        Some(self.entered_network_tick? - self.created_tick)
    }

    pub fn in_network(&self) -> Option<u64> {
        Some(self.delivered_tick? - self.entered_network_tick?)
    }

    pub fn total(&self) -> Option<u64> {
        Some(self.delivered_tick? - self.created_tick)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub packet: PacketId,
    pub message: CoherenceMessage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    SniIn { router: RouterId },
    SniOut { router: RouterId },
    EnterRouter { router: RouterId, vc: usize },
    Link { from: RouterId, to: RouterId, vc: usize },
    Eject { router: RouterId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub cycle: u64,
    pub flit: u16,
    pub packet: PacketId,
    pub head: bool,
    pub event: TraceEvent,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        let (location, event) = match self.event {
            TraceEvent::SniIn { router } => (format!("sni:{router}"), "in"),
            TraceEvent::SniOut { router } => (format!("sni:{router}"), "out"),
            TraceEvent::EnterRouter { router, vc } => (format!("router:{router}:local:vc{vc}"), "enter"),
            TraceEvent::Link { from, to, vc } => (format!("link:{from}->{to}:vc{vc}"), "traverse"),
            TraceEvent::Eject { router } => (format!("router:{router}:local"), "eject"),
        };
        format!(
            "{} {} {} {} {}{}",
            self.cycle,
            self.flit,
            self.packet.0,
            location,
            event,
            if self.head { " head" } else { "" }
        )
    }

    /// Whether the flit is on a link between two interposer routers.
    pub fn is_internal_link(&self) -> bool {
        matches!(self.event, TraceEvent::Link { .. })
    }
}

/// Flit-level conservation counters for the interposer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlitLedger {
    pub entered_sni: u64,
    pub released_sni: u64,
    pub blocked_sni: u64,
    pub rewritten_sni: u64,
    pub ejected: u64,
    pub in_sni: u64,
    pub in_network: u64,
}

impl FlitLedger {
    pub fn balances(&self) -> bool {
        self.entered_sni == self.released_sni + self.blocked_sni + self.in_sni
            && self.released_sni == self.ejected + self.in_network
    }
}

#[derive(Clone, Debug)]
struct McLink {
    queues: [VecDeque<PacketId>; VNETS as usize],
    sending: Option<(VecDeque<Flit>, PacketId)>,
    rr: usize,
}

#[derive(Clone, Debug)]
struct Ingress {
    queues: [VecDeque<Flit>; VNETS as usize],
    vc: [Option<usize>; VNETS as usize],
    view: OutputUnit,
    rr: usize,
}

impl Ingress {
    fn occupancy(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }
}

#[derive(Clone, Copy, Debug)]
enum Upstream {
    Ingress(usize),
    Router(usize, Port),
}

pub struct Fabric {
    cfg: FabricConfig,
    clock: ClockDomains,
    apu: ApuReplicas,
    packets: Vec<PacketRecord>,
    wide: BTreeMap<PacketId, Vec<Flit>>,
    crossbars: Vec<Crossbar>,
    uplinks: Vec<VecDeque<(u64, Flit)>>,
    mc_links: Vec<McLink>,
    snis: Vec<Option<SniPipeline>>,
    ingress: Vec<Ingress>,
    routers: Vec<Router>,
    wires: Vec<(usize, Port, usize, Flit)>,
    credits: Vec<(Upstream, usize)>,
    reassembly: BTreeMap<PacketId, Vec<Flit>>,
    core_inbox: BTreeMap<u64, Vec<Delivery>>,
    mc_inbox: BTreeMap<u64, Vec<(usize, Delivery)>>,
    header_events: Vec<HeaderEvent>,
    trace: Vec<TraceRecord>,
    ledger: FlitLedger,
    moved: u64,
}

fn header_destination(flit: &Flit) -> NodeId {
    NodeId(((flit.payload >> DESTINATION_OFFSET) & ((1 << NODE_BITS) - 1)) as u8)
}

impl Fabric {
    pub fn new(cfg: FabricConfig, apu: ApuReplicas) -> Self {
        let system = cfg.system;
        let rcfg = RouterConfig::new(cfg.vc_per_vnet);
        let mut snis = vec![None; MESH_ROUTERS];
        for (i, slot) in snis.iter_mut().enumerate() {
            let sni_cfg = match system.attachment(RouterId::from_index(i)) {
                Attachment::Chiplet(c) => {
                    let mut s = SniConfig::sni1(system, c);
                    s.latency_cycles = cfg.sni1_latency;
                    s
                }
                Attachment::MemoryController(m) => {
                    let mut s = SniConfig::sni2(system, m);
                    s.latency_cycles = cfg.sni2_latency;
                    s
                }
                Attachment::None => continue,
            };
            let mut s = sni_cfg;
            s.probe_filtering = cfg.probe_filtering;
            s.check_directory_traffic = cfg.check_directory_traffic;
            *slot = Some(SniPipeline::new(s, cfg.width, cfg.sni_enabled));
        }
        Fabric {
            clock: ClockDomains::BASELINE,
            apu,
            packets: Vec::new(),
            wide: BTreeMap::new(),
            crossbars: (0..system.chiplets)
                .map(|_| Crossbar::new(system.cores_per_chiplet))
                .collect(),
            uplinks: vec![VecDeque::new(); system.chiplets],
            mc_links: (0..topology::MEMORY_CONTROLLERS)
                .map(|_| McLink {
                    queues: Default::default(),
                    sending: None,
                    rr: 0,
                })
                .collect(),
            snis,
            ingress: (0..MESH_ROUTERS)
                .map(|_| Ingress {
                    queues: Default::default(),
                    vc: [None; VNETS as usize],
                    view: OutputUnit::new(rcfg, false),
                    rr: 0,
                })
                .collect(),
            routers: (0..MESH_ROUTERS)
                .map(|i| Router::new(RouterId::from_index(i), rcfg))
                .collect(),
            wires: Vec::new(),
            credits: Vec::new(),
            reassembly: BTreeMap::new(),
            core_inbox: BTreeMap::new(),
            mc_inbox: BTreeMap::new(),
            header_events: Vec::new(),
            trace: Vec::new(),
            ledger: FlitLedger::default(),
            moved: 0,
            cfg,
        }
    }

    pub fn config(&self) -> &FabricConfig {
        &self.cfg
    }

    pub fn clock(&self) -> ClockDomains {
        self.clock
    }

    pub fn apu(&self) -> &ApuReplicas {
        &self.apu
    }

    pub fn apu_mut(&mut self) -> &mut ApuReplicas {
        &mut self.apu
    }

    pub fn packets(&self) -> &[PacketRecord] {
        &self.packets
    }

    pub fn packet(&self, id: PacketId) -> &PacketRecord {
        &self.packets[id.0 as usize]
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn take_header_events(&mut self) -> Vec<HeaderEvent> {
        std::mem::take(&mut self.header_events)
    }

    /// Flit movements since the last call.
    pub fn take_progress(&mut self) -> u64 {
        std::mem::take(&mut self.moved)
    }

    fn new_packet(
        &mut self,
        message: CoherenceMessage,
        source: NodeId,
        created_tick: u64,
        interposer: bool,
        fanout_target: Option<usize>,
        malicious: bool,
    ) -> PacketId {
        let id = PacketId(self.packets.len() as u64);
        self.packets.push(PacketRecord {
            id,
            message,
            source,
            created_tick,
            interposer,
            fanout_target,
            malicious,
            entered_network_tick: None,
            delivered_tick: None,
            hops: 0,
            sni: None,
            rewritten: false,
            blocked: false,
        });
        id
    }

    /// A core hands a message to its network interface at `tick`.
    pub fn send_from_core(
        &mut self,
        core: NodeId,
        msg: CoherenceMessage,
        tick: u64,
        malicious: bool,
    ) -> PacketId {
        let system = self.cfg.system;
        let chiplet = system.chiplet_of(core).expect("sender is a core");
        let local = system.chiplet_of(msg.destination) == Some(chiplet);
        let flits = encode(&msg, LinkWidth::CHIPLET)
            .expect("core messages fit their fields")
            .flits;
        let count = flits.len();
        let to = if local {
            XbarPort::Core(msg.destination.0 as usize - system.first_core(chiplet).0 as usize)
        } else {
            XbarPort::Hub
        };
        let id = self.new_packet(msg, core, tick, !local, None, malicious);
        self.wide.insert(id, stamp(flits, id));
        let from = XbarPort::Core(core.0 as usize - system.first_core(chiplet).0 as usize);
        self.crossbars[chiplet].enqueue(from, to, id, count, tick);
        id
    }

    /// A directory hands a message to its memory controller's interface at
    /// `cycle`. Broadcasts fan out here into one copy per chiplet.
    pub fn send_from_mc(&mut self, mc: usize, msg: CoherenceMessage, cycle: u64) -> Vec<PacketId> {
        let tick = self.clock.tick_of(cycle);
        let source = NodeId::mc(mc as u8);
        let copies: Vec<(CoherenceMessage, Option<usize>)> = if msg.is_broadcast() {
            (0..self.cfg.system.chiplets)
                .map(|c| {
                    let mut copy = msg.clone();
                    copy.destination = self.cfg.system.first_core(c);
                    (copy, Some(c))
                })
                .collect()
        } else {
            vec![(msg, None)]
        };
        copies
            .into_iter()
            .map(|(m, target)| {
                let vnet = m.vnet as usize;
                let id = self.new_packet(m, source, tick, true, target, false);
                self.mc_links[mc].queues[vnet].push_back(id);
                id
            })
            .collect()
    }

    /// Deliveries reaching cores at `tick`.
    pub fn take_core_deliveries(&mut self, tick: u64) -> Vec<Delivery> {
        self.core_inbox.remove(&tick).unwrap_or_default()
    }

    /// Deliveries reaching directories at `cycle`, tagged with the controller index.
    pub fn take_mc_deliveries(&mut self, cycle: u64) -> Vec<(usize, Delivery)> {
        self.mc_inbox.remove(&cycle).unwrap_or_default()
    }

    /// Advance every chiplet crossbar by one tick.
    pub fn chiplet_tick(&mut self, tick: u64) {
        let system = self.cfg.system;
        let split = match self.cfg.width {
            LinkWidth::W64 => 2,
            LinkWidth::W128 => 1,
        };
        for c in 0..system.chiplets {
            let space = self.cfg.uplink_capacity.saturating_sub(self.uplinks[c].len() / split);
            let transfers = self.crossbars[c].tick(tick, space);
            for tr in transfers {
                self.moved += 1;
                let flit = self.wide[&tr.packet][tr.index];
                match tr.to {
                    XbarPort::Hub => {
                        for (k, mut f) in clock::to_interposer(&[flit], self.cfg.width).into_iter().enumerate() {
                            f.meta.index = (tr.index * split + k) as u16;
                            f.meta.injected = Some(tick);
                            self.uplinks[c].push_back((tick, f));
                        }
                    }
                    XbarPort::Core(_) => {}
                }
                if tr.last {
                    let flits = match tr.to {
                        XbarPort::Hub => {
                            self.wide.remove(&tr.packet);
                            continue;
                        }
                        XbarPort::Core(_) => self.wide.remove(&tr.packet).expect("packet flits"),
                    };
                    let message = decode(&FlitStream {
                        width: LinkWidth::CHIPLET,
                        flits,
                    })
                    .expect("delivered flits decode");
                    let rec = &mut self.packets[tr.packet.0 as usize];
                    let at = tick + 1;
                    rec.delivered_tick = Some(at);
                    if !rec.interposer {
                        rec.entered_network_tick = Some(rec.created_tick);
                    }
                    self.core_inbox.entry(at).or_default().push(Delivery {
                        packet: tr.packet,
                        message,
                    });
                }
            }
        }
    }

    /// Advance the interposer by one cycle. Returns the violations raised.
    pub fn interposer_cycle(&mut self, cycle: u64) -> Vec<ViolationRecord> {
        let arrivals = std::mem::take(&mut self.wires);
        for (r, port, vc, flit) in arrivals {
            self.routers[r].accept(port, vc, flit);
        }
        for (up, vc) in std::mem::take(&mut self.credits) {
            match up {
                Upstream::Ingress(r) => self.ingress[r].view.credit(vc),
                Upstream::Router(r, port) => self.routers[r].credit(port, vc),
            }
        }

        self.feed_snis(cycle);
        let violations = self.drain_snis(cycle);
        self.feed_routers(cycle);
        self.step_routers(cycle);
        violations
    }

    fn feed_snis(&mut self, cycle: u64) {
        let system = self.cfg.system;
        for r in 0..MESH_ROUTERS {
            let Some(sni) = self.snis[r].as_ref() else {
                continue;
            };
            if sni.occupancy() + self.ingress[r].occupancy() >= self.cfg.ingress_capacity {
                continue;
            }
            let flit = match system.attachment(RouterId::from_index(r)) {
                Attachment::Chiplet(c) => match self.uplinks[c].front() {
                    Some(&(produced, _)) if self.clock.visible_cycle(produced) <= cycle => {
                        self.uplinks[c].pop_front().map(|(_, f)| f)
                    }
                    _ => None,
                },
                Attachment::MemoryController(m) => self.next_mc_flit(m),
                Attachment::None => None,
            };
            let Some(mut flit) = flit else {
                continue;
            };
            flit.meta.ingress = Some(cycle);
            self.moved += 1;
            self.ledger.entered_sni += 1;
            self.record(cycle, &flit, TraceEvent::SniIn {
                router: RouterId::from_index(r),
            });
            let table = self.apu.table(r);
            let sni = self.snis[r].as_mut().expect("checked above");
            if let Some(ev) = sni.accept(flit, cycle, table) {
                let rec = &mut self.packets[ev.packet.0 as usize];
                rec.sni = Some(SniStamp {
                    router: RouterId::from_index(r),
                    kind: sni.cfg.kind,
                    header_arrival: ev.header_arrival,
                    head_release: ev.head_release,
                });
                match &ev.verdict {
                    SniVerdict::Rewrite { replacement, .. } => {
                        rec.rewritten = true;
                        rec.message = replacement.clone();
                    }
                    SniVerdict::Violation { .. } => rec.blocked = true,
                    SniVerdict::Allow => {}
                }
                self.header_events.push(ev);
            }
        }
    }

    fn next_mc_flit(&mut self, m: usize) -> Option<Flit> {
        let width = self.cfg.width;
        let link = &mut self.mc_links[m];
        if link.sending.is_none() {
            let n = VNETS as usize;
            let pick = (0..n)
                .map(|k| (link.rr + k) % n)
                .find(|&v| !link.queues[v].is_empty())?;
            link.rr = (pick + 1) % n;
            let id = link.queues[pick].pop_front().expect("non-empty queue");
            let msg = &self.packets[id.0 as usize].message;
            let flits = encode(msg, width).expect("directory messages fit their fields");
            link.sending = Some((stamp(flits.flits, id).into(), id));
        }
        let (queue, _) = link.sending.as_mut().expect("set above");
        let flit = queue.pop_front();
        if queue.is_empty() {
            link.sending = None;
        }
        flit
    }

    fn drain_snis(&mut self, cycle: u64) -> Vec<ViolationRecord> {
        let mut violations = Vec::new();
        for r in 0..MESH_ROUTERS {
            let Some(sni) = self.snis[r].as_mut() else {
                continue;
            };
            let (released, raised) = sni.advance(cycle);
            violations.extend(raised);
            for flit in released {
                self.ledger.released_sni += 1;
                self.record(cycle, &flit, TraceEvent::SniOut {
                    router: RouterId::from_index(r),
                });
                let vnet = self.packets[flit.packet_id.0 as usize].message.vnet as usize;
                self.ingress[r].queues[vnet].push_back(flit);
            }
        }
        violations
    }

    fn feed_routers(&mut self, cycle: u64) {
        let tick = self.clock.tick_of(cycle);
        for r in 0..MESH_ROUTERS {
            let n = VNETS as usize;
            let ing = &mut self.ingress[r];
            let mut chosen = None;
            for k in 0..n {
                let v = (ing.rr + k) % n;
                let Some(front) = ing.queues[v].front() else {
                    continue;
                };
                if ing.vc[v].is_none() {
                    debug_assert!(front.position.is_head());
                    ing.vc[v] = ing.view.allocate(v as u8);
                }
                if let Some(vc) = ing.vc[v] {
                    if ing.view.has_credit(vc) {
                        chosen = Some((v, vc));
                        break;
                    }
                }
            }
            let Some((v, vc)) = chosen else {
                continue;
            };
            ing.rr = (v + 1) % n;
            let flit = ing.queues[v].pop_front().expect("chosen queue has a flit");
            ing.view.consume(vc);
            if flit.position.is_tail() {
                ing.view.release(vc);
                ing.vc[v] = None;
            }
            self.routers[r].accept(Port::Local, vc, flit);
            self.moved += 1;
            if flit.position.is_head() {
                self.packets[flit.packet_id.0 as usize].entered_network_tick = Some(tick);
            }
            self.record(cycle, &flit, TraceEvent::EnterRouter {
                router: RouterId::from_index(r),
                vc,
            });
        }
    }

    fn step_routers(&mut self, cycle: u64) {
        let system = self.cfg.system;
        for r in 0..MESH_ROUTERS {
            let here = RouterId::from_index(r);
            let route = |f: &Flit| {
                let dest = header_destination(f);
                let target = system
                    .router_of(dest)
                    .unwrap_or_else(|e| panic!("unroutable flit reached router {here}: {e}"));
                topology::route(here, target).expect("mesh routers route")
            };
            let departures = self.routers[r].cycle(&route);
            for d in departures {
                self.moved += 1;
                let up = match d.in_port {
                    Port::Local => Upstream::Ingress(r),
                    p => {
                        let n = topology::neighbour(here, p).expect("input port has a neighbour");
                        Upstream::Router(n.mesh_index().expect("mesh"), p.opposite())
                    }
                };
                self.credits.push((up, d.in_vc));
                if d.out_port == Port::Local {
                    self.eject(r, cycle, d.flit);
                } else {
                    let next = topology::neighbour(here, d.out_port).expect("route stays in mesh");
                    if d.flit.position.is_head() {
                        self.packets[d.flit.packet_id.0 as usize].hops += 1;
                    }
                    self.record(cycle, &d.flit, TraceEvent::Link {
                        from: here,
                        to: next,
                        vc: d.out_vc,
                    });
                    self.wires.push((
                        next.mesh_index().expect("mesh"),
                        d.out_port.opposite(),
                        d.out_vc,
                        d.flit,
                    ));
                }
            }
        }
    }

    fn eject(&mut self, r: usize, cycle: u64, mut flit: Flit) {
        flit.meta.egress = Some(cycle);
        self.ledger.ejected += 1;
        let here = RouterId::from_index(r);
        self.record(cycle, &flit, TraceEvent::Eject { router: here });
        let id = flit.packet_id;
        let parts = self.reassembly.entry(id).or_default();
        parts.push(flit);
        if !flit.position.is_tail() {
            return;
        }
        let parts = self.reassembly.remove(&id).expect("reassembly entry");
        let width = self.cfg.width;
        match self.cfg.system.attachment(here) {
            Attachment::Chiplet(c) => {
                let wide = clock::to_chiplet(&parts, width);
                let message = decode(&FlitStream {
                    width: LinkWidth::CHIPLET,
                    flits: wide.clone(),
                })
                .expect("ejected flits decode");
                let first = self.cfg.system.first_core(c).0 as usize;
                let to = XbarPort::Core(message.destination.0 as usize - first);
                let ready = self.clock.arrival_tick(cycle);
                self.crossbars[c].enqueue(XbarPort::Hub, to, id, wide.len(), ready);
                self.wide.insert(id, wide);
            }
            Attachment::MemoryController(m) => {
                let message = decode(&FlitStream { width, flits: parts }).expect("ejected flits decode");
                let rec = &mut self.packets[id.0 as usize];
                rec.delivered_tick = Some(self.clock.arrival_tick(cycle));
                self.mc_inbox
                    .entry(cycle + 1)
                    .or_default()
                    .push((m, Delivery { packet: id, message }));
            }
            Attachment::None => panic!("flit ejected at unattached router {here}"),
        }
    }

    fn record(&mut self, cycle: u64, flit: &Flit, event: TraceEvent) {
        if self.cfg.trace {
            self.trace.push(TraceRecord {
                cycle,
                flit: flit.meta.index,
                packet: flit.packet_id,
                head: flit.position.is_head(),
                event,
            });
        }
    }

    pub fn ledger(&self) -> FlitLedger {
        let mut l = self.ledger;
        l.in_sni = self.snis.iter().flatten().map(|s| s.occupancy() as u64).sum();
        l.blocked_sni = self.snis.iter().flatten().map(SniPipeline::absorbed).sum();
        l.rewritten_sni = self.snis.iter().flatten().map(SniPipeline::rewritten).sum();
        l.in_network = self.ingress.iter().map(|i| i.occupancy() as u64).sum::<u64>()
            + self.routers.iter().map(|r| r.occupancy() as u64).sum::<u64>()
            + self.wires.len() as u64;
        l
    }

    /// Nothing buffered anywhere in the interconnect.
    pub fn is_idle(&self) -> bool {
        self.crossbars.iter().all(|x| x.queued() == 0)
            && self.uplinks.iter().all(VecDeque::is_empty)
            && self
                .mc_links
                .iter()
                .all(|l| l.sending.is_none() && l.queues.iter().all(VecDeque::is_empty))
            && self.snis.iter().flatten().all(|s| s.occupancy() == 0)
            && self.wires.is_empty()
            && self.ingress.iter().all(|i| i.occupancy() == 0)
            && self.routers.iter().all(|r| r.occupancy() == 0)
            && self.core_inbox.is_empty()
            && self.mc_inbox.is_empty()
    }

    /// Packets waiting at a core's network interface.
    pub fn core_backlog(&self, core: NodeId) -> usize {
        let system = self.cfg.system;
        let c = system.chiplet_of(core).expect("core");
        self.crossbars[c].backlog(XbarPort::Core(core.0 as usize - system.first_core(c).0 as usize))
    }
}

fn stamp(mut flits: Vec<Flit>, id: PacketId) -> Vec<Flit> {
    for (i, f) in flits.iter_mut().enumerate() {
        f.packet_id = id;
        f.meta.index = i as u16;
    }
    flits
}
