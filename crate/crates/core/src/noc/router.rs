//! Virtual-channel wormhole router with credit-based flow control.
//!
//! Each cycle a router routes new head flits, allocates output VCs, runs a
//! separable input-first round-robin switch allocator and sends at most one
//! flit per output port. Links take one cycle; credits return one cycle
//! after the flit leaves the buffer.

use std::collections::VecDeque;

use crate::codec::{Flit, VNETS};

use super::topology::{Port, RouterId};

pub const BUFFER_DEPTH: usize = 4;
pub const VC_MENU: [usize; 4] = [4, 6, 8, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RouterConfig {
    pub vc_per_vnet: usize,
    pub buffer_depth: usize,
}

impl RouterConfig {
    pub fn new(vc_per_vnet: usize) -> Self {
        RouterConfig {
            vc_per_vnet,
            buffer_depth: BUFFER_DEPTH,
        }
    }

    pub fn vcs(&self) -> usize {
        self.vc_per_vnet * VNETS as usize
    }

    pub fn vnet_of(&self, vc: usize) -> u8 {
        (vc / self.vc_per_vnet) as u8
    }

    pub fn vcs_of(&self, vnet: u8) -> std::ops::Range<usize> {
        let first = vnet as usize * self.vc_per_vnet;
        first..first + self.vc_per_vnet
    }
}

#[derive(Clone, Debug, Default)]
struct InputVc {
    buf: VecDeque<Flit>,
    route: Option<Port>,
    out_vc: Option<usize>,
}

/// Upstream view of the VCs at the far end of one output link.
#[derive(Clone, Debug)]
pub struct OutputUnit {
    cfg: RouterConfig,
    credits: Vec<usize>,
    busy: Vec<bool>,
    /// Ejection ports sink everything.
    infinite: bool,
    rr: usize,
}

impl OutputUnit {
    pub fn new(cfg: RouterConfig, infinite: bool) -> Self {
        OutputUnit {
            cfg,
            credits: vec![cfg.buffer_depth; cfg.vcs()],
            busy: vec![false; cfg.vcs()],
            infinite,
            rr: 0,
        }
    }

    /// Reserve a free VC of `vnet` for a new packet.
    pub fn allocate(&mut self, vnet: u8) -> Option<usize> {
        let range = self.cfg.vcs_of(vnet);
        let n = range.len();
        for k in 0..n {
            let vc = range.start + (self.rr + k) % n;
            if !self.busy[vc] {
                self.busy[vc] = true;
                self.rr = (self.rr + k + 1) % n;
                return Some(vc);
            }
        }
        None
    }

    pub fn has_credit(&self, vc: usize) -> bool {
        self.infinite || self.credits[vc] > 0
    }

    pub fn consume(&mut self, vc: usize) {
        if !self.infinite {
            debug_assert!(self.credits[vc] > 0, "sent without credit");
            self.credits[vc] -= 1;
        }
    }

    /// The packet holding `vc` has sent its tail.
    pub fn release(&mut self, vc: usize) {
        self.busy[vc] = false;
    }

    pub fn credit(&mut self, vc: usize) {
        if !self.infinite {
            self.credits[vc] += 1;
            debug_assert!(self.credits[vc] <= self.cfg.buffer_depth, "credit overflow");
        }
    }

    pub fn credits(&self, vc: usize) -> usize {
        self.credits[vc]
    }
}

/// One flit leaving a router this cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Departure {
    pub in_port: Port,
    pub in_vc: usize,
    pub out_port: Port,
    pub out_vc: usize,
    pub flit: Flit,
}

#[derive(Clone, Debug)]
pub struct Router {
    pub id: RouterId,
    cfg: RouterConfig,
    inputs: Vec<Vec<InputVc>>,
    outputs: Vec<OutputUnit>,
    sa_in_rr: [usize; 5],
    sa_out_rr: [usize; 5],
    va_rr: usize,
}

impl Router {
    pub fn new(id: RouterId, cfg: RouterConfig) -> Self {
        Router {
            id,
            cfg,
            inputs: vec![vec![InputVc::default(); cfg.vcs()]; Port::ALL.len()],
            outputs: Port::ALL
                .iter()
                .map(|&p| OutputUnit::new(cfg, p == Port::Local))
                .collect(),
            sa_in_rr: [0; 5],
            sa_out_rr: [0; 5],
            va_rr: 0,
        }
    }

    pub fn config(&self) -> RouterConfig {
        self.cfg
    }

    /// A flit arriving on `port` into input VC `vc`.
    pub fn accept(&mut self, port: Port, vc: usize, flit: Flit) {
        let q = &mut self.inputs[port.index()][vc].buf;
        assert!(
            q.len() < self.cfg.buffer_depth,
            "router {} {port} vc {vc} overflow",
            self.id
        );
        q.push_back(flit);
    }

    /// A credit returning on output `port` for downstream VC `vc`.
    pub fn credit(&mut self, port: Port, vc: usize) {
        self.outputs[port.index()].credit(vc);
    }

    pub fn occupancy(&self) -> usize {
        self.inputs
            .iter()
            .flat_map(|p| p.iter())
            .map(|v| v.buf.len())
            .sum()
    }

    pub fn buffered(&self, port: Port, vc: usize) -> usize {
        self.inputs[port.index()][vc].buf.len()
    }

    /// Advance one cycle. `route` maps a head flit to its output port.
    pub fn cycle(&mut self, route: &dyn Fn(&Flit) -> Port) -> Vec<Departure> {
        let vcs = self.cfg.vcs();
        let total = Port::ALL.len() * vcs;

        for k in 0..total {
            let slot = (self.va_rr + k) % total;
            let (p, v) = (slot / vcs, slot % vcs);
            let ivc = &mut self.inputs[p][v];
            let Some(front) = ivc.buf.front() else {
                continue;
            };
            if ivc.out_vc.is_some() {
                continue;
            }
            debug_assert!(front.position.is_head(), "body flit without a route");
            let out = *ivc.route.get_or_insert_with(|| route(front));
            if let Some(ovc) = self.outputs[out.index()].allocate(self.cfg.vnet_of(v)) {
                ivc.out_vc = Some(ovc);
            }
        }
        self.va_rr = (self.va_rr + 1) % total;

        let mut requests: [Option<(usize, Port)>; 5] = [None; 5];
        for (p, request) in requests.iter_mut().enumerate() {
            for k in 0..vcs {
                let v = (self.sa_in_rr[p] + k) % vcs;
                let ivc = &self.inputs[p][v];
                if let (Some(_), Some(out), Some(ovc)) = (ivc.buf.front(), ivc.route, ivc.out_vc) {
                    if self.outputs[out.index()].has_credit(ovc) {
                        *request = Some((v, out));
                        break;
                    }
                }
            }
        }

        let mut departures = Vec::new();
        for out in Port::ALL {
            let o = out.index();
            let n = Port::ALL.len();
            let winner = (0..n)
                .map(|k| (self.sa_out_rr[o] + k) % n)
                .find(|&p| matches!(requests[p], Some((_, port)) if port == out));
            let Some(p) = winner else {
                continue;
            };
            let (v, _) = requests[p].expect("winner requested");
            let ivc = &mut self.inputs[p][v];
            let flit = ivc.buf.pop_front().expect("requesting VC holds a flit");
            let ovc = ivc.out_vc.expect("requesting VC has an output VC");
            self.outputs[o].consume(ovc);
            if flit.position.is_tail() {
                self.outputs[o].release(ovc);
                ivc.route = None;
                ivc.out_vc = None;
            }
            self.sa_in_rr[p] = (v + 1) % vcs;
            self.sa_out_rr[o] = (p + 1) % n;
            departures.push(Departure {
                in_port: Port::ALL[p],
                in_vc: v,
                out_port: out,
                out_vc: ovc,
                flit,
            });
        }
        departures
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{FlitMeta, FlitPosition, PacketId};

    fn flit(id: u64, position: FlitPosition) -> Flit {
        Flit {
            payload: 0,
            position,
            packet_id: PacketId(id),
            meta: FlitMeta::default(),
        }
    }

    #[test]
    fn single_flit_leaves_in_the_cycle_it_arrives() {
        let mut r = Router::new(RouterId(72), RouterConfig::new(4));
        r.accept(Port::West, 0, flit(1, FlitPosition::HeadTail));
        let d = r.cycle(&|_| Port::East);
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].out_port, d[0].out_vc), (Port::East, 0));
        assert!(r.cycle(&|_| Port::East).is_empty());
    }

    #[test]
    fn two_heads_for_one_port_serialize_by_one_round() {
        let mut r = Router::new(RouterId(76), RouterConfig::new(4));
        r.accept(Port::West, 0, flit(1, FlitPosition::HeadTail));
        r.accept(Port::South, 0, flit(2, FlitPosition::HeadTail));
        let first = r.cycle(&|_| Port::East);
        let second = r.cycle(&|_| Port::East);
        assert_eq!(first.len(), 1);
        assert_eq!(second.len(), 1);
        assert_ne!(first[0].flit.packet_id, second[0].flit.packet_id);
        assert_ne!(first[0].out_vc, second[0].out_vc);
        assert_ne!(first[0].in_port, second[0].in_port);
        r.accept(Port::West, 0, flit(3, FlitPosition::HeadTail));
        r.accept(Port::South, 0, flit(4, FlitPosition::HeadTail));
        let third = r.cycle(&|_| Port::East);
        assert_eq!(third[0].in_port, first[0].in_port);
    }

    #[test]
    fn full_downstream_vc_stalls_without_drop() {
        let cfg = RouterConfig::new(4);
        let mut r = Router::new(RouterId(72), cfg);
        r.accept(Port::West, 0, flit(1, FlitPosition::Head));
        for _ in 0..3 {
            r.accept(Port::West, 0, flit(1, FlitPosition::Body));
        }
        let mut sent = 0;
        for _ in 0..4 {
            sent += r.cycle(&|_| Port::East).len();
        }
        assert_eq!(sent, 4);
        r.accept(Port::West, 0, flit(1, FlitPosition::Tail));
        assert!(r.cycle(&|_| Port::East).is_empty(), "no credit left");
        assert_eq!(r.buffered(Port::West, 0), 1);
        r.credit(Port::East, 0);
        assert_eq!(r.cycle(&|_| Port::East).len(), 1);
    }

    #[test]
    fn vnets_use_their_own_vcs() {
        let cfg = RouterConfig::new(4);
        let mut r = Router::new(RouterId(72), cfg);
        let vc = cfg.vcs_of(2).start + 1;
        r.accept(Port::North, vc, flit(1, FlitPosition::HeadTail));
        let d = r.cycle(&|_| Port::South);
        assert!(cfg.vcs_of(2).contains(&d[0].out_vc));
    }
}
