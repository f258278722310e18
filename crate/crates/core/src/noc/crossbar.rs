//! Per-chiplet crossbar at the chiplet clock.
//!
//! Inputs are the cores' network interfaces plus the hub's downlink; outputs
//! are the cores plus the hub's uplink. Each output moves one 128-bit flit
//! per tick and stays locked to one packet from head to tail.

use std::collections::VecDeque;

use crate::codec::PacketId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum XbarPort {
    Core(usize),
    Hub,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pending {
    packet: PacketId,
    flits: usize,
    sent: usize,
    to: XbarPort,
    ready_at: u64,
}

/// One flit crossing the crossbar.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transfer {
    pub from: XbarPort,
    pub to: XbarPort,
    pub packet: PacketId,
    pub index: usize,
    pub last: bool,
}

#[derive(Clone, Debug)]
pub struct Crossbar {
    cores: usize,
    inputs: Vec<VecDeque<Pending>>,
    locks: Vec<Option<usize>>,
    rr: Vec<usize>,
}

impl Crossbar {
    pub fn new(cores: usize) -> Self {
        Crossbar {
            cores,
            inputs: vec![VecDeque::new(); cores + 1],
            locks: vec![None; cores + 1],
            rr: vec![0; cores + 1],
        }
    }

    fn slot(&self, port: XbarPort) -> usize {
        match port {
            XbarPort::Core(i) => i,
            XbarPort::Hub => self.cores,
        }
    }

    fn port(&self, slot: usize) -> XbarPort {
        if slot == self.cores {
            XbarPort::Hub
        } else {
            XbarPort::Core(slot)
        }
    }

    /// Queue a packet of `flits` 128-bit flits at input `from`, eligible from `ready_at`.
    pub fn enqueue(&mut self, from: XbarPort, to: XbarPort, packet: PacketId, flits: usize, ready_at: u64) {
        let slot = self.slot(from);
        self.inputs[slot].push_back(Pending {
            packet,
            flits,
            sent: 0,
            to,
            ready_at,
        });
    }

    pub fn queued(&self) -> usize {
        self.inputs.iter().map(VecDeque::len).sum()
    }

    /// Packets waiting at a core's interface.
    pub fn backlog(&self, port: XbarPort) -> usize {
        self.inputs[self.slot(port)].len()
    }

    /// Advance one tick. `hub_space` bounds flits accepted by the uplink.
    pub fn tick(&mut self, tick: u64, mut hub_space: usize) -> Vec<Transfer> {
        let n = self.inputs.len();
        let mut used_input = vec![false; n];
        let mut transfers = Vec::new();
        for o in 0..n {
            let out = self.port(o);
            if out == XbarPort::Hub && hub_space == 0 {
                continue;
            }
            let input = match self.locks[o] {
                Some(i) => Some(i),
                None => (0..n).map(|k| (self.rr[o] + k) % n).find(|&i| {
                    !used_input[i]
                        && self.inputs[i]
                            .front()
                            .is_some_and(|p| p.to == out && p.sent == 0 && p.ready_at <= tick)
                }),
            };
            let Some(i) = input else {
                continue;
            };
            if used_input[i] {
                continue;
            }
            used_input[i] = true;
            let p = self.inputs[i].front_mut().expect("granted input has a packet");
            let index = p.sent;
            p.sent += 1;
            let last = p.sent == p.flits;
            let packet = p.packet;
            if last {
                self.inputs[i].pop_front();
                self.locks[o] = None;
                self.rr[o] = (i + 1) % n;
            } else {
                self.locks[o] = Some(i);
            }
            if out == XbarPort::Hub {
                hub_space -= 1;
            }
            transfers.push(Transfer {
                from: self.port(i),
                to: out,
                packet,
                index,
                last,
            });
        }
        transfers
    }
}
