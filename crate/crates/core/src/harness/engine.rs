//! The simulation loop.
//!
//! One tick is one chiplet clock edge; every fourth tick is also an
//! interposer edge. On an interposer edge the engine applies scheduled
//! permission updates, advances the mesh (halting on any SNI violation) and
//! moves traffic between the mesh and the directories. Every tick it then
//! delivers core-bound messages, issues new operations, injects due attacks,
//! hands core traffic to the chiplet crossbars and advances them.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::apu::{ApuReplicas, PermissionUpdate};
use crate::codec::{CoherenceMessage, MessageType, NodeId, PacketId};
use crate::coherence::{Completion, Divergence, MemOp, MemoryOracle, Protocol, SwmrViolation};
use crate::noc::fabric::Fabric;
use crate::noc::topology::MESH_ROUTERS;
use crate::sni::{ThreatClass, ViolationRecord};

use super::attack::AttackSpec;
use super::config::ValidatedConfig;
use super::workload::{Next, WorkloadGen};

pub const TICKS_PER_CYCLE: u64 = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HaltCause {
    /// Workload finished and the system drained.
    Completed,
    /// An SNI raised a machine check.
    SecurityHalt { threat: Option<ThreatClass> },
    /// No flit moved and no operation completed for the watchdog budget.
    Deadlock { since_cycle: u64 },
    CycleBudget,
    Swmr { detail: String },
    Oracle { detail: String },
}

impl HaltCause {
    /// Process exit status for this outcome.
    pub fn exit_code(&self) -> i32 {
        match self {
            HaltCause::Completed => 0,
            HaltCause::SecurityHalt { .. } => 2,
            HaltCause::Deadlock { .. } | HaltCause::CycleBudget => 3,
            HaltCause::Swmr { .. } | HaltCause::Oracle { .. } => 1,
        }
    }

    pub fn label(&self) -> String {
        match self {
            HaltCause::Completed => "completed".into(),
            HaltCause::SecurityHalt { threat: Some(t) } => format!("security halt ({t})"),
            HaltCause::SecurityHalt { threat: None } => "security halt".into(),
            HaltCause::Deadlock { since_cycle } => format!("deadlock (no progress since cycle {since_cycle})"),
            HaltCause::CycleBudget => "cycle budget exhausted".into(),
            HaltCause::Swmr { detail } => format!("coherence invariant broken: {detail}"),
            HaltCause::Oracle { detail } => format!("load diverged from the oracle: {detail}"),
        }
    }
}

/// Who handed a message to the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Endpoint {
    Core(u8),
    Mc(u8),
}

/// One message handed to the network, as replayed by the neutrality check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub tick: u64,
    pub from: Endpoint,
    pub message: CoherenceMessage,
    pub malicious: bool,
}

/// What the snooping observer saw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserverStats {
    pub chiplet: usize,
    /// Probe copies the directories addressed to the observer.
    pub probes_addressed: u64,
    /// Probe copies that actually reached an observer core.
    pub probes_delivered: u64,
    /// Observer-bound probes that came back to their requester as NACKs.
    pub nacks_delivered: u64,
}

/// Everything a finished run leaves behind.
pub struct RunOutput {
    pub halt: HaltCause,
    pub cycles: u64,
    pub ticks: u64,
    pub fabric: Fabric,
    pub protocol: Protocol,
    pub violations: Vec<ViolationRecord>,
    pub operations: u64,
    pub loads_checked: u64,
    pub observer: Option<ObserverStats>,
    pub injections: Vec<Injection>,
    /// Messages that reached an endpoint, in arrival order.
    pub deliveries: Vec<(u64, NodeId, PacketId, CoherenceMessage)>,
    pub malicious_delivered: u64,
    pub completions: Vec<Completion>,
}

pub struct Simulation {
    cfg: ValidatedConfig,
    fabric: Fabric,
    protocol: Protocol,
    workload: WorkloadGen,
    attacks: Vec<(AttackSpec, CoherenceMessage, bool)>,
    updates: VecDeque<(u64, PermissionUpdate)>,
    next_issue: Vec<u64>,
    pending: Vec<Option<MemOp>>,
    done: Vec<bool>,
    oracle: MemoryOracle,
    violations: Vec<ViolationRecord>,
    operations: u64,
    observer: Option<ObserverStats>,
    observer_probes: BTreeSet<PacketId>,
    injections: Vec<Injection>,
    deliveries: Vec<(u64, NodeId, PacketId, CoherenceMessage)>,
    record_traffic: bool,
    keep_completions: bool,
    completions: Vec<Completion>,
    malicious_delivered: u64,
    last_progress: u64,
}

impl Simulation {
    pub fn new(cfg: ValidatedConfig) -> Self {
        let seed = cfg.config.seed;
        let fabric = Fabric::new(cfg.fabric.clone(), ApuReplicas::new(cfg.table.clone(), MESH_ROUTERS));
        let protocol = Protocol::new(cfg.system, cfg.coherence);
        let workload = WorkloadGen::new(&cfg.config.workload, cfg.system, &cfg.table, seed, &cfg.trace_ops);
        let attacks = cfg
            .config
            .attacks
            .iter()
            .map(|a| {
                let msg = a.build(&cfg.system, &cfg.table).expect("validated attack builds");
                (a.clone(), msg, false)
            })
            .collect();
        let cores = cfg.system.cores();
        let observer = cfg.config.permissions.observer.map(|chiplet| ObserverStats {
            chiplet,
            ..Default::default()
        });
        Simulation {
            updates: cfg.updates.iter().copied().collect(),
            cfg,
            fabric,
            protocol,
            workload,
            attacks,
            next_issue: vec![0; cores],
            pending: vec![None; cores],
            done: vec![false; cores],
            oracle: MemoryOracle::new(),
            violations: Vec::new(),
            operations: 0,
            observer,
            observer_probes: BTreeSet::new(),
            injections: Vec::new(),
            deliveries: Vec::new(),
            record_traffic: false,
            keep_completions: false,
            completions: Vec::new(),
            malicious_delivered: 0,
            last_progress: 0,
        }
    }

    /// Keep the injection stream and every delivery (for neutrality checks).
    pub fn record_traffic(mut self, on: bool) -> Self {
        self.record_traffic = on;
        self
    }

    /// Keep every completed operation.
    pub fn keep_completions(mut self, on: bool) -> Self {
        self.keep_completions = on;
        self
    }

    /// Direct access to the protocol before the run starts (fault injection in tests).
    pub fn protocol_mut(&mut self) -> &mut Protocol {
        &mut self.protocol
    }

    pub fn run(mut self) -> RunOutput {
        let run = self.cfg.config.run.clone();
        let mut tick = 0u64;
        let halt = loop {
            if tick.is_multiple_of(TICKS_PER_CYCLE) {
                let cycle = tick / TICKS_PER_CYCLE;
                if let Some(h) = self.interposer_edge(cycle) {
                    break h;
                }
                if self.finished() {
                    break HaltCause::Completed;
                }
                if cycle >= run.max_cycles {
                    break HaltCause::CycleBudget;
                }
                if cycle - self.last_progress >= run.watchdog_cycles {
                    break HaltCause::Deadlock {
                        since_cycle: self.last_progress,
                    };
                }
            }
            if let Some(h) = self.chiplet_edge(tick) {
                break h;
            }
            tick += 1;
        };
        RunOutput {
            halt,
            cycles: tick / TICKS_PER_CYCLE,
            ticks: tick,
            fabric: self.fabric,
            protocol: self.protocol,
            violations: self.violations,
            operations: self.operations,
            loads_checked: self.oracle.applied,
            observer: self.observer,
            injections: self.injections,
            deliveries: self.deliveries,
            malicious_delivered: self.malicious_delivered,
            completions: self.completions,
        }
    }

    fn finished(&self) -> bool {
        self.done.iter().all(|&d| d)
            && self.attacks.iter().all(|a| a.2)
            && self.protocol.is_quiet()
            && self.fabric.is_idle()
    }

    fn interposer_edge(&mut self, cycle: u64) -> Option<HaltCause> {
        let mut scheduled = false;
        while self.updates.front().is_some_and(|(c, _)| *c <= cycle) {
            let (_, u) = self.updates.pop_front().expect("front exists");
            self.fabric.apu_mut().schedule(u).expect("validated update");
            scheduled = true;
        }
        if scheduled {
            self.fabric.apu_mut().apply_pending();
        }

        let violations = self.fabric.interposer_cycle(cycle);
        if !violations.is_empty() {
            let threat = violations[0].threat;
            self.violations.extend(violations);
            return Some(HaltCause::SecurityHalt { threat });
        }
        if self.fabric.take_progress() > 0 {
            self.last_progress = cycle;
        }

        for (mc, d) in self.fabric.take_mc_deliveries(cycle) {
            let node = NodeId::mc(mc as u8);
            if self.record_traffic {
                self.deliveries.push((cycle * TICKS_PER_CYCLE, node, d.packet, d.message.clone()));
            }
            if self.fabric.packet(d.packet).malicious {
                self.malicious_delivered += 1;
                continue;
            }
            self.protocol.directory_receive(mc, d.message, cycle);
        }
        for (mc, msg) in self.protocol.take_directory_outgoing(cycle) {
            if self.record_traffic {
                self.injections.push(Injection {
                    tick: cycle * TICKS_PER_CYCLE,
                    from: Endpoint::Mc(mc as u8),
                    message: msg.clone(),
                    malicious: false,
                });
            }
            let probe = matches!(msg.kind(), Some(MessageType::Probe | MessageType::ProbeInv));
            let unicast_target = self.cfg.system.chiplet_of(msg.destination);
            let ids = self.fabric.send_from_mc(mc, msg, cycle);
            if let (Some(obs), true) = (self.observer.as_mut(), probe) {
                for id in ids {
                    let target = self.fabric.packet(id).fanout_target.or(unicast_target);
                    if target == Some(obs.chiplet) {
                        obs.probes_addressed += 1;
                        self.observer_probes.insert(id);
                    }
                }
            }
        }

        if self.cfg.config.run.check_swmr {
            for line in self.protocol.take_touched() {
                if let Err(v) = self.protocol.check_swmr(line) {
                    return Some(swmr_halt(v));
                }
            }
        }
        None
    }

    fn chiplet_edge(&mut self, tick: u64) -> Option<HaltCause> {
        let cycle = tick / TICKS_PER_CYCLE;
        for d in self.fabric.take_core_deliveries(tick) {
            let dest = d.message.destination;
            if self.record_traffic {
                self.deliveries.push((tick, dest, d.packet, d.message.clone()));
            }
            let rec = self.fabric.packet(d.packet);
            if rec.malicious {
                self.malicious_delivered += 1;
                continue;
            }
            if let Some(obs) = self.observer.as_mut() {
                let kind = d.message.kind();
                if matches!(kind, Some(MessageType::Probe | MessageType::ProbeInv))
                    && self.cfg.system.chiplet_of(dest) == Some(obs.chiplet)
                {
                    obs.probes_delivered += 1;
                }
                if rec.rewritten && self.observer_probes.contains(&d.packet) {
                    obs.nacks_delivered += 1;
                }
            }
            self.protocol.core_receive(dest, d.message, tick);
        }
        self.protocol.retry_due(tick);
        if let Some(h) = self.collect_completions() {
            return Some(h);
        }

        for core in 0..self.next_issue.len() {
            if self.done[core] || tick < self.next_issue[core] {
                continue;
            }
            let id = NodeId(core as u8);
            if !self.protocol.is_idle(id) {
                continue;
            }
            let op = match self.pending[core].take() {
                Some(op) => op,
                None => match self.workload.next(core, cycle) {
                    Next::Op(op) => op,
                    Next::Wait => continue,
                    Next::Done => {
                        self.done[core] = true;
                        continue;
                    }
                },
            };
            match self.protocol.issue(id, op, tick) {
                crate::coherence::Issue::Stalled => {
                    self.pending[core] = Some(op);
                    self.next_issue[core] = tick + 1;
                }
                crate::coherence::Issue::Hit(_) | crate::coherence::Issue::Miss => {
                    self.next_issue[core] = u64::MAX;
                }
            }
        }
        if let Some(h) = self.collect_completions() {
            return Some(h);
        }

        if tick.is_multiple_of(TICKS_PER_CYCLE) {
            for (spec, msg, injected) in &mut self.attacks {
                if !*injected && spec.trigger_cycle <= cycle {
                    *injected = true;
                    let core = NodeId(spec.core);
                    if self.record_traffic {
                        self.injections.push(Injection {
                            tick,
                            from: Endpoint::Core(spec.core),
                            message: msg.clone(),
                            malicious: true,
                        });
                    }
                    self.fabric.send_from_core(core, msg.clone(), tick, true);
                }
            }
        }

        for (from, msg) in self.protocol.take_core_outgoing() {
            if self.record_traffic {
                self.injections.push(Injection {
                    tick,
                    from: Endpoint::Core(from.0),
                    message: msg.clone(),
                    malicious: false,
                });
            }
            self.fabric.send_from_core(from, msg, tick, false);
        }
        self.fabric.chiplet_tick(tick);
        None
    }

    fn collect_completions(&mut self) -> Option<HaltCause> {
        let think = self.cfg.config.workload.think_ticks.max(1);
        for c in self.protocol.take_completions() {
            self.operations += 1;
            self.last_progress = c.performed_tick / TICKS_PER_CYCLE;
            self.next_issue[c.core.0 as usize] = c.performed_tick + think;
            if self.cfg.config.run.check_oracle {
                if let Err(d) = self.oracle.apply(&c) {
                    return Some(oracle_halt(d));
                }
            }
            if self.keep_completions {
                self.completions.push(c);
            }
        }
        None
    }
}

fn swmr_halt(v: SwmrViolation) -> HaltCause {
    HaltCause::Swmr {
        detail: v.to_string(),
    }
}

fn oracle_halt(d: Divergence) -> HaltCause {
    HaltCause::Oracle {
        detail: d.to_string(),
    }
}

/// Validate and run `cfg` to completion.
pub fn run(cfg: ValidatedConfig) -> RunOutput {
    Simulation::new(cfg).run()
}
