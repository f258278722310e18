//! Security Network Interfaces: the packet checker/modifier that guards
//! every link entering the interposer mesh.
//!
//! SNI-1 sits on each chiplet link and SNI-2 on each memory-controller
//! link. Both run the same rule set; SNI-2 additionally turns directory
//! probes aimed at chiplets without access into NACKs for the requester.

pub mod legality;
pub mod pipeline;

use std::fmt;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::apu::{ApuTable, Permission};
use crate::codec::{CoherenceMessage, MessageType, NodeId};
use crate::noc::topology::{Attachment, Port, RouterId, SystemMap};
use legality::{rule_for, DestKind, Requirement, VNET_RESPONSE};

pub use pipeline::{HeaderEvent, SniPipeline};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThreatClass {
    PassiveReading,
    Masquerading,
    Modifying,
    Diverting,
    Malformed,
}

impl ThreatClass {
    pub const ALL: [ThreatClass; 5] = [
        ThreatClass::PassiveReading,
        ThreatClass::Masquerading,
        ThreatClass::Modifying,
        ThreatClass::Diverting,
        ThreatClass::Malformed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ThreatClass::PassiveReading => "passive-reading",
            ThreatClass::Masquerading => "masquerading",
            ThreatClass::Modifying => "modifying",
            ThreatClass::Diverting => "diverting",
            ThreatClass::Malformed => "malformed",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl fmt::Display for ThreatClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SniKind {
    Sni1,
    Sni2,
}

impl SniKind {
    pub fn baseline_latency(self) -> u64 {
        match self {
            SniKind::Sni1 => 2,
            SniKind::Sni2 => 3,
        }
    }
}

impl fmt::Display for SniKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SniKind::Sni1 => "SNI-1",
            SniKind::Sni2 => "SNI-2",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SniConfig {
    pub kind: SniKind,
    pub router: RouterId,
    pub attachment: Attachment,
    pub expected_requesters: RangeInclusive<u8>,
    pub latency_cycles: u64,
    pub system: SystemMap,
    /// Rewrite probes aimed at chiplets without access.
    pub probe_filtering: bool,
    /// Run the full rule set on memory-controller traffic too.
    pub check_directory_traffic: bool,
}

impl SniConfig {
    pub fn sni1(system: SystemMap, chiplet: usize) -> Self {
        SniConfig {
            kind: SniKind::Sni1,
            router: system.chiplet_router(chiplet),
            attachment: Attachment::Chiplet(chiplet),
            expected_requesters: system.cores_of(chiplet),
            latency_cycles: SniKind::Sni1.baseline_latency(),
            system,
            probe_filtering: true,
            check_directory_traffic: true,
        }
    }

    pub fn sni2(system: SystemMap, mc: usize) -> Self {
        let id = NodeId::mc(mc as u8).0;
        SniConfig {
            kind: SniKind::Sni2,
            router: system.mc_router(mc),
            attachment: Attachment::MemoryController(mc),
            expected_requesters: id..=id,
            latency_cycles: SniKind::Sni2.baseline_latency(),
            system,
            probe_filtering: true,
            check_directory_traffic: true,
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.latency_cycles == self.kind.baseline_latency()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SniVerdict {
    Allow,
    Rewrite {
        replacement: CoherenceMessage,
        new_destination: NodeId,
    },
    Violation {
        threat: ThreatClass,
        detail: String,
    },
}

impl SniVerdict {
    pub fn threat(&self) -> Option<ThreatClass> {
        match self {
            SniVerdict::Violation { threat, .. } => Some(*threat),
            _ => None,
        }
    }
}

fn violation(threat: ThreatClass, detail: impl Into<String>) -> SniVerdict {
    SniVerdict::Violation {
        threat,
        detail: detail.into(),
    }
}

fn permission(table: &ApuTable, address: u64, chiplet: usize) -> Permission {
    table
        .permission(address, chiplet)
        .unwrap_or(Permission::NoAccess)
}

/// Validate one fully extracted header against the rule set.
///
/// When several rules fail the first in this order wins: malformed
/// type/vnet, address range, requester identity, destination, probe
/// answers without visibility, region permission.
pub fn pcm_check(msg: &CoherenceMessage, cfg: &SniConfig, table: &ApuTable) -> SniVerdict {
    let Some(kind) = msg.kind() else {
        return violation(
            ThreatClass::Malformed,
            format!("undefined message type code {}", msg.msg_type.0),
        );
    };
    let rule = rule_for(kind);
    if msg.vnet != rule.vnet {
        return violation(
            ThreatClass::Malformed,
            format!("{kind} on vnet {} (legal: {})", msg.vnet, rule.vnet),
        );
    }
    if let Err(e) = table.lookup(msg.address) {
        return violation(ThreatClass::Malformed, e.to_string());
    }
    if msg.destination == NodeId::MANAGEMENT {
        return violation(
            ThreatClass::Masquerading,
            "packet addressed to the privileged management endpoint",
        );
    }
    match cfg.attachment {
        Attachment::Chiplet(c) => check_chiplet_origin(msg, kind, c, cfg, table),
        Attachment::MemoryController(m) => {
            if cfg.check_directory_traffic {
                check_directory_origin(msg, kind, m, cfg, table)
            } else {
                SniVerdict::Allow
            }
        }
        Attachment::None => SniVerdict::Allow,
    }
}

fn check_destination(
    msg: &CoherenceMessage,
    kind: MessageType,
    system: &SystemMap,
    table: &ApuTable,
) -> Option<SniVerdict> {
    let rule = rule_for(kind);
    let ok = match rule.dest {
        DestKind::HomeDirectory => msg.destination == system.home_of(msg.address),
        DestKind::Core => system.is_core(msg.destination),
        DestKind::CoreOrBroadcast => {
            system.is_core(msg.destination) || msg.destination == NodeId::BROADCAST
        }
    };
    if !ok {
        return Some(violation(
            ThreatClass::Diverting,
            format!("{kind} may not be addressed to node {}", msg.destination),
        ));
    }
    if legality::delivers_data(kind) {
        if let Some(target) = system.chiplet_of(msg.destination) {
            if permission(table, msg.address, target) == Permission::NoAccess {
                return Some(violation(
                    ThreatClass::Diverting,
                    format!(
                        "{kind} carries region data to chiplet {target}, which has no access"
                    ),
                ));
            }
        }
    }
    None
}

fn check_chiplet_origin(
    msg: &CoherenceMessage,
    kind: MessageType,
    chiplet: usize,
    cfg: &SniConfig,
    table: &ApuTable,
) -> SniVerdict {
    let rule = rule_for(kind);
    if !cfg.expected_requesters.contains(&msg.requester.0) {
        return violation(
            ThreatClass::Masquerading,
            format!(
                "requester {} outside {}..={}",
                msg.requester,
                cfg.expected_requesters.start(),
                cfg.expected_requesters.end()
            ),
        );
    }
    if !rule.origin.allows_chiplet() {
        return violation(
            ThreatClass::Masquerading,
            format!("{kind} may only be issued by a directory"),
        );
    }
    if let Some(v) = check_destination(msg, kind, &cfg.system, table) {
        return v;
    }

    let p = permission(table, msg.address, chiplet);
    let answers_probe = rule.requirement == Requirement::ProbeAnswer
        || (rule.dest == DestKind::Core && kind.carries_data());
    if p == Permission::NoAccess
        && answers_probe
        && (cfg.probe_filtering || rule.requirement != Requirement::ProbeAnswer)
    {
        return violation(
            ThreatClass::PassiveReading,
            format!("chiplet {chiplet} answers a probe for a region it cannot see"),
        );
    }
    let needed = match rule.requirement {
        Requirement::None | Requirement::ProbeAnswer => Permission::NoAccess,
        Requirement::Read => Permission::ReadOnly,
        Requirement::Write => Permission::ReadWrite,
        Requirement::WriteIfDirty if msg.dirty => Permission::ReadWrite,
        Requirement::WriteIfDirty => Permission::ReadOnly,
    };
    if p < needed {
        return violation(
            ThreatClass::Modifying,
            format!("{kind} needs {} but chiplet {chiplet} holds {}", needed.label(), p.label()),
        );
    }
    SniVerdict::Allow
}

fn check_directory_origin(
    msg: &CoherenceMessage,
    kind: MessageType,
    mc: usize,
    cfg: &SniConfig,
    table: &ApuTable,
) -> SniVerdict {
    let rule = rule_for(kind);
    if !rule.origin.allows_directory() {
        return violation(
            ThreatClass::Masquerading,
            format!("{kind} may only be issued by a chiplet"),
        );
    }
    let is_probe = matches!(kind, MessageType::Probe | MessageType::ProbeInv);
    let requester_ok = if is_probe {
        cfg.system.is_core(msg.requester)
    } else {
        msg.requester == NodeId::mc(mc as u8)
    };
    if !requester_ok {
        return violation(
            ThreatClass::Masquerading,
            format!("requester {} on a directory {kind}", msg.requester),
        );
    }
    check_destination(msg, kind, &cfg.system, table).unwrap_or(SniVerdict::Allow)
}

/// NACK that replaces a probe copy bound for `target_chiplet`.
pub fn nack_for(probe: &CoherenceMessage, target_chiplet: usize, system: &SystemMap) -> CoherenceMessage {
    CoherenceMessage::control(
        MessageType::Nack,
        system.first_core(target_chiplet),
        probe.requester,
        VNET_RESPONSE,
        probe.address,
    )
}

/// Probe filtering for one fan-out copy.
pub fn sni2_filter(
    probe: &CoherenceMessage,
    target_chiplet: usize,
    cfg: &SniConfig,
    table: &ApuTable,
) -> SniVerdict {
    let is_probe = matches!(probe.kind(), Some(MessageType::Probe | MessageType::ProbeInv));
    if cfg.kind != SniKind::Sni2 || !cfg.probe_filtering || !is_probe {
        return SniVerdict::Allow;
    }
    if permission(table, probe.address, target_chiplet) == Permission::NoAccess {
        let replacement = nack_for(probe, target_chiplet, &cfg.system);
        SniVerdict::Rewrite {
            new_destination: replacement.destination,
            replacement,
        }
    } else {
        SniVerdict::Allow
    }
}

/// Full SNI decision: rule check, then SNI-2 probe filtering.
pub fn evaluate(msg: &CoherenceMessage, cfg: &SniConfig, table: &ApuTable) -> SniVerdict {
    match pcm_check(msg, cfg, table) {
        SniVerdict::Allow => match cfg.system.chiplet_of(msg.destination) {
            Some(target) => sni2_filter(msg, target, cfg, table),
            None => SniVerdict::Allow,
        },
        other => other,
    }
}

/// One non-Allow verdict, as written to the violation log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub cycle: u64,
    pub router: RouterId,
    pub port: Port,
    pub sni: String,
    pub threat: Option<ThreatClass>,
    pub detail: String,
    pub message: String,
}

impl ViolationRecord {
    pub fn to_log_line(&self) -> String {
        serde_json::to_string(self).expect("violation records serialize")
    }
}

/// The machine-check exception: the first of the cycle's violations in
/// (router, port) order halts the system; all are kept for the log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineCheck {
    pub cycle: u64,
    pub cause: ViolationRecord,
    pub concurrent: Vec<ViolationRecord>,
}

pub fn raise_machine_check(mut violations: Vec<ViolationRecord>) -> Option<MachineCheck> {
    violations.retain(|v| v.threat.is_some());
    violations.sort_by_key(|a| (a.cycle, a.router, a.port));
    let cycle = violations.first()?.cycle;
    let cause = violations.remove(0);
    Some(MachineCheck {
        cycle,
        cause,
        concurrent: violations,
    })
}
