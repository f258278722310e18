//! Attack templates: one malicious message per scenario, handed to a core's
//! network interface at the trigger cycle like any legitimate packet.

use serde::{Deserialize, Serialize};

use crate::apu::{ApuTable, Permission, RegionId};
use crate::codec::{CoherenceMessage, DataBlock, MessageType, NodeId, TypeCode};
use crate::noc::topology::SystemMap;
use crate::sni::legality::{vnet_of, VNET_REQUEST};
use crate::sni::ThreatClass;

use super::config::ConfigError;

/// Undefined type code used by the malformed template.
pub const DEFAULT_ILLEGAL_TYPE: u8 = 30;
/// Requester the masquerading template claims by default.
pub const DEFAULT_SPOOFED_REQUESTER: u8 = 12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub threat: ThreatClass,
    /// Core whose network interface injects the message.
    #[serde(default)]
    pub core: u8,
    /// Interposer cycle of injection.
    #[serde(default = "default_trigger")]
    pub trigger_cycle: u64,
    /// Spoofed requester id (masquerading).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requester: Option<u8>,
    /// Target address; the default is picked from the permission table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<u64>,
    /// Type code (malformed).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_code: Option<u8>,
    /// Diverted destination (diverting) or probe-answer target (passive reading).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<u8>,
}

fn default_trigger() -> u64 {
    100
}

impl AttackSpec {
    pub fn new(threat: ThreatClass, core: u8, trigger_cycle: u64) -> Self {
        AttackSpec {
            threat,
            core,
            trigger_cycle,
            requester: None,
            address: None,
            type_code: None,
            destination: None,
        }
    }

    pub fn validate(&self, system: &SystemMap, table: &ApuTable) -> Result<(), ConfigError> {
        self.build(system, table).map(|_| ())
    }

    /// The malicious message this scenario injects.
    pub fn build(&self, system: &SystemMap, table: &ApuTable) -> Result<CoherenceMessage, ConfigError> {
        let bad = |m: String| ConfigError::Invalid(format!("{} attack: {m}", self.threat));
        let core = NodeId(self.core);
        let chiplet = system
            .chiplet_of(core)
            .ok_or_else(|| bad(format!("core {} does not exist", self.core)))?;
        let regions = table.geometry().regions;
        let base = |r: usize| table.geometry().region_base(RegionId(r));
        let perm = |r: usize, c: usize| {
            table.entries()[r]
                .permission_of(c)
                .unwrap_or(Permission::NoAccess)
        };
        let find = |pred: &dyn Fn(usize) -> bool| (0..regions).find(|&r| pred(r)).map(base);
        let readable = find(&|r| perm(r, chiplet).can_read()).unwrap_or(0);

        let msg = match self.threat {
            ThreatClass::Masquerading => {
                let spoof = self.requester.unwrap_or(DEFAULT_SPOOFED_REQUESTER);
                if system.cores_of(chiplet).contains(&spoof) {
                    return Err(bad(format!(
                        "requester {spoof} belongs to chiplet {chiplet}, so nothing is spoofed"
                    )));
                }
                let address = self.address.unwrap_or(readable);
                CoherenceMessage::control(
                    MessageType::GetS,
                    NodeId(spoof),
                    system.home_of(address),
                    VNET_REQUEST,
                    address,
                )
            }
            ThreatClass::Modifying => {
                let address = match self.address {
                    Some(a) => a,
                    None => find(&|r| perm(r, chiplet) == Permission::ReadOnly)
                        .or_else(|| find(&|r| perm(r, chiplet) == Permission::NoAccess))
                        .ok_or_else(|| bad(format!("chiplet {chiplet} may write every region")))?,
                };
                CoherenceMessage::control(
                    MessageType::GetX,
                    core,
                    system.home_of(address),
                    VNET_REQUEST,
                    address,
                )
            }
            ThreatClass::Diverting => {
                let address = self.address.unwrap_or(readable);
                let region = table.lookup(address).map_err(|e| bad(e.to_string()))?.0 .0;
                let target = match self.destination {
                    Some(d) => NodeId(d),
                    None => (0..system.chiplets)
                        .find(|&c| perm(region, c) == Permission::NoAccess)
                        .map(|c| system.first_core(c))
                        .ok_or_else(|| bad(format!("every chiplet may access region {region}")))?,
                };
                let mut m = CoherenceMessage::control(
                    MessageType::Data,
                    core,
                    target,
                    vnet_of(MessageType::Data),
                    address,
                );
                m.cur_owner = core;
                m.data = Some(DataBlock::default());
                m
            }
            ThreatClass::PassiveReading => {
                let address = match self.address {
                    Some(a) => a,
                    None => find(&|r| perm(r, chiplet) == Permission::NoAccess)
                        .ok_or_else(|| bad(format!("chiplet {chiplet} may access every region")))?,
                };
                let target = match self.destination {
                    Some(d) => NodeId(d),
                    None => (0..system.cores())
                        .map(|c| NodeId(c as u8))
                        .find(|&c| system.chiplet_of(c) != Some(chiplet))
                        .unwrap_or(core),
                };
                let mut m = CoherenceMessage::control(
                    MessageType::SharedAck,
                    core,
                    target,
                    vnet_of(MessageType::SharedAck),
                    address,
                );
                m.cur_owner = core;
                m
            }
            ThreatClass::Malformed => {
                let code = self.type_code.unwrap_or(DEFAULT_ILLEGAL_TYPE);
                if code >= 32 {
                    return Err(bad(format!("type code {code} does not fit the 5-bit field")));
                }
                let address = self.address.unwrap_or(readable);
                let mut m = CoherenceMessage::control(
                    MessageType::GetS,
                    core,
                    system.home_of(address),
                    VNET_REQUEST,
                    address,
                );
                m.msg_type = TypeCode(code);
                m
            }
        };
        Ok(msg)
    }
}

/// One template per threat class, injected from `core`.
pub fn suite(core: u8, trigger_cycle: u64) -> Vec<AttackSpec> {
    ThreatClass::ALL
        .iter()
        .map(|&t| AttackSpec::new(t, core, trigger_cycle))
        .collect()
}
