//! Static legality table: which virtual network, origin and destination
//! kind each message type may use, and what region permission its sender
//! needs. `docs/legality.md` renders the same table.

use crate::codec::MessageType;

/// Who may inject the message into the interposer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Chiplet,
    Directory,
    /// Chiplets and directories both send it.
    Either,
}

impl Origin {
    pub fn allows_chiplet(self) -> bool {
        matches!(self, Origin::Chiplet | Origin::Either)
    }

    pub fn allows_directory(self) -> bool {
        matches!(self, Origin::Directory | Origin::Either)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DestKind {
    /// The address's home directory.
    HomeDirectory,
    /// A core.
    Core,
    /// A core, or the broadcast sentinel.
    CoreOrBroadcast,
}

/// Region permission the sending chiplet must hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Requirement {
    None,
    Read,
    Write,
    /// Read, and write when the dirty bit is set.
    WriteIfDirty,
    /// Answer to a probe: the sender must have been allowed to see the probe.
    ProbeAnswer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rule {
    pub msg: MessageType,
    pub vnet: u8,
    pub origin: Origin,
    pub dest: DestKind,
    pub requirement: Requirement,
}

pub const VNET_REQUEST: u8 = 0;
pub const VNET_FORWARD: u8 = 1;
pub const VNET_RESPONSE: u8 = 2;
pub const VNET_UNBLOCK: u8 = 3;

const fn rule(
    msg: MessageType,
    vnet: u8,
    origin: Origin,
    dest: DestKind,
    requirement: Requirement,
) -> Rule {
    Rule {
        msg,
        vnet,
        origin,
        dest,
        requirement,
    }
}

use DestKind::*;
use MessageType as T;
use Origin::*;
use Requirement as R;

pub const RULES: [Rule; 22] = [
    rule(T::GetX, VNET_REQUEST, Chiplet, HomeDirectory, R::Write),
    rule(T::GetS, VNET_REQUEST, Chiplet, HomeDirectory, R::Read),
    rule(T::Put, VNET_REQUEST, Chiplet, HomeDirectory, R::Read),
    rule(T::WbAck, VNET_FORWARD, Directory, Core, R::None),
    rule(T::WbNack, VNET_FORWARD, Directory, Core, R::None),
    rule(T::Inv, VNET_FORWARD, Directory, Core, R::None),
    rule(T::GetInstr, VNET_REQUEST, Chiplet, HomeDirectory, R::Read),
    rule(T::MergedGetS, VNET_REQUEST, Chiplet, HomeDirectory, R::Read),
    rule(T::Unblock, VNET_UNBLOCK, Chiplet, HomeDirectory, R::Read),
    rule(T::UnblockS, VNET_UNBLOCK, Chiplet, HomeDirectory, R::Read),
    rule(T::Ack, VNET_RESPONSE, Chiplet, Core, R::ProbeAnswer),
    rule(T::SharedAck, VNET_RESPONSE, Chiplet, Core, R::ProbeAnswer),
    rule(T::Nack, VNET_RESPONSE, Directory, Core, R::None),
    rule(T::Data, VNET_RESPONSE, Chiplet, Core, R::WriteIfDirty),
    rule(T::DataShared, VNET_RESPONSE, Chiplet, Core, R::WriteIfDirty),
    rule(T::DataExclusive, VNET_RESPONSE, Either, Core, R::WriteIfDirty),
    rule(T::MemoryData, VNET_RESPONSE, Directory, Core, R::None),
    rule(T::MemoryAck, VNET_RESPONSE, Directory, Core, R::None),
    rule(T::UnblockAck, VNET_RESPONSE, Directory, Core, R::None),
    rule(T::Probe, VNET_FORWARD, Directory, CoreOrBroadcast, R::None),
    rule(T::ProbeInv, VNET_FORWARD, Directory, CoreOrBroadcast, R::None),
    rule(T::WritebackData, VNET_RESPONSE, Chiplet, HomeDirectory, R::WriteIfDirty),
];

pub fn rule_for(msg: MessageType) -> &'static Rule {
    RULES
        .iter()
        .find(|r| r.msg == msg)
        .expect("every message type has a rule")
}

pub fn vnet_of(msg: MessageType) -> u8 {
    rule_for(msg).vnet
}

/// Whether a message carries data whose recipient must itself be allowed to read it.
pub fn delivers_data(msg: MessageType) -> bool {
    msg.carries_data() && rule_for(msg).dest == DestKind::Core
}

/// Markdown rendering of [`RULES`].
pub fn render_markdown() -> String {
    let mut out = String::from(
        "| type | code | vnet | origin | destination | sender needs |\n|---|---|---|---|---|---|\n",
    );
    for r in &RULES {
        out.push_str(&format!(
            "| {} | {} | {} | {:?} | {:?} | {:?} |\n",
            r.msg,
            r.msg.code().0,
            r.vnet,
            r.origin,
            r.dest,
            r.requirement
        ));
    }
    out
}
