//! Bit-exact coherence message layout and its segmentation into link flits.
//!
//! A message is a 128-bit header followed, for data responses only, by a
//! 512-bit data block. The low 64 bits of the header hold the control
//! parameters, the high 64 bits hold the physical address:
//!
//! | field        | header bits | width |
//! |--------------|-------------|-------|
//! | type         | 0..5        | 5     |
//! | requester    | 5..13       | 8     |
//! | destination  | 13..21      | 8     |
//! | vnet         | 21..23      | 2     |
//! | cur_owner    | 23..31      | 8     |
//! | dirty        | 31          | 1     |
//! | reserved (0) | 32..64      | 32    |
//! | address      | 64..128     | 64    |
//!
//! At a 64-bit link the header occupies two flits (control, then address);
//! at 128 bits it is a single flit. Data words follow little-endian, one
//! 64-bit word per 64-bit flit or two words per 128-bit flit.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TYPE_OFFSET: u32 = 0;
pub const TYPE_BITS: u32 = 5;
pub const REQUESTER_OFFSET: u32 = 5;
pub const DESTINATION_OFFSET: u32 = 13;
pub const NODE_BITS: u32 = 8;
pub const VNET_OFFSET: u32 = 21;
pub const VNET_BITS: u32 = 2;
pub const CUR_OWNER_OFFSET: u32 = 23;
pub const DIRTY_OFFSET: u32 = 31;
/// Bits of the control half actually used; the rest of the low 64 bits are reserved-zero.
pub const CONTROL_BITS: u32 = 32;
pub const ADDRESS_OFFSET: u32 = 64;

pub const HEADER_BITS: u32 = 128;
pub const DATA_BLOCK_BYTES: usize = 64;
pub const DATA_BLOCK_BITS: u32 = 512;
pub const DATA_WORDS: usize = 8;

/// Number of virtual networks.
pub const VNETS: u8 = 4;

/// Physical address space of the baseline system (4 GiB).
pub const MEMORY_BYTES: u64 = 1 << 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("field `{field}` value {value} does not fit in {bits} bits")]
    FieldOverflow {
        field: &'static str,
        value: u64,
        bits: u32,
    },
    #[error("message type {0} must carry a data block")]
    MissingDataBlock(TypeCode),
    #[error("message type {0} cannot carry a data block")]
    UnexpectedDataBlock(TypeCode),
    #[error("malformed flit stream: {0}")]
    MalformedStream(String),
}

/// Network node identifier as carried in the 8-bit id fields.
///
/// Cores are 0..64, memory controllers (directories) 64..68.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u8);

impl NodeId {
    pub const FIRST_MC: u8 = 64;
    pub const MC_COUNT: u8 = 4;
    /// Destination sentinel for directory broadcasts.
    pub const BROADCAST: NodeId = NodeId(255);
    /// Reserved endpoint of the interposer's privileged management path.
    /// Chiplets can never legitimately address it.
    pub const MANAGEMENT: NodeId = NodeId(254);

    pub fn core(index: u8) -> Self {
        NodeId(index)
    }

    pub fn mc(index: u8) -> Self {
        NodeId(Self::FIRST_MC + index)
    }

    pub fn is_core(self) -> bool {
        self.0 < Self::FIRST_MC
    }

    pub fn is_mc(self) -> bool {
        (Self::FIRST_MC..Self::FIRST_MC + Self::MC_COUNT).contains(&self.0)
    }

    pub fn mc_index(self) -> Option<u8> {
        self.is_mc().then(|| self.0 - Self::FIRST_MC)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Requester/destination broad category of a message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageClass {
    Request,
    ControlResponse,
    DataResponse,
}

macro_rules! message_types {
    ($( $variant:ident = $code:literal, $name:literal, $class:ident; )*) => {
        /// The 22 defined coherence message types (10 requests, 12 responses).
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum MessageType {
            $( $variant, )*
        }

        impl MessageType {
            pub const ALL: [MessageType; 22] = [$( MessageType::$variant, )*];

            pub fn code(self) -> TypeCode {
                match self {
                    $( MessageType::$variant => TypeCode($code), )*
                }
            }

            pub fn from_code(code: u8) -> Option<Self> {
                match code {
                    $( $code => Some(MessageType::$variant), )*
                    _ => None,
                }
            }

            pub fn name(self) -> &'static str {
                match self {
                    $( MessageType::$variant => $name, )*
                }
            }

            pub fn class(self) -> MessageClass {
                match self {
                    $( MessageType::$variant => MessageClass::$class, )*
                }
            }

            pub fn from_name(name: &str) -> Option<Self> {
                match name {
                    $( $name => Some(MessageType::$variant), )*
                    _ => None,
                }
            }
        }
    };
}

message_types! {
    GetX = 0, "GETX", Request;
    GetS = 1, "GETS", Request;
    Put = 2, "PUT", Request;
    WbAck = 3, "WB_ACK", Request;
    WbNack = 4, "WB_NACK", Request;
    Inv = 5, "INV", Request;
    GetInstr = 6, "GET_INSTR", Request;
    MergedGetS = 7, "MERGED_GETS", Request;
    Unblock = 8, "UNBLOCK", Request;
    UnblockS = 9, "UNBLOCKS", Request;
    Ack = 10, "ACK", ControlResponse;
    SharedAck = 11, "SHARED_ACK", ControlResponse;
    Nack = 12, "NACK", ControlResponse;
    Data = 13, "DATA", DataResponse;
    DataShared = 14, "DATA_SHARED", DataResponse;
    DataExclusive = 15, "DATA_EXCLUSIVE", DataResponse;
    MemoryData = 16, "MEMORY_DATA", DataResponse;
    MemoryAck = 17, "MEMORY_ACK", ControlResponse;
    UnblockAck = 18, "UNBLOCK_ACK", ControlResponse;
    Probe = 19, "PROBE", ControlResponse;
    ProbeInv = 20, "PROBE_INV", ControlResponse;
    WritebackData = 21, "WRITEBACK_DATA", DataResponse;
}

impl MessageType {
    pub fn carries_data(self) -> bool {
        self.class() == MessageClass::DataResponse
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Raw 5-bit type field. May hold an undefined code (a fabricated message).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypeCode(pub u8);

impl TypeCode {
    pub fn kind(self) -> Option<MessageType> {
        MessageType::from_code(self.0)
    }

    /// Undefined codes carry no data block.
    pub fn carries_data(self) -> bool {
        self.kind().is_some_and(MessageType::carries_data)
    }
}

impl From<MessageType> for TypeCode {
    fn from(t: MessageType) -> Self {
        t.code()
    }
}

impl fmt::Display for TypeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            Some(t) => f.write_str(t.name()),
            None => write!(f, "TYPE{}", self.0),
        }
    }
}

/// A 64-byte cache line payload, as eight little-endian words.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataBlock(pub [u64; DATA_WORDS]);

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoherenceMessage {
    pub msg_type: TypeCode,
    pub requester: NodeId,
    pub destination: NodeId,
    pub vnet: u8,
    pub address: u64,
    pub cur_owner: NodeId,
    pub dirty: bool,
    pub data: Option<DataBlock>,
}

impl CoherenceMessage {
    /// A control message with zeroed response-only fields.
    pub fn control(
        msg_type: MessageType,
        requester: NodeId,
        destination: NodeId,
        vnet: u8,
        address: u64,
    ) -> Self {
        CoherenceMessage {
            msg_type: msg_type.code(),
            requester,
            destination,
            vnet,
            address,
            cur_owner: NodeId(0),
            dirty: false,
            data: None,
        }
    }

    pub fn kind(&self) -> Option<MessageType> {
        self.msg_type.kind()
    }

    pub fn class(&self) -> MessageClass {
        self.kind()
            .map(MessageType::class)
            .unwrap_or(MessageClass::Request)
    }

    pub fn is_broadcast(&self) -> bool {
        self.destination == NodeId::BROADCAST
    }

    /// Canonical single-line rendering used by golden vectors and logs.
    pub fn canonical(&self) -> String {
        let mut s = format!(
            "{} req={} dst={} vn={} addr={:#018x} owner={} dirty={}",
            self.msg_type,
            self.requester,
            self.destination,
            self.vnet,
            self.address,
            self.cur_owner,
            u8::from(self.dirty)
        );
        if let Some(block) = &self.data {
            s.push_str(" data=");
            for (i, w) in block.0.iter().enumerate() {
                if i > 0 {
                    s.push(':');
                }
                s.push_str(&format!("{w:016x}"));
            }
        }
        s
    }
}

impl fmt::Display for CoherenceMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// Interposer link width. Chiplet links are always 128 bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum LinkWidth {
    W64,
    W128,
}

impl LinkWidth {
    pub const CHIPLET: LinkWidth = LinkWidth::W128;

    pub fn bits(self) -> u32 {
        match self {
            LinkWidth::W64 => 64,
            LinkWidth::W128 => 128,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            64 => Some(LinkWidth::W64),
            128 => Some(LinkWidth::W128),
            _ => None,
        }
    }

    fn mask(self) -> u128 {
        match self {
            LinkWidth::W64 => u64::MAX as u128,
            LinkWidth::W128 => u128::MAX,
        }
    }

    /// Flits needed for the header at this width.
    pub fn header_flits(self) -> usize {
        HEADER_BITS.div_ceil(self.bits()) as usize
    }

    /// Flits needed for a data block at this width.
    pub fn data_flits(self) -> usize {
        DATA_BLOCK_BITS.div_ceil(self.bits()) as usize
    }

    pub fn flits_for(self, msg_type: TypeCode) -> usize {
        self.header_flits()
            + if msg_type.carries_data() {
                self.data_flits()
            } else {
                0
            }
    }
}

impl TryFrom<u32> for LinkWidth {
    type Error = String;

    fn try_from(bits: u32) -> Result<Self, Self::Error> {
        LinkWidth::from_bits(bits)
            .ok_or_else(|| format!("link width {bits} is not one of 64 or 128 bits"))
    }
}

impl From<LinkWidth> for u32 {
    fn from(w: LinkWidth) -> u32 {
        w.bits()
    }
}

/// Chiplet links are fixed at 128 bits; only the interposer width varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkWidthConfig {
    pub interposer: LinkWidth,
}

impl LinkWidthConfig {
    pub fn chiplet_link_bits(&self) -> u32 {
        LinkWidth::CHIPLET.bits()
    }

    pub fn interposer_link_bits(&self) -> u32 {
        self.interposer.bits()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlitPosition {
    Head,
    Body,
    Tail,
    HeadTail,
}

impl FlitPosition {
    fn for_index(index: usize, count: usize) -> Self {
        match (index == 0, index + 1 == count) {
            (true, true) => FlitPosition::HeadTail,
            (true, false) => FlitPosition::Head,
            (false, true) => FlitPosition::Tail,
            (false, false) => FlitPosition::Body,
        }
    }

    pub fn is_head(self) -> bool {
        matches!(self, FlitPosition::Head | FlitPosition::HeadTail)
    }

    pub fn is_tail(self) -> bool {
        matches!(self, FlitPosition::Tail | FlitPosition::HeadTail)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PacketId(pub u64);

/// Out-of-band timestamps; never part of the encoded bits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlitMeta {
    /// Position within the packet's interposer-width stream.
    pub index: u16,
    pub injected: Option<u64>,
    pub ingress: Option<u64>,
    pub egress: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Flit {
    /// Low `width` bits are significant; the rest are zero.
    pub payload: u128,
    pub position: FlitPosition,
    pub packet_id: PacketId,
    pub meta: FlitMeta,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlitStream {
    pub width: LinkWidth,
    pub flits: Vec<Flit>,
}

impl FlitStream {
    pub fn len(&self) -> usize {
        self.flits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flits.is_empty()
    }

    pub fn payloads(&self) -> impl Iterator<Item = u128> + '_ {
        self.flits.iter().map(|f| f.payload)
    }

    pub fn with_packet_id(mut self, id: PacketId) -> Self {
        for f in &mut self.flits {
            f.packet_id = id;
        }
        self
    }
}

fn check_width(field: &'static str, value: u64, bits: u32) -> Result<(), CodecError> {
    if value >> bits != 0 {
        Err(CodecError::FieldOverflow { field, value, bits })
    } else {
        Ok(())
    }
}

fn control_word(msg: &CoherenceMessage) -> u64 {
    (msg.msg_type.0 as u64) << TYPE_OFFSET
        | (msg.requester.0 as u64) << REQUESTER_OFFSET
        | (msg.destination.0 as u64) << DESTINATION_OFFSET
        | (msg.vnet as u64) << VNET_OFFSET
        | (msg.cur_owner.0 as u64) << CUR_OWNER_OFFSET
        | (msg.dirty as u64) << DIRTY_OFFSET
}

fn field(word: u64, offset: u32, bits: u32) -> u64 {
    (word >> offset) & ((1u64 << bits) - 1)
}

/// Segment a message into flits of the given width.
pub fn encode(msg: &CoherenceMessage, width: LinkWidth) -> Result<FlitStream, CodecError> {
    check_width("msg_type", msg.msg_type.0 as u64, TYPE_BITS)?;
    check_width("vnet", msg.vnet as u64, VNET_BITS)?;
    match (msg.msg_type.carries_data(), msg.data.is_some()) {
        (true, false) => return Err(CodecError::MissingDataBlock(msg.msg_type)),
        (false, true) => return Err(CodecError::UnexpectedDataBlock(msg.msg_type)),
        _ => {}
    }

    let header = control_word(msg) as u128 | (msg.address as u128) << ADDRESS_OFFSET;
    let mut payloads: Vec<u128> = Vec::with_capacity(width.flits_for(msg.msg_type));
    match width {
        LinkWidth::W128 => payloads.push(header),
        LinkWidth::W64 => {
            payloads.push(header & LinkWidth::W64.mask());
            payloads.push(header >> 64);
        }
    }
    if let Some(block) = &msg.data {
        match width {
            LinkWidth::W128 => payloads.extend(
                block
                    .0
                    .chunks_exact(2)
                    .map(|w| w[0] as u128 | (w[1] as u128) << 64),
            ),
            LinkWidth::W64 => payloads.extend(block.0.iter().map(|&w| w as u128)),
        }
    }

    let count = payloads.len();
    let flits = payloads
        .into_iter()
        .enumerate()
        .map(|(i, payload)| Flit {
            payload,
            position: FlitPosition::for_index(i, count),
            packet_id: PacketId::default(),
            meta: FlitMeta::default(),
        })
        .collect();
    Ok(FlitStream { width, flits })
}

fn malformed(msg: impl Into<String>) -> CodecError {
    CodecError::MalformedStream(msg.into())
}

/// Inverse of [`encode`].
pub fn decode(stream: &FlitStream) -> Result<CoherenceMessage, CodecError> {
    let width = stream.width;
    let flits = &stream.flits;
    if let Some((i, _)) = flits
        .iter()
        .enumerate()
        .find(|(_, f)| f.payload & !width.mask() != 0)
    {
        return Err(malformed(format!("flit {i} exceeds the {}-bit link width", width.bits())));
    }
    for (i, f) in flits.iter().enumerate() {
        if f.position != FlitPosition::for_index(i, flits.len()) {
            return Err(malformed(format!("flit {i} has position {:?}", f.position)));
        }
    }

    let header_flits = width.header_flits();
    if flits.len() < header_flits {
        return Err(malformed(format!(
            "{} flit(s) cannot hold a {}-bit header",
            flits.len(),
            HEADER_BITS
        )));
    }
    let header = match width {
        LinkWidth::W128 => flits[0].payload,
        LinkWidth::W64 => flits[0].payload | flits[1].payload << 64,
    };
    let control = header as u64;
    if control >> CONTROL_BITS != 0 {
        return Err(malformed("reserved header bits are set"));
    }
    let msg_type = TypeCode(field(control, TYPE_OFFSET, TYPE_BITS) as u8);

    let expected = width.flits_for(msg_type);
    if flits.len() != expected {
        return Err(malformed(format!(
            "{msg_type} needs {expected} flit(s) at {} bits, got {}",
            width.bits(),
            flits.len()
        )));
    }
    let data = msg_type.carries_data().then(|| {
        let mut words = [0u64; DATA_WORDS];
        let body = &flits[header_flits..];
        match width {
            LinkWidth::W128 => {
                for (pair, f) in words.chunks_exact_mut(2).zip(body) {
                    pair[0] = f.payload as u64;
                    pair[1] = (f.payload >> 64) as u64;
                }
            }
            LinkWidth::W64 => {
                for (w, f) in words.iter_mut().zip(body) {
                    *w = f.payload as u64;
                }
            }
        }
        DataBlock(words)
    });

    Ok(CoherenceMessage {
        msg_type,
        requester: NodeId(field(control, REQUESTER_OFFSET, NODE_BITS) as u8),
        destination: NodeId(field(control, DESTINATION_OFFSET, NODE_BITS) as u8),
        vnet: field(control, VNET_OFFSET, VNET_BITS) as u8,
        address: (header >> ADDRESS_OFFSET) as u64,
        cur_owner: NodeId(field(control, CUR_OWNER_OFFSET, NODE_BITS) as u8),
        dirty: field(control, DIRTY_OFFSET, 1) == 1,
        data,
    })
}

/// Header fields visible to the SNI after a given number of extraction cycles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PartialHeader {
    pub msg_type: Option<TypeCode>,
    pub requester: Option<NodeId>,
    pub destination: Option<NodeId>,
    pub vnet: Option<u8>,
    pub cur_owner: Option<NodeId>,
    pub dirty: Option<bool>,
    pub address: Option<u64>,
}

impl PartialHeader {
    pub fn is_complete(&self) -> bool {
        self.msg_type.is_some()
            && self.requester.is_some()
            && self.destination.is_some()
            && self.vnet.is_some()
            && self.address.is_some()
    }

    fn absorb_control(&mut self, control: u64) {
        self.msg_type = Some(TypeCode(field(control, TYPE_OFFSET, TYPE_BITS) as u8));
        self.requester = Some(NodeId(field(control, REQUESTER_OFFSET, NODE_BITS) as u8));
        self.destination = Some(NodeId(field(control, DESTINATION_OFFSET, NODE_BITS) as u8));
        self.vnet = Some(field(control, VNET_OFFSET, VNET_BITS) as u8);
        self.cur_owner = Some(NodeId(field(control, CUR_OWNER_OFFSET, NODE_BITS) as u8));
        self.dirty = Some(field(control, DIRTY_OFFSET, 1) == 1);
    }
}

/// Fields extracted after `cycle` SNI extraction cycles (1 or 2).
///
/// At 64 bits cycle 1 sees the control flit and cycle 2 adds the address;
/// at 128 bits everything is available after cycle 1.
pub fn extract_stage(flits: &[Flit], width: LinkWidth, cycle: u8) -> PartialHeader {
    let mut header = PartialHeader::default();
    let Some(first) = flits.first() else {
        return header;
    };
    if cycle == 0 {
        return header;
    }
    header.absorb_control(first.payload as u64);
    match width {
        LinkWidth::W128 => header.address = Some((first.payload >> 64) as u64),
        LinkWidth::W64 => {
            if cycle >= 2 {
                header.address = flits.get(1).map(|f| f.payload as u64);
            }
        }
    }
    header
}

/// One golden-vector record: `w<width> <hex flits...> | <canonical message>`.
pub fn golden_line(msg: &CoherenceMessage, width: LinkWidth) -> Result<String, CodecError> {
    let stream = encode(msg, width)?;
    let digits = (width.bits() / 4) as usize;
    let hex: Vec<String> = stream
        .payloads()
        .map(|p| format!("{p:0digits$x}"))
        .collect();
    Ok(format!("w{} {} | {}", width.bits(), hex.join(" "), msg.canonical()))
}

/// Parse a golden-vector record back into its width, flit payloads and canonical text.
pub fn parse_golden_line(line: &str) -> Result<(LinkWidth, Vec<u128>, String), CodecError> {
    let (flits, text) = line
        .split_once(" | ")
        .ok_or_else(|| malformed("golden line lacks ` | ` separator"))?;
    let mut parts = flits.split_whitespace();
    let width = parts
        .next()
        .and_then(|w| w.strip_prefix('w'))
        .and_then(|w| w.parse().ok())
        .and_then(LinkWidth::from_bits)
        .ok_or_else(|| malformed("golden line lacks a w64/w128 width tag"))?;
    let payloads = parts
        .map(|h| u128::from_str_radix(h, 16).map_err(|e| malformed(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((width, payloads, text.to_string()))
}

/// Rebuild a stream from raw payloads, assigning positions by index.
pub fn stream_from_payloads(width: LinkWidth, payloads: &[u128]) -> FlitStream {
    let count = payloads.len();
    FlitStream {
        width,
        flits: payloads
            .iter()
            .enumerate()
            .map(|(i, &payload)| Flit {
                payload,
                position: FlitPosition::for_index(i, count),
                packet_id: PacketId::default(),
                meta: FlitMeta::default(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gets() -> CoherenceMessage {
        CoherenceMessage::control(MessageType::GetS, NodeId(3), NodeId::mc(0), 0, 0x2000_0000)
    }

    fn data_response() -> CoherenceMessage {
        CoherenceMessage {
            data: Some(DataBlock([1, 2, 3, 4, 5, 6, 7, 8])),
            ..CoherenceMessage::control(MessageType::Data, NodeId(9), NodeId(3), 2, 0x40)
        }
    }

    fn sample_of(t: MessageType) -> CoherenceMessage {
        let mut m = CoherenceMessage::control(t, NodeId(17), NodeId::mc(2), 3, 0xdead_bec0);
        m.cur_owner = NodeId(5);
        m.dirty = true;
        if t.carries_data() {
            m.data = Some(DataBlock([u64::MAX, 0, 0x0123_4567_89ab_cdef, 7, 8, 9, 10, 11]));
        }
        m
    }

    #[test]
    fn twenty_two_types_ten_requests() {
        let requests = MessageType::ALL
            .iter()
            .filter(|t| t.class() == MessageClass::Request)
            .count();
        assert_eq!(requests, 10);
        assert_eq!(MessageType::ALL.len() - requests, 12);
        for t in MessageType::ALL {
            assert!(t.code().0 < 32);
            assert_eq!(MessageType::from_code(t.code().0), Some(t));
            assert_eq!(MessageType::from_name(t.name()), Some(t));
        }
    }

    #[test]
    fn control_message_flit_counts() {
        assert_eq!(encode(&gets(), LinkWidth::W128).unwrap().len(), 1);
        assert_eq!(encode(&gets(), LinkWidth::W64).unwrap().len(), 2);
        assert_eq!(
            encode(&gets(), LinkWidth::W128).unwrap().flits[0].position,
            FlitPosition::HeadTail
        );
    }

    #[test]
    fn data_response_is_ten_flits_at_64() {
        let stream = encode(&data_response(), LinkWidth::W64).unwrap();
        assert_eq!(stream.len(), 10);
        assert_eq!(decode(&stream).unwrap(), data_response());
        assert_eq!(encode(&data_response(), LinkWidth::W128).unwrap().len(), 5);
    }

    #[test]
    fn header_bits_by_hand() {
        // GETS=1, req=3, dst=64, vn=0: 1 | 3<<5 | 64<<13
        let expected_control: u64 = 1 | (3 << 5) | (64 << 13);
        let s = encode(&gets(), LinkWidth::W64).unwrap();
        assert_eq!(s.flits[0].payload, expected_control as u128);
        assert_eq!(s.flits[1].payload, 0x2000_0000);
        let wide = encode(&gets(), LinkWidth::W128).unwrap();
        assert_eq!(
            wide.flits[0].payload,
            expected_control as u128 | 0x2000_0000u128 << 64
        );
    }

    #[test]
    fn every_type_roundtrips_at_both_widths() {
        for t in MessageType::ALL {
            for w in [LinkWidth::W64, LinkWidth::W128] {
                let m = sample_of(t);
                assert_eq!(decode(&encode(&m, w).unwrap()).unwrap(), m, "{t} at {w:?}");
            }
        }
    }

    #[test]
    fn overflow_is_rejected() {
        let mut m = gets();
        m.vnet = 4;
        assert!(matches!(
            encode(&m, LinkWidth::W64),
            Err(CodecError::FieldOverflow { field: "vnet", .. })
        ));
        m.vnet = 0;
        m.msg_type = TypeCode(32);
        assert!(matches!(
            encode(&m, LinkWidth::W64),
            Err(CodecError::FieldOverflow { field: "msg_type", .. })
        ));
    }

    #[test]
    fn data_presence_must_match_class() {
        let mut m = gets();
        m.data = Some(DataBlock::default());
        assert!(matches!(
            encode(&m, LinkWidth::W64),
            Err(CodecError::UnexpectedDataBlock(_))
        ));
        let mut d = data_response();
        d.data = None;
        assert!(matches!(
            encode(&d, LinkWidth::W64),
            Err(CodecError::MissingDataBlock(_))
        ));
    }

    #[test]
    fn undefined_type_encodes_as_control() {
        let mut m = gets();
        m.msg_type = TypeCode(30);
        let s = encode(&m, LinkWidth::W64).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(decode(&s).unwrap().msg_type, TypeCode(30));
    }

    #[test]
    fn missing_address_flit_is_malformed() {
        let mut s = encode(&gets(), LinkWidth::W64).unwrap();
        s.flits.truncate(1);
        s.flits[0].position = FlitPosition::HeadTail;
        assert!(matches!(decode(&s), Err(CodecError::MalformedStream(_))));
    }

    #[test]
    fn short_data_stream_is_malformed() {
        let s = encode(&data_response(), LinkWidth::W64).unwrap();
        let short = stream_from_payloads(LinkWidth::W64, &s.payloads().take(7).collect::<Vec<_>>());
        assert!(matches!(decode(&short), Err(CodecError::MalformedStream(_))));
    }

    #[test]
    fn reserved_bits_are_malformed() {
        let s = encode(&gets(), LinkWidth::W64).unwrap();
        let mut payloads: Vec<u128> = s.payloads().collect();
        payloads[0] |= 1 << 40;
        let garbled = stream_from_payloads(LinkWidth::W64, &payloads);
        assert!(matches!(decode(&garbled), Err(CodecError::MalformedStream(_))));
    }

    #[test]
    fn extraction_stages() {
        let m = gets();
        let narrow = encode(&m, LinkWidth::W64).unwrap();
        let first = extract_stage(&narrow.flits, LinkWidth::W64, 1);
        assert_eq!(first.msg_type, Some(MessageType::GetS.code()));
        assert_eq!(first.requester, Some(NodeId(3)));
        assert_eq!(first.destination, Some(NodeId::mc(0)));
        assert_eq!(first.vnet, Some(0));
        assert_eq!(first.address, None);
        assert!(!first.is_complete());
        let second = extract_stage(&narrow.flits, LinkWidth::W64, 2);
        assert_eq!(second.address, Some(0x2000_0000));
        assert!(second.is_complete());

        let wide = encode(&m, LinkWidth::W128).unwrap();
        let once = extract_stage(&wide.flits, LinkWidth::W128, 1);
        assert!(once.is_complete());
        assert_eq!(once.address, Some(0x2000_0000));
    }

    #[test]
    fn golden_line_parses_back() {
        let line = golden_line(&data_response(), LinkWidth::W128).unwrap();
        let (w, payloads, text) = parse_golden_line(&line).unwrap();
        assert_eq!(w, LinkWidth::W128);
        assert_eq!(text, data_response().canonical());
        assert_eq!(
            decode(&stream_from_payloads(w, &payloads)).unwrap(),
            data_response()
        );
    }

    fn arb_message() -> impl Strategy<Value = CoherenceMessage> {
        (
            0u8..32,
            any::<u8>(),
            any::<u8>(),
            0u8..4,
            any::<u64>(),
            any::<u8>(),
            any::<bool>(),
            any::<[u64; 8]>(),
        )
            .prop_map(|(code, req, dst, vnet, address, owner, dirty, words)| {
                let msg_type = TypeCode(code);
                CoherenceMessage {
                    msg_type,
                    requester: NodeId(req),
                    destination: NodeId(dst),
                    vnet,
                    address,
                    cur_owner: NodeId(owner),
                    dirty,
                    data: msg_type.carries_data().then_some(DataBlock(words)),
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2048))]

        #[test]
        fn roundtrip_and_flit_count(m in arb_message(), wide in any::<bool>()) {
            let w = if wide { LinkWidth::W128 } else { LinkWidth::W64 };
            let s = encode(&m, w).unwrap();
            let expected = 128usize.div_ceil(w.bits() as usize)
                + if m.data.is_some() { 512usize.div_ceil(w.bits() as usize) } else { 0 };
            prop_assert_eq!(s.len(), expected);
            prop_assert_eq!(decode(&s).unwrap(), m);
        }
    }
}
