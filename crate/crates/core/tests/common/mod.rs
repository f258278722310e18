//! Helpers shared by the integration tests.

use std::path::PathBuf;

use chiplet_sni::codec::{golden_line, CoherenceMessage, DataBlock, LinkWidth, MessageType, NodeId, TypeCode};
use chiplet_sni::sni::legality::vnet_of;

pub fn golden_messages() -> Vec<CoherenceMessage> {
    let mut out = Vec::new();
    for (i, kind) in MessageType::ALL.into_iter().enumerate() {
        let i = i as u64;
        let mut m = CoherenceMessage::control(
            kind,
            NodeId(i as u8 * 3 % 64),
            if kind == MessageType::Probe { NodeId::BROADCAST } else { NodeId(64 + (i % 4) as u8) },
            vnet_of(kind),
            0x1000_0000 * (i % 16) + 0x40 * i,
        );
        m.cur_owner = NodeId((i * 7 % 68) as u8);
        m.dirty = i.is_multiple_of(3);
        if kind.carries_data() {
            m.data = Some(DataBlock(std::array::from_fn(|w| (i << 56) | (w as u64 * 0x0101_0101))));
        }
        out.push(m);
    }
    let mut edge = CoherenceMessage::control(MessageType::Nack, NodeId(255), NodeId(254), 3, u64::MAX);
    edge.cur_owner = NodeId(255);
    edge.dirty = true;
    out.push(edge);
    let mut undefined = CoherenceMessage::control(MessageType::GetS, NodeId(0), NodeId(64), 0, 0);
    undefined.msg_type = TypeCode(31);
    out.push(undefined);
    out
}

pub fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/messages.txt")
}

pub fn render_golden() -> String {
    let mut s = String::new();
    for width in [LinkWidth::W64, LinkWidth::W128] {
        for m in golden_messages() {
            s.push_str(&golden_line(&m, width).unwrap());
            s.push('\n');
        }
    }
    s
}
