//! Codec round trips over a large random corpus, golden vectors, and
//! hand-assembled header words.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chiplet_sni::codec::{
    decode, encode, parse_golden_line, stream_from_payloads, CoherenceMessage, DataBlock,
    LinkWidth, MessageType, NodeId,
};

mod common;
use common::{golden_path, render_golden};

const CORPUS: usize = 100_000;

fn random_message(rng: &mut ChaCha8Rng) -> CoherenceMessage {
    let kind = MessageType::ALL[rng.gen_range(0..MessageType::ALL.len())];
    CoherenceMessage {
        msg_type: kind.code(),
        requester: NodeId(rng.gen()),
        destination: NodeId(rng.gen()),
        vnet: rng.gen_range(0..4),
        address: rng.gen(),
        cur_owner: NodeId(rng.gen()),
        dirty: rng.gen(),
        data: kind.carries_data().then(|| DataBlock(rng.gen())),
    }
}

#[test]
fn random_corpus_round_trips_at_both_widths() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..CORPUS {
        let msg = random_message(&mut rng);
        for width in [LinkWidth::W64, LinkWidth::W128] {
            let stream = encode(&msg, width).unwrap();
            assert_eq!(stream.len(), width.flits_for(msg.msg_type));
            assert!(stream.payloads().all(|p| p >> (width.bits() - 1) >> 1 == 0));
            assert_eq!(decode(&stream).unwrap(), msg);
        }
    }
}

#[test]
fn hand_assembled_headers() {
    // GETS from core 3 to MC 64 on vnet 0 for line 0x40:
    // type 1 | requester 3 << 5 | destination 64 << 13 = 0x80061.
    let gets = CoherenceMessage::control(MessageType::GetS, NodeId(3), NodeId(64), 0, 0x40);
    let w128: Vec<u128> = encode(&gets, LinkWidth::W128).unwrap().payloads().collect();
    assert_eq!(w128, vec![0x40u128 << 64 | 0x80061]);
    let w64: Vec<u128> = encode(&gets, LinkWidth::W64).unwrap().payloads().collect();
    assert_eq!(w64, vec![0x80061, 0x40]);

    // DATA_EXCLUSIVE from MC 65 to core 17, vnet 2, owner 65, dirty.
    let mut data = CoherenceMessage::control(MessageType::DataExclusive, NodeId(65), NodeId(17), 2, 0xde_adbe_efc0);
    data.cur_owner = NodeId(65);
    data.dirty = true;
    data.data = Some(DataBlock([1, 2, 3, 4, 5, 6, 7, 8]));
    let control: u128 = 15 | 65 << 5 | 17 << 13 | 2 << 21 | 65 << 23 | 1 << 31;
    let w128: Vec<u128> = encode(&data, LinkWidth::W128).unwrap().payloads().collect();
    assert_eq!(
        w128,
        vec![0xde_adbe_efc0_u128 << 64 | control, 2 << 64 | 1, 4 << 64 | 3, 6 << 64 | 5, 8 << 64 | 7]
    );
    let w64: Vec<u128> = encode(&data, LinkWidth::W64).unwrap().payloads().collect();
    assert_eq!(w64, vec![control, 0xde_adbe_efc0, 1, 2, 3, 4, 5, 6, 7, 8]);
}

#[test]
fn control_and_data_flit_counts() {
    for kind in MessageType::ALL {
        let (w64, w128) = if kind.carries_data() { (10, 5) } else { (2, 1) };
        assert_eq!(LinkWidth::W64.flits_for(kind.code()), w64, "{kind}");
        assert_eq!(LinkWidth::W128.flits_for(kind.code()), w128, "{kind}");
    }
}

#[test]
fn golden_vectors_are_byte_identical() {
    let path = golden_path();
    let rendered = render_golden();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &rendered).unwrap();
    }
    let stored = std::fs::read_to_string(&path).unwrap();
    assert_eq!(stored, rendered);
    for line in stored.lines() {
        let (width, payloads, text) = parse_golden_line(line).unwrap();
        let msg = decode(&stream_from_payloads(width, &payloads)).unwrap();
        assert_eq!(msg.canonical(), text);
    }
}
